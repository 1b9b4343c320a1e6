#include <catch2/catch.hpp>

#include "oracles.hpp"
#include "vessl/localize.hpp"
#include "vessl/ppam.hpp"
#include "vessl/synth.hpp"

using namespace vessl;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("e_step with one component returns certainty") {
  const PpamModel m = oracle::make_test_model(1, 2, 4, 1);
  const TrainingSet ts = sample_ppam(m, 20, 2);
  const EStepResult es = e_step(m, ts.X, ts.Y);
  CHECK((es.resp.r.array() - 1.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("a symmetric two-component model splits an equidistant point evenly") {
  PpamModel m;
  m.c = {VectorXd::Constant(2, -1.0), VectorXd::Constant(2, 1.0)};
  m.gamma = {MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2)};
  m.A = {MatrixXd::Zero(3, 2), MatrixXd::Zero(3, 2)};
  m.b = {VectorXd::Zero(3), VectorXd::Zero(3)};
  m.sigma2 = VectorXd::Ones(3);
  MatrixXd X = MatrixXd::Zero(1, 2);
  MatrixXd Y = MatrixXd::Zero(1, 3);
  const EStepResult es = e_step(m, X, Y);
  CHECK(es.resp.r(0, 0) == Approx(0.5).margin(1e-12));
  CHECK(es.resp.r(1, 0) == Approx(0.5).margin(1e-12));
}

TEST_CASE("e_step matches the direct density product on a tiny instance") {
  const PpamModel m = oracle::make_test_model(3, 2, 4, 3, 5.0, 2.0, 0.8);
  const TrainingSet ts = sample_ppam(m, 5, 4);
  const EStepResult es = e_step(m, ts.X, ts.Y);

  for (int n = 0; n < 5; ++n) {
    std::vector<double> p(3);
    double total = 0.0;
    for (int k = 0; k < 3; ++k) {
      const VectorXd x = ts.X.row(n).transpose();
      const VectorXd y = ts.Y.row(n).transpose();
      const VectorXd mean_y = m.A[static_cast<std::size_t>(k)] * x + m.b[static_cast<std::size_t>(k)];
      p[static_cast<std::size_t>(k)] =
          (1.0 / 3.0) * oracle::gauss_pdf(x, m.c[static_cast<std::size_t>(k)], m.gamma[static_cast<std::size_t>(k)]) *
          oracle::gauss_pdf_diag(y, mean_y, m.sigma2);
      total += p[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < 3; ++k)
      CHECK(es.resp.r(k, n) == Approx(p[static_cast<std::size_t>(k)] / total).margin(1e-12));
  }
}

TEST_CASE("m_step keeps the region volumes exactly equal") {
  Rng rng(5);
  const int K = 4, N = 200;
  MatrixXd X(N, 2), Y(N, 6);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < 2; ++j) X(i, j) = rng.uniform(-30.0, 30.0);
    for (int j = 0; j < 6; ++j) Y(i, j) = rng.normal();
  }
  Responsibilities r;
  r.r.resize(K, N);
  for (int n = 0; n < N; ++n) {
    for (int k = 0; k < K; ++k) r.r(k, n) = std::exp(rng.normal());
    r.r.col(n) /= r.r.col(n).sum();
  }
  const MStepResult ms = m_step(r, X, Y);
  std::vector<double> dets;
  for (const auto& g : ms.model.gamma) dets.push_back(g.determinant());
  const double d0 = dets[0];
  for (double d : dets) CHECK(std::abs(d - d0) / std::abs(d0) < 1e-8);
}

TEST_CASE("exact affine data is recovered exactly with one component") {
  Rng rng(6);
  const int N = 50, D = 5;
  MatrixXd X(N, 2), A(D, 2);
  VectorXd b(D);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < 2; ++j) X(i, j) = rng.uniform(-10.0, 10.0);
  for (int i = 0; i < D; ++i) {
    for (int j = 0; j < 2; ++j) A(i, j) = rng.normal();
    b(i) = rng.normal();
  }
  const MatrixXd Y = X * A.transpose() + MatrixXd::Ones(N, 1) * b.transpose();

  Responsibilities r;
  r.r = MatrixXd::Ones(1, N);
  MStepOptions opts;
  opts.sigma2_floor = 1e-16;  // expose the raw estimate below the default floor
  const MStepResult ms = m_step(r, X, Y, opts);
  CHECK((ms.model.A[0] - A).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((ms.model.b[0] - b).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(ms.model.sigma2.maxCoeff() < 1e-12);
}

// Each update block against an independent numerical minimization of the
// objective that block optimizes, with the other blocks fixed. The noise
// update averages the K per-component weighted residual moments with equal
// weights, so its objective carries the same equal component weighting.
TEST_CASE("m_step blocks match independent numerical minimizers") {
  Rng rng(7);
  const int K = 2, L = 2, D = 3, N = 40;
  MatrixXd X(N, L), Y(N, D);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < L; ++j) X(i, j) = rng.uniform(-5.0, 5.0);
    for (int j = 0; j < D; ++j) Y(i, j) = rng.normal() * 2.0;
  }
  Responsibilities r;
  r.r.resize(K, N);
  for (int n = 0; n < N; ++n) {
    r.r(0, n) = rng.uniform(0.05, 0.95);
    r.r(1, n) = 1.0 - r.r(0, n);
  }
  MStepOptions opts;
  opts.sigma2_floor = 1e-16;
  opts.gamma_rel_floor = 0.0;
  const MStepResult ms = m_step(r, X, Y, opts);
  const PpamModel& m = ms.model;
  const VectorXd mass = r.r.rowwise().sum();

  SECTION("region centers minimize the weighted Mahalanobis moment") {
    for (int k = 0; k < K; ++k) {
      const MatrixXd Ginv = m.gamma[static_cast<std::size_t>(k)].inverse();
      auto f = [&](const VectorXd& c) {
        double q = 0.0;
        for (int n = 0; n < N; ++n) {
          const VectorXd d = X.row(n).transpose() - c;
          q += r.r(k, n) * 0.5 * d.dot(Ginv * d);
        }
        return q;
      };
      const VectorXd c_num = oracle::nelder_mead(f, VectorXd::Zero(L), 1.0);
      CHECK((c_num - m.c[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() < 1e-5);
      CHECK(f(m.c[static_cast<std::size_t>(k)]) <= f(c_num) + 1e-9);
    }
  }

  SECTION("region shapes minimize the constrained Gaussian objective") {
    // parameterization: per component a unit-determinant Cholesky factor
    // (2 free parameters at L=2), one shared log-volume
    auto unpack = [&](const VectorXd& p, int k) {
      const double l11 = std::exp(p(2 * k));
      const double l21 = p(2 * k + 1);
      MatrixXd Lk(2, 2);
      Lk << l11, 0.0, l21, 1.0 / l11;
      return MatrixXd(std::exp(p(2 * K)) * Lk * Lk.transpose());
    };
    auto f = [&](const VectorXd& p) {
      double q = 0.0;
      for (int k = 0; k < K; ++k) {
        const MatrixXd G = unpack(p, k);
        const MatrixXd Gi = G.inverse();
        const double ld = std::log(G.determinant());
        for (int n = 0; n < N; ++n) {
          const VectorXd d = X.row(n).transpose() - m.c[static_cast<std::size_t>(k)];
          q += r.r(k, n) * 0.5 * (ld + d.dot(Gi * d));
        }
      }
      return q;
    };
    VectorXd p0 = VectorXd::Zero(2 * K + 1);
    p0(2 * K) = std::log(X.array().square().mean());
    const VectorXd p_num = oracle::nelder_mead(f, p0, 0.3, 60000, 1e-16);

    VectorXd p_closed(2 * K + 1);
    p_closed(2 * K) = 0.5 * std::log(m.gamma[0].determinant());
    for (int k = 0; k < K; ++k) {
      const MatrixXd U = m.gamma[static_cast<std::size_t>(k)] /
                         std::sqrt(m.gamma[static_cast<std::size_t>(k)].determinant());
      const Eigen::LLT<MatrixXd> llt(U);
      const MatrixXd Lk = llt.matrixL();
      p_closed(2 * k) = std::log(Lk(0, 0));
      p_closed(2 * k + 1) = Lk(1, 0);
    }
    CHECK(f(p_closed) <= f(p_num) + 1e-6);
    CHECK(std::abs(f(p_closed) - f(p_num)) < 1e-6);
  }

  SECTION("affine maps match a generic least-squares solve") {
    for (int k = 0; k < K; ++k) {
      MatrixXd design(N, L + 1);
      for (int n = 0; n < N; ++n) {
        const double w = std::sqrt(r.r(k, n));
        design.row(n).head(L) = w * X.row(n);
        design(n, L) = w;
      }
      for (int d = 0; d < D; ++d) {
        VectorXd target(N);
        for (int n = 0; n < N; ++n) target(n) = std::sqrt(r.r(k, n)) * Y(n, d);
        const VectorXd sol = design.colPivHouseholderQr().solve(target);
        for (int j = 0; j < L; ++j)
          CHECK(sol(j) == Approx(m.A[static_cast<std::size_t>(k)](d, j)).margin(1e-6));
        CHECK(sol(L) == Approx(m.b[static_cast<std::size_t>(k)](d)).margin(1e-6));
      }
    }
  }

  SECTION("default noise variances minimize the expected complete-data objective") {
    for (int d = 0; d < D; ++d) {
      auto f = [&](double log_s2) {
        const double s2 = std::exp(log_s2);
        double q = 0.0;
        for (int k = 0; k < K; ++k)
          for (int n = 0; n < N; ++n) {
            const double resid = Y(n, d) -
                                 m.A[static_cast<std::size_t>(k)].row(d).dot(X.row(n)) -
                                 m.b[static_cast<std::size_t>(k)](d);
            q += r.r(k, n) * (0.5 * std::log(s2) + resid * resid / (2.0 * s2));
          }
        return q;
      };
      const double s2_num = std::exp(oracle::golden_section(f, -20.0, 10.0, 300));
      CHECK(s2_num == Approx(m.sigma2(d)).epsilon(1e-6));
    }
  }

  SECTION("the published variant minimizes the equally weighted residual objective") {
    MStepOptions printed = opts;
    printed.sigma_update = SigmaUpdate::equal_component;
    const PpamModel mp = m_step(r, X, Y, printed).model;
    for (int d = 0; d < D; ++d) {
      auto f = [&](double log_s2) {
        const double s2 = std::exp(log_s2);
        double q = 0.0;
        for (int k = 0; k < K; ++k) {
          double acc = 0.0;
          for (int n = 0; n < N; ++n) {
            const double resid = Y(n, d) -
                                 mp.A[static_cast<std::size_t>(k)].row(d).dot(X.row(n)) -
                                 mp.b[static_cast<std::size_t>(k)](d);
            acc += r.r(k, n) * (0.5 * std::log(s2) + resid * resid / (2.0 * s2));
          }
          q += acc / mass(k);
        }
        return q;
      };
      const double s2_num = std::exp(oracle::golden_section(f, -20.0, 10.0, 300));
      CHECK(s2_num == Approx(mp.sigma2(d)).epsilon(1e-6));
    }
  }
}

TEST_CASE("training recovers a sampled model well enough to invert") {
  const PpamModel truth = oracle::make_test_model(5, 2, 20, 8, 40.0, 15.0, 0.4);
  const TrainingSet ts = sample_ppam(truth, 2000, 9);
  const TrainingSet held = sample_ppam(truth, 400, 10);

  TrainOptions opts;
  opts.seed = 11;
  const TrainResult res = train(ts.X, ts.Y, 5, opts);

  for (std::size_t i = 1; i < res.trace.size(); ++i)
    CHECK(res.trace[i] >= res.trace[i - 1] - 1e-8);

  const InverseParams inv_t = invert_params(truth);
  const InverseParams inv_m = invert_params(res.model);
  double se_t = 0.0, se_m = 0.0;
  for (int n = 0; n < held.X.rows(); ++n) {
    const VectorXd y = held.Y.row(n).transpose();
    const VectorXd x = held.X.row(n).transpose();
    se_t += (inverse_map(truth, inv_t, y) - x).squaredNorm();
    se_m += (inverse_map(res.model, inv_m, y) - x).squaredNorm();
  }
  const double rmse_t = std::sqrt(se_t / held.X.rows());
  const double rmse_m = std::sqrt(se_m / held.X.rows());
  CHECK(rmse_m <= 2.0 * rmse_t);
}

TEST_CASE("infeasible component counts are reduced") {
  const PpamModel truth = oracle::make_test_model(2, 2, 4, 12);
  const TrainingSet ts = sample_ppam(truth, 30, 13);
  TrainOptions opts;
  opts.max_iter = 20;
  const TrainResult res = train(ts.X, ts.Y, 20, opts);
  CHECK(res.model.K() <= 10);  // 30 samples / (L+1)
}

TEST_CASE("inversion with a zero slope returns the prior pieces") {
  PpamModel m = oracle::make_test_model(2, 2, 4, 14);
  for (auto& A : m.A) A.setZero();
  const InverseParams inv = invert_params(m);
  for (int k = 0; k < 2; ++k) {
    CHECK((inv.gamma_star(k, m) - MatrixXd(m.sigma2.asDiagonal())).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(inv.A_star[static_cast<std::size_t>(k)].cwiseAbs().maxCoeff() < 1e-12);
    CHECK((inv.b_star[static_cast<std::size_t>(k)] - m.c[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() <
          1e-9);
    CHECK((inv.c_star[static_cast<std::size_t>(k)] - m.b[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("scalar inversion matches hand-derived Gaussian conditioning") {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const double c = rng.uniform(-2.0, 2.0);
    const double g = std::exp(rng.uniform(-1.0, 1.0));
    const double a = rng.uniform(-2.0, 2.0);
    const double b = rng.uniform(-1.0, 1.0);
    const double s2 = std::exp(rng.uniform(-2.0, 0.0));

    PpamModel m;
    m.c = {VectorXd::Constant(1, c)};
    m.gamma = {MatrixXd::Constant(1, 1, g)};
    m.A = {MatrixXd::Constant(1, 1, a)};
    m.b = {VectorXd::Constant(1, b)};
    m.sigma2 = VectorXd::Constant(1, s2);

    const InverseParams inv = invert_params(m);
    const double v_post = 1.0 / (1.0 / g + a * a / s2);
    CHECK(inv.sigma_star[0](0, 0) == Approx(v_post).epsilon(1e-12));
    CHECK(inv.A_star[0](0, 0) == Approx(v_post * a / s2).epsilon(1e-12));
    CHECK(inv.b_star[0](0) == Approx(v_post * (c / g - a * b / s2)).epsilon(1e-12));
    CHECK(inv.c_star[0](0) == Approx(a * c + b).epsilon(1e-12));
    CHECK(inv.gamma_star(0, m)(0, 0) == Approx(s2 + a * a * g).epsilon(1e-12));

    // posterior mean/variance against grid quadrature of p(x) p(y|x)
    const double y = rng.uniform(-3.0, 3.0);
    const PosteriorGmm post = inverse_density(m, VectorXd::Constant(1, y));
    double z = 0.0, m1 = 0.0, m2 = 0.0;
    const double span = 10.0 * std::sqrt(g);
    const int steps = 20000;
    for (int i = 0; i < steps; ++i) {
      const double x = c - span + 2.0 * span * i / (steps - 1);
      const double p = std::exp(-0.5 * (x - c) * (x - c) / g) *
                       std::exp(-0.5 * (y - a * x - b) * (y - a * x - b) / s2);
      z += p;
      m1 += p * x;
      m2 += p * x * x;
    }
    m1 /= z;
    m2 = m2 / z - m1 * m1;
    CHECK(post.m[0](0) == Approx(m1).margin(1e-6));
    CHECK(post.V[0](0, 0) == Approx(m2).margin(1e-6));
  }
}

TEST_CASE("inverse noise covariances are positive definite") {
  const PpamModel m = oracle::make_test_model(6, 2, 15, 16);
  const InverseParams inv = invert_params(m);
  for (const auto& S : inv.sigma_star) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("forward density weights form a simplex and isolate near centroids") {
  const PpamModel m = oracle::make_test_model(4, 2, 6, 17, 50.0, 5.0);
  const ForwardGmm g = forward_density(m, m.c[2]);
  CHECK(g.weights.sum() == Approx(1.0).margin(1e-12));
  CHECK(g.weights(2) > 0.99);
}

TEST_CASE("forward map of a single component is the affine transform") {
  const PpamModel m = oracle::make_test_model(1, 2, 5, 18);
  VectorXd x(2);
  x << 3.0, -4.0;
  const VectorXd y = forward_map(m, x);
  CHECK((y - (m.A[0] * x + m.b[0])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("inverse map undoes the forward map when noise is negligible") {
  PpamModel m = oracle::make_test_model(1, 2, 8, 19);
  m.sigma2.setConstant(1e-6);
  VectorXd x(2);
  x << 1.5, -2.5;
  const VectorXd y = m.A[0] * x + m.b[0];
  CHECK((inverse_map(m, y) - x).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("forward/inverse round trip stays near the input on a smooth model") {
  // 4x4 linearization grid with 25-unit cells
  const PpamModel m = oracle::make_smooth_model(4, 12, 20, 50.0, 0.2);
  const InverseParams inv = invert_params(m);
  Rng rng(21);
  double worst = 0.0;
  for (int i = 0; i < 30; ++i) {
    VectorXd x(2);
    x << rng.uniform(-45.0, 45.0), rng.uniform(-45.0, 45.0);
    const VectorXd y = forward_map(m, x);
    worst = std::max(worst, (inverse_map(m, inv, y) - x).norm());
  }
  CHECK(worst < 12.5);  // below the half cell of the linearization grid
}

TEST_CASE("the T=1 sparse posterior coincides with the inverse density") {
  const PpamModel m = oracle::make_test_model(5, 2, 12, 22, 5.0, 2.0, 0.7);
  Rng rng(23);
  VectorXd y(12);
  for (int d = 0; d < 12; ++d) y(d) = rng.normal();

  const PosteriorGmm a = inverse_density(m, y);
  MatrixXd chi = MatrixXd::Ones(12, 1);
  const PosteriorGmm b = sparse_posterior(m, oracle::make_obs(y, chi));
  for (int k = 0; k < m.K(); ++k) {
    CHECK(std::abs(a.rho(k) - b.rho(k)) < 1e-9);
    CHECK((a.m[static_cast<std::size_t>(k)] - b.m[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((a.V[static_cast<std::size_t>(k)] - b.V[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("parameter counts for the two learning directions") {
  CHECK(param_count(1, 512, 2, MappingDirection::low_to_high) == 2055);
  CHECK(param_count(7, 512, 2, MappingDirection::low_to_high) == 7 * 2055);
  CHECK(param_count(1, 512, 2, MappingDirection::high_to_low) == 263685);
  const double ratio = 263685.0 / 2055.0;
  CHECK(ratio > 125.0);
  CHECK(ratio < 132.0);
  // symmetric when the two dimensions coincide
  CHECK(param_count(3, 7, 7, MappingDirection::low_to_high) ==
        param_count(3, 7, 7, MappingDirection::high_to_low));
}

TEST_CASE("region argmax is the Mahalanobis Voronoi assignment") {
  Rng rng(24);
  const int K = 6;
  const PpamModel m = oracle::make_test_model(K, 2, 4, 25, 40.0, 10.0);
  for (int i = 0; i < 200; ++i) {
    VectorXd x(2);
    x << rng.uniform(-60.0, 60.0), rng.uniform(-60.0, 60.0);
    int best_density = 0, best_mahal = 0;
    double bd = -1e300, bm = 1e300;
    for (int k = 0; k < K; ++k) {
      const double p = oracle::gauss_pdf(x, m.c[static_cast<std::size_t>(k)], m.gamma[static_cast<std::size_t>(k)]);
      const VectorXd d = x - m.c[static_cast<std::size_t>(k)];
      const double q = d.dot(m.gamma[static_cast<std::size_t>(k)].inverse() * d);
      if (p > bd) {
        bd = p;
        best_density = k;
      }
      if (q < bm) {
        bm = q;
        best_mahal = k;
      }
    }
    CHECK(best_density == best_mahal);
  }
}

TEST_CASE("the posterior concentrates around the generating position") {
  const PpamModel m = oracle::make_test_model(4, 2, 10, 26, 30.0, 12.0, 0.5);
  const InverseParams inv = invert_params(m);
  Rng rng(27);
  const TrainingSet s = sample_ppam(m, 500, 28);
  double mean_true = 0.0, mean_rand = 0.0;
  for (int n = 0; n < 500; ++n) {
    const PosteriorGmm post = inverse_density(m, inv, s.Y.row(n).transpose());
    VectorXd xr(2);
    xr << rng.uniform(-60.0, 60.0), rng.uniform(-60.0, 60.0);
    mean_true += oracle::gmm_pdf(post, s.X.row(n).transpose());
    mean_rand += oracle::gmm_pdf(post, xr);
  }
  CHECK(mean_true > mean_rand);
}

TEST_CASE("initial responsibilities separate well-separated clusters") {
  Rng rng(29);
  const int N = 100;
  MatrixXd X(N, 2), Y(N, 3);
  for (int n = 0; n < N; ++n) {
    const double cx = n < N / 2 ? -10.0 : 10.0;
    X(n, 0) = cx + rng.normal();
    X(n, 1) = rng.normal();
    for (int d = 0; d < 3; ++d) Y(n, d) = rng.normal();
  }
  const Responsibilities r = init_responsibilities(X, Y, 2, InitStrategy::gmm_x, 5);
  // one of the two labelings must put nearly all mass on its own cluster
  double mass00 = 0.0, mass10 = 0.0;
  for (int n = 0; n < N / 2; ++n) {
    mass00 += r.r(0, n);
    mass10 += r.r(1, n);
  }
  const double frac = std::max(mass00, mass10) / (N / 2);
  CHECK(frac > 0.99);

  const Responsibilities again = init_responsibilities(X, Y, 2, InitStrategy::gmm_x, 5);
  CHECK((r.r - again.r).cwiseAbs().maxCoeff() == 0.0);

  const Responsibilities one = init_responsibilities(X, Y, 1, InitStrategy::gmm_joint, 5);
  CHECK((one.r.array() - 1.0).abs().maxCoeff() == 0.0);
}
