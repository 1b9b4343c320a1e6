#include <catch2/catch.hpp>

#include "oracles.hpp"
#include "vessl/localize.hpp"
#include "vessl/synth.hpp"

using namespace vessl;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("with no available data the posterior is the prior") {
  const PpamModel m = oracle::make_test_model(4, 2, 8, 1);
  const MatrixXd Y = MatrixXd::Zero(8, 3);
  const MatrixXd chi = MatrixXd::Zero(8, 3);
  const PosteriorGmm g = sparse_posterior(m, oracle::make_obs(Y, chi));
  for (int k = 0; k < 4; ++k) {
    CHECK(g.rho(k) == Approx(0.25).margin(1e-9));
    CHECK((g.m[static_cast<std::size_t>(k)] - m.c[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((g.V[static_cast<std::size_t>(k)] - m.gamma[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() <
          1e-9);
  }
}

TEST_CASE("repeating a frame shrinks the posterior covariance as evidence adds up") {
  const PpamModel m = oracle::make_test_model(3, 2, 10, 2, 10.0, 5.0, 0.6);
  Rng rng(3);
  VectorXd y(10);
  for (int d = 0; d < 10; ++d) y(d) = rng.normal();

  double prev_trace = 1e300;
  for (int T : {1, 2, 4, 8}) {
    MatrixXd Y(10, T), chi = MatrixXd::Ones(10, T);
    for (int t = 0; t < T; ++t) Y.col(t) = y;
    const PosteriorGmm g = sparse_posterior(m, oracle::make_obs(Y, chi));

    // direct matrix-sum reference for the covariance
    for (int k = 0; k < 3; ++k) {
      MatrixXd prec = m.gamma[static_cast<std::size_t>(k)].inverse();
      for (int d = 0; d < 10; ++d) {
        const VectorXd a = m.A[static_cast<std::size_t>(k)].row(d).transpose();
        prec += T / m.sigma2(d) * a * a.transpose();
      }
      CHECK((g.V[static_cast<std::size_t>(k)] - prec.inverse()).cwiseAbs().maxCoeff() < 1e-9);
    }

    double tr = 0.0;
    for (int k = 0; k < 3; ++k) tr += g.rho(k) * g.V[static_cast<std::size_t>(k)].trace();
    CHECK(tr < prev_trace);
    prev_trace = tr;
  }
}

TEST_CASE("a noiseless complete observation localizes its source") {
  PpamModel m = oracle::make_test_model(5, 2, 20, 4, 30.0, 12.0, 1.0);
  m.sigma2.setConstant(1e-4);
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const TrainingSet one = sample_ppam(m, 1, 100 + trial);
    // regenerate the exact noiseless observation for the drawn position
    const VectorXd x = one.X.row(0).transpose();
    const EStepResult es = e_step(m, one.X, one.Y);
    int z = 0;
    es.resp.r.col(0).maxCoeff(&z);
    const VectorXd y = m.A[static_cast<std::size_t>(z)] * x + m.b[static_cast<std::size_t>(z)];

    const LocalizeResult res =
        localize_point(m, oracle::make_obs(y, MatrixXd::Ones(20, 1)));
    CHECK((res.x_hat - x).cwiseAbs().maxCoeff() < 1e-3);
  }
}

TEST_CASE("error degrades gracefully as availability drops") {
  const PpamModel m = oracle::make_test_model(5, 2, 24, 6, 30.0, 12.0, 0.8);
  Rng rng(7);
  const int T = 12;
  const std::vector<double> avail_levels = {1.0, 0.5, 0.15};
  std::vector<double> rmse;
  for (double level : avail_levels) {
    double se = 0.0;
    int count = 0;
    for (int trial = 0; trial < 150; ++trial) {
      const TrainingSet one = sample_ppam(m, 1, 1000 + trial);
      const VectorXd x = one.X.row(0).transpose();
      const EStepResult es = e_step(m, one.X, one.Y);
      int z = 0;
      es.resp.r.col(0).maxCoeff(&z);
      // same position for every frame, fresh noise and a fresh mask per frame
      MatrixXd Y(24, T), chi(24, T);
      for (int t = 0; t < T; ++t) {
        VectorXd y = m.A[static_cast<std::size_t>(z)] * x + m.b[static_cast<std::size_t>(z)];
        for (int d = 0; d < 24; ++d) {
          y(d) += std::sqrt(m.sigma2(d)) * rng.normal();
          chi(d, t) = rng.uniform() < level ? 1.0 : 0.0;
        }
        Y.col(t) = y;
      }
      const LocalizeResult res = localize_point(m, oracle::make_obs(Y, chi));
      se += (res.x_hat - x).squaredNorm();
      ++count;
    }
    rmse.push_back(std::sqrt(se / count));
  }
  CHECK(rmse[0] <= rmse[1] + 1e-9);
  CHECK(rmse[1] <= rmse[2] + 1e-9);
}

TEST_CASE("posterior weights always sum to one") {
  const PpamModel m = oracle::make_test_model(7, 2, 16, 8);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    MatrixXd Y(16, 4), chi(16, 4);
    for (int d = 0; d < 16; ++d)
      for (int t = 0; t < 4; ++t) {
        Y(d, t) = rng.normal() * 3.0;
        chi(d, t) = rng.uniform() < 0.6 ? 1.0 : 0.0;
      }
    const PosteriorGmm g = sparse_posterior(m, oracle::make_obs(Y, chi));
    CHECK(g.rho.sum() == Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("the posterior is invariant to frame order and dimension relabeling") {
  const PpamModel m = oracle::make_test_model(3, 2, 10, 10);
  Rng rng(11);
  MatrixXd Y(10, 6), chi(10, 6);
  for (int d = 0; d < 10; ++d)
    for (int t = 0; t < 6; ++t) {
      Y(d, t) = rng.normal();
      chi(d, t) = rng.uniform() < 0.7 ? 1.0 : 0.0;
    }
  const PosteriorGmm base = sparse_posterior(m, oracle::make_obs(Y, chi));

  // shuffled frames
  std::vector<int> order = {3, 0, 5, 1, 4, 2};
  MatrixXd Y2(10, 6), chi2(10, 6);
  for (int t = 0; t < 6; ++t) {
    Y2.col(t) = Y.col(order[static_cast<std::size_t>(t)]);
    chi2.col(t) = chi.col(order[static_cast<std::size_t>(t)]);
  }
  const PosteriorGmm shuffled = sparse_posterior(m, oracle::make_obs(Y2, chi2));
  for (int k = 0; k < 3; ++k) {
    CHECK(std::abs(base.rho(k) - shuffled.rho(k)) < 1e-12);
    CHECK((base.m[static_cast<std::size_t>(k)] - shuffled.m[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() <
          1e-12);
  }

  // permuted dimensions, model permuted the same way
  std::vector<int> dperm(10);
  std::iota(dperm.begin(), dperm.end(), 0);
  Rng prng(12);
  prng.shuffle(dperm);
  PpamModel mp = m;
  MatrixXd Y3(10, 6), chi3(10, 6);
  for (int d = 0; d < 10; ++d) {
    Y3.row(d) = Y.row(dperm[static_cast<std::size_t>(d)]);
    chi3.row(d) = chi.row(dperm[static_cast<std::size_t>(d)]);
    mp.sigma2(d) = m.sigma2(dperm[static_cast<std::size_t>(d)]);
    for (int k = 0; k < 3; ++k) {
      mp.A[static_cast<std::size_t>(k)].row(d) =
          m.A[static_cast<std::size_t>(k)].row(dperm[static_cast<std::size_t>(d)]);
      mp.b[static_cast<std::size_t>(k)](d) = m.b[static_cast<std::size_t>(k)](dperm[static_cast<std::size_t>(d)]);
    }
  }
  const PosteriorGmm relabeled = sparse_posterior(mp, oracle::make_obs(Y3, chi3));
  for (int k = 0; k < 3; ++k) {
    CHECK(std::abs(base.rho(k) - relabeled.rho(k)) < 1e-9);
    CHECK((base.m[static_cast<std::size_t>(k)] - relabeled.m[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() <
          1e-9);
  }
}

TEST_CASE("joint processing equals sequential Bayesian updating") {
  const PpamModel m = oracle::make_test_model(3, 2, 8, 13);
  Rng rng(14);
  MatrixXd Ya(8, 3), chia(8, 3), Yb(8, 2), chib(8, 2);
  for (int d = 0; d < 8; ++d) {
    for (int t = 0; t < 3; ++t) {
      Ya(d, t) = rng.normal();
      chia(d, t) = rng.uniform() < 0.8 ? 1.0 : 0.0;
    }
    for (int t = 0; t < 2; ++t) {
      Yb(d, t) = rng.normal();
      chib(d, t) = rng.uniform() < 0.8 ? 1.0 : 0.0;
    }
  }
  MatrixXd Yab(8, 5), chiab(8, 5);
  Yab << Ya, Yb;
  chiab << chia, chib;

  const PosteriorGmm ga = sparse_posterior(m, oracle::make_obs(Ya, chia));
  const PosteriorGmm gb = sparse_posterior(m, oracle::make_obs(Yb, chib));
  const PosteriorGmm gab = sparse_posterior(m, oracle::make_obs(Yab, chiab));

  // precision contributions add; the prior enters exactly once
  for (int k = 0; k < 3; ++k) {
    const MatrixXd pa = ga.V[static_cast<std::size_t>(k)].inverse();
    const MatrixXd pb = gb.V[static_cast<std::size_t>(k)].inverse();
    const MatrixXd pab = gab.V[static_cast<std::size_t>(k)].inverse();
    const MatrixXd prior = m.gamma[static_cast<std::size_t>(k)].inverse();
    CHECK((pab - (pa + pb - prior)).cwiseAbs().maxCoeff() < 1e-9);
  }
}
