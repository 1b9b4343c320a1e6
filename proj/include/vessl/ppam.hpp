#ifndef VESSL_PPAM_HPP
#define VESSL_PPAM_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vessl/common.hpp"

namespace vessl {

// Piecewise-affine probabilistic map between a low-dimensional space (source
// directions, dimension L) and a high-dimensional cue space (dimension D).
// Each of the K components pairs a Gaussian region N(c_k, Gamma_k) in
// direction space with an affine transform y = A_k x + b_k + noise.
// Mixture weights are tied to 1/K and the region covariances share a common
// determinant, so the regions form a Mahalanobis Voronoi partition.
struct PpamModel {
  std::vector<Eigen::VectorXd> c;      // K x L
  std::vector<Eigen::MatrixXd> gamma;  // K x (L x L), SPD, equal determinants
  std::vector<Eigen::MatrixXd> A;      // K x (D x L)
  std::vector<Eigen::VectorXd> b;      // K x D
  Eigen::VectorXd sigma2;              // D, shared diagonal noise

  int K() const { return static_cast<int>(c.size()); }
  int L() const { return c.empty() ? 0 : static_cast<int>(c[0].size()); }
  int D() const { return static_cast<int>(sigma2.size()); }
  double log_pi() const { return -std::log(static_cast<double>(K())); }

  void validate() const {
    if (c.empty()) throw Error(ErrorCategory::bad_args, "model has no components");
    const int k = K(), l = L(), d = D();
    if (static_cast<int>(gamma.size()) != k || static_cast<int>(A.size()) != k ||
        static_cast<int>(b.size()) != k)
      throw Error(ErrorCategory::shape_mismatch, "inconsistent component counts");
    for (int i = 0; i < k; ++i)
      if (gamma[i].rows() != l || gamma[i].cols() != l || A[i].rows() != d ||
          A[i].cols() != l || b[i].size() != d)
        throw Error(ErrorCategory::shape_mismatch, "inconsistent component shapes");
    if ((sigma2.array() <= 0.0).any())
      throw Error(ErrorCategory::numeric_error, "noise variances must be positive");
  }
};

struct TrainingSet {
  Eigen::MatrixXd X;  // N x L
  Eigen::MatrixXd Y;  // N x D
};

namespace detail {

inline double log_gauss_full(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                             const Eigen::LLT<Eigen::MatrixXd>& llt, double logdet) {
  const Eigen::VectorXd d = x - mean;
  const Eigen::VectorXd s = llt.matrixL().solve(d);
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * M_PI) + logdet +
                 s.squaredNorm());
}

inline double logdet_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// eigenvalue floor keeps covariances SPD without moving healthy ones
inline Eigen::MatrixXd floor_spd(const Eigen::MatrixXd& S, double rel_floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  const double tr = std::max(es.eigenvalues().cwiseMax(0.0).sum(), 0.0);
  const double floor = rel_floor * std::max(tr / static_cast<double>(S.rows()), 1e-300);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

struct Responsibilities {
  Eigen::MatrixXd r;  // K x N, columns on the simplex
};

struct EStepResult {
  Responsibilities resp;
  double log_likelihood = 0.0;
};

// Posteriors r_kn of the component assignment given both spaces, in the log
// domain. Also reports the observed-data log-likelihood of the model.
inline EStepResult e_step(const PpamModel& model, const Eigen::MatrixXd& X,
                          const Eigen::MatrixXd& Y, unsigned threads = 1) {
  model.validate();
  const int K = model.K(), L = model.L(), D = model.D();
  const int N = static_cast<int>(X.rows());
  if (X.cols() != L || Y.cols() != D || Y.rows() != N)
    throw Error(ErrorCategory::shape_mismatch, "training data does not match model dims");

  const double logdet_sigma = model.sigma2.array().log().sum();
  const Eigen::ArrayXd inv_sigma2 = model.sigma2.array().inverse();
  const double const_y = -0.5 * (D * std::log(2.0 * M_PI) + logdet_sigma);
  const double const_x = -0.5 * L * std::log(2.0 * M_PI);

  std::vector<Eigen::LLT<Eigen::MatrixXd>> llts(static_cast<std::size_t>(K));
  Eigen::VectorXd logdet_gamma(K);
  for (int k = 0; k < K; ++k) {
    llts[static_cast<std::size_t>(k)].compute(model.gamma[static_cast<std::size_t>(k)]);
    if (llts[static_cast<std::size_t>(k)].info() != Eigen::Success)
      throw Error(ErrorCategory::numeric_error, "Gamma_" + std::to_string(k) + " not SPD");
    logdet_gamma(k) = detail::logdet_llt(llts[static_cast<std::size_t>(k)]);
  }

  // chunk over samples so Y streams from memory once per call, with the
  // component loop running against a cache-resident block
  Eigen::MatrixXd logp(K, N);
  constexpr int kChunk = 256;
  const std::size_t n_chunks = static_cast<std::size_t>((N + kChunk - 1) / kChunk);
  parallel_for(n_chunks, threads, [&](std::size_t chunk) {
    const int n0 = static_cast<int>(chunk) * kChunk;
    const int nc = std::min(kChunk, N - n0);
    const auto Xc = X.middleRows(n0, nc);
    const auto Yc = Y.middleRows(n0, nc);
    Eigen::MatrixXd resid(nc, D);
    for (int k = 0; k < K; ++k) {
      resid.noalias() = Yc - Xc * model.A[static_cast<std::size_t>(k)].transpose();
      resid.rowwise() -= model.b[static_cast<std::size_t>(k)].transpose();
      const Eigen::VectorXd quad_y =
          (resid.array().square().rowwise() * inv_sigma2.transpose()).rowwise().sum();

      Eigen::MatrixXd dx = Xc.rowwise() - model.c[static_cast<std::size_t>(k)].transpose();
      const Eigen::MatrixXd sx =
          llts[static_cast<std::size_t>(k)].matrixL().solve(dx.transpose());
      const Eigen::VectorXd quad_x = sx.colwise().squaredNorm();

      for (int i = 0; i < nc; ++i)
        logp(k, n0 + i) = model.log_pi() + const_x - 0.5 * (logdet_gamma(k) + quad_x(i)) +
                          const_y - 0.5 * quad_y(i);
    }
  });

  EStepResult out;
  out.resp.r.resize(K, N);
  double ll = 0.0;
  for (int n = 0; n < N; ++n) {
    const double lse = log_sum_exp(logp.col(n).data(), static_cast<std::size_t>(K));
    if (!std::isfinite(lse))
      throw Error(ErrorCategory::numeric_error,
                  "non-finite likelihood at sample " + std::to_string(n));
    ll += lse;
    out.resp.r.col(n) = (logp.col(n).array() - lse).exp();
  }
  out.log_likelihood = ll;
  return out;
}

// Two conventions for the shared noise update. `mass_weighted` is the exact
// maximizer of the expected complete-data log-likelihood and keeps EM
// monotone; `equal_component` averages the K per-component residual moments
// with equal weights, which matches the published update but can lose
// monotonicity when component masses are unbalanced.
enum class SigmaUpdate { mass_weighted, equal_component };

struct MStepOptions {
  double min_effective_mass = -1.0;  // default L+1
  double gamma_rel_floor = 1e-8;
  double sigma2_floor = 1e-10;
  SigmaUpdate sigma_update = SigmaUpdate::mass_weighted;
  unsigned threads = 1;
};

struct MStepResult {
  PpamModel model;
  std::vector<int> removed;  // indices into the input responsibility rows
};

// Closed-form maximization. Region covariances are renormalized to a shared
// determinant (the mass-weighted mean of the |S_k|^(1/L) scales), the affine
// maps come from weighted least squares, and the shared diagonal noise
// combines the K per-component weighted residual moments per
// MStepOptions::sigma_update. Components whose effective mass drops below the
// threshold are removed and the responsibilities renormalized first.
inline MStepResult m_step(const Responsibilities& resp, const Eigen::MatrixXd& X,
                          const Eigen::MatrixXd& Y, const MStepOptions& opts = {}) {
  const int N = static_cast<int>(X.rows());
  const int L = static_cast<int>(X.cols());
  const int D = static_cast<int>(Y.cols());
  if (resp.r.cols() != N || Y.rows() != N)
    throw Error(ErrorCategory::shape_mismatch, "responsibility shape mismatch");

  const double min_mass =
      opts.min_effective_mass > 0.0 ? opts.min_effective_mass : static_cast<double>(L + 1);

  Eigen::MatrixXd r = resp.r;
  MStepResult out;
  std::vector<int> live(static_cast<std::size_t>(r.rows()));
  for (std::size_t i = 0; i < live.size(); ++i) live[i] = static_cast<int>(i);

  // drop starved components, renormalize, repeat until stable
  for (;;) {
    const Eigen::VectorXd mass = r.rowwise().sum();
    std::vector<int> keep;
    for (int k = 0; k < static_cast<int>(r.rows()); ++k)
      if (mass(k) >= min_mass) keep.push_back(k);
    if (keep.empty())
      throw Error(ErrorCategory::numeric_error, "all components degenerate");
    if (static_cast<int>(keep.size()) == r.rows()) break;

    Eigen::MatrixXd r2(static_cast<int>(keep.size()), N);
    std::vector<int> live2;
    for (int i = 0; i < static_cast<int>(keep.size()); ++i) {
      r2.row(i) = r.row(keep[static_cast<std::size_t>(i)]);
      live2.push_back(live[static_cast<std::size_t>(keep[static_cast<std::size_t>(i)])]);
    }
    for (int k = 0; k < static_cast<int>(r.rows()); ++k)
      if (std::find(keep.begin(), keep.end(), k) == keep.end())
        out.removed.push_back(live[static_cast<std::size_t>(k)]);
    const Eigen::RowVectorXd colsum = r2.colwise().sum();
    for (int n = 0; n < N; ++n) {
      if (colsum(n) > 0.0)
        r2.col(n) /= colsum(n);
      else
        r2.col(n).setConstant(1.0 / static_cast<double>(r2.rows()));
    }
    r = std::move(r2);
    live = std::move(live2);
  }

  const int K = static_cast<int>(r.rows());
  const Eigen::VectorXd mass = r.rowwise().sum();
  const double total_mass = mass.sum();

  PpamModel m;
  m.c.resize(static_cast<std::size_t>(K));
  m.gamma.resize(static_cast<std::size_t>(K));
  m.A.resize(static_cast<std::size_t>(K));
  m.b.resize(static_cast<std::size_t>(K));
  m.sigma2.setZero(D);

  // batched sufficient statistics: one GEMM against Y covers every
  // component's first moment and cross moment
  Eigen::MatrixXd W(N, K * (L + 1));
  std::vector<Eigen::VectorXd> u(static_cast<std::size_t>(K));
  std::vector<Eigen::MatrixXd> Cxx2(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const Eigen::VectorXd rk = r.row(k).transpose();
    for (int j = 0; j < L; ++j) W.col(k * (L + 1) + j) = rk.cwiseProduct(X.col(j));
    W.col(k * (L + 1) + L) = rk;
    u[static_cast<std::size_t>(k)] = X.transpose() * rk;
    Cxx2[static_cast<std::size_t>(k)] = X.transpose() * rk.asDiagonal() * X;
  }
  const Eigen::MatrixXd moments = Y.transpose() * W;  // D x K(L+1)

  std::vector<Eigen::MatrixXd> S(static_cast<std::size_t>(K));
  parallel_for(static_cast<std::size_t>(K), opts.threads, [&](std::size_t uk) {
    const int k = static_cast<int>(uk);
    const double s = mass(k);
    const Eigen::VectorXd xbar = u[uk] / s;
    m.c[uk] = xbar;
    const Eigen::MatrixXd Cxx_cent = Cxx2[uk] - u[uk] * xbar.transpose();
    S[uk] = detail::floor_spd(Cxx_cent / s, opts.gamma_rel_floor);

    const Eigen::VectorXd q = moments.col(k * (L + 1) + L);  // sum r y
    const Eigen::MatrixXd Cyx =
        moments.middleCols(k * (L + 1), L) - q * xbar.transpose();

    // Moore-Penrose inverse of the weighted scatter
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Cxx_cent);
    const double tol = 1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    Eigen::VectorXd inv_ev(L);
    for (int i = 0; i < L; ++i)
      inv_ev(i) = es.eigenvalues()(i) > tol ? 1.0 / es.eigenvalues()(i) : 0.0;
    const Eigen::MatrixXd Cxx_pinv =
        es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();

    m.A[uk] = Cyx * Cxx_pinv;
    m.b[uk] = (q - m.A[uk] * u[uk]) / s;
  });

  double vol_scale = 0.0;
  Eigen::VectorXd det_pow(K);
  for (int k = 0; k < K; ++k) {
    det_pow(k) = std::pow(S[static_cast<std::size_t>(k)].determinant(), 1.0 / L);
    vol_scale += mass(k) / total_mass * det_pow(k);
  }
  for (int k = 0; k < K; ++k)
    m.gamma[static_cast<std::size_t>(k)] =
        S[static_cast<std::size_t>(k)] / det_pow(k) * vol_scale;

  // residual pass for the shared noise, one stream over Y
  Eigen::VectorXd coef(K);
  for (int k = 0; k < K; ++k) {
    const double comp_weight = opts.sigma_update == SigmaUpdate::mass_weighted
                                   ? mass(k) / total_mass
                                   : 1.0 / K;
    coef(k) = comp_weight / mass(k);
  }
  constexpr int kChunk = 256;
  const std::size_t n_chunks = static_cast<std::size_t>((N + kChunk - 1) / kChunk);
  std::vector<Eigen::VectorXd> sigma_part(n_chunks);
  parallel_for(n_chunks, opts.threads, [&](std::size_t chunk) {
    const int n0 = static_cast<int>(chunk) * kChunk;
    const int nc = std::min(kChunk, N - n0);
    const auto Xc = X.middleRows(n0, nc);
    const auto Yc = Y.middleRows(n0, nc);
    Eigen::MatrixXd resid(nc, D);
    sigma_part[chunk].setZero(D);
    for (int k = 0; k < K; ++k) {
      resid.noalias() = Yc - Xc * m.A[static_cast<std::size_t>(k)].transpose();
      resid.rowwise() -= m.b[static_cast<std::size_t>(k)].transpose();
      sigma_part[chunk].noalias() += resid.array().square().matrix().transpose() *
                                     (coef(k) * r.row(k).segment(n0, nc).transpose());
    }
  });
  for (const auto& part : sigma_part) m.sigma2 += part;
  m.sigma2 = m.sigma2.cwiseMax(opts.sigma2_floor);

  out.model = std::move(m);
  return out;
}

enum class InitStrategy { gmm_x, gmm_joint };

namespace detail {

// small diagonal-covariance GMM with kmeans++ seeding, used only to
// initialize the responsibilities
inline bool diag_gmm_resp(const Eigen::MatrixXd& data, int K, std::uint64_t seed,
                          Eigen::MatrixXd& resp_out) {
  const int N = static_cast<int>(data.rows());
  const int D = static_cast<int>(data.cols());
  Rng rng(seed);

  Eigen::RowVectorXd mu = data.colwise().mean();
  Eigen::RowVectorXd sd =
      ((data.rowwise() - mu).array().square().colwise().mean()).sqrt().matrix();
  for (int d = 0; d < D; ++d)
    if (sd(d) < 1e-12) sd(d) = 1.0;
  Eigen::MatrixXd Z = (data.rowwise() - mu).array().rowwise() / sd.array();

  // kmeans++ seeding plus hard refinement, best of a few restarts by SSE
  Eigen::MatrixXd centers(K, D);
  std::vector<int> assign(static_cast<std::size_t>(N), 0);
  double best_sse = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < 4; ++restart) {
    Eigen::MatrixXd cand(K, D);
    cand.row(0) = Z.row(static_cast<int>(rng.uniform_int(0, N - 1)));
    Eigen::VectorXd best_d2 = (Z.rowwise() - cand.row(0)).rowwise().squaredNorm();
    for (int k = 1; k < K; ++k) {
      const double total = best_d2.sum();
      if (total <= 0.0) {
        cand.row(k) = Z.row(static_cast<int>(rng.uniform_int(0, N - 1)));
      } else {
        double target = rng.uniform() * total, run = 0.0;
        int pick = N - 1;
        for (int n = 0; n < N; ++n) {
          run += best_d2(n);
          if (run >= target) {
            pick = n;
            break;
          }
        }
        cand.row(k) = Z.row(pick);
      }
      best_d2 = best_d2.cwiseMin((Z.rowwise() - cand.row(k)).rowwise().squaredNorm());
    }

    std::vector<int> cand_assign(static_cast<std::size_t>(N), 0);
    double sse = 0.0;
    for (int round = 0; round < 10; ++round) {
      sse = 0.0;
      for (int n = 0; n < N; ++n) {
        int best = 0;
        double bd = (Z.row(n) - cand.row(0)).squaredNorm();
        for (int k = 1; k < K; ++k) {
          const double d2 = (Z.row(n) - cand.row(k)).squaredNorm();
          if (d2 < bd) {
            bd = d2;
            best = k;
          }
        }
        cand_assign[static_cast<std::size_t>(n)] = best;
        sse += bd;
      }
      for (int k = 0; k < K; ++k) {
        Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(D);
        int count = 0;
        for (int n = 0; n < N; ++n)
          if (cand_assign[static_cast<std::size_t>(n)] == k) {
            sum += Z.row(n);
            ++count;
          }
        if (count > 0) cand.row(k) = sum / count;
      }
    }
    if (sse < best_sse) {
      best_sse = sse;
      centers = cand;
      assign = cand_assign;
    }
  }

  Eigen::MatrixXd var = Eigen::MatrixXd::Ones(K, D);
  Eigen::VectorXd pi = Eigen::VectorXd::Constant(K, 1.0 / K);
  for (int k = 0; k < K; ++k) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(D);
    int count = 0;
    for (int n = 0; n < N; ++n)
      if (assign[static_cast<std::size_t>(n)] == k) {
        acc += (Z.row(n) - centers.row(k)).array().square().matrix();
        ++count;
      }
    if (count > 1) var.row(k) = (acc / count).cwiseMax(1e-6);
    pi(k) = std::max(1.0, static_cast<double>(count)) / N;
  }
  pi /= pi.sum();
  Eigen::MatrixXd resp(K, N);

  for (int iter = 0; iter < 50; ++iter) {
    for (int n = 0; n < N; ++n) {
      for (int k = 0; k < K; ++k) {
        double lp = std::log(pi(k));
        for (int d = 0; d < D; ++d) {
          const double diff = Z(n, d) - centers(k, d);
          lp += -0.5 * (std::log(2.0 * M_PI * var(k, d)) + diff * diff / var(k, d));
        }
        resp(k, n) = lp;
      }
      const double lse = log_sum_exp(resp.col(n).data(), static_cast<std::size_t>(K));
      if (!std::isfinite(lse)) return false;
      resp.col(n) = (resp.col(n).array() - lse).exp();
    }
    const Eigen::VectorXd mass = resp.rowwise().sum();
    if ((mass.array() < 1e-9).any()) return false;
    for (int k = 0; k < K; ++k) {
      const Eigen::VectorXd w = resp.row(k).transpose() / mass(k);
      centers.row(k) = (Z.transpose() * w).transpose();
      var.row(k) = ((Z.rowwise() - centers.row(k)).array().square().matrix().transpose() * w)
                       .transpose()
                       .cwiseMax(1e-6);
      pi(k) = mass(k) / N;
    }
  }
  resp_out = resp;
  return true;
}

}  // namespace detail

// GMM-based initial posteriors, fitted on X alone or on the joint [X;Y]
// stack. Falls back to a seeded random hard assignment if the fit collapses.
inline Responsibilities init_responsibilities(const Eigen::MatrixXd& X,
                                              const Eigen::MatrixXd& Y, int K,
                                              InitStrategy strategy, std::uint64_t seed) {
  const int N = static_cast<int>(X.rows());
  if (K < 1) throw Error(ErrorCategory::bad_args, "K must be >= 1");
  Responsibilities out;
  if (K == 1) {
    out.r = Eigen::MatrixXd::Ones(1, N);
    return out;
  }

  Eigen::MatrixXd data;
  if (strategy == InitStrategy::gmm_x) {
    data = X;
  } else {
    data.resize(N, X.cols() + Y.cols());
    data << X, Y;
  }

  if (!detail::diag_gmm_resp(data, K, seed, out.r)) {
    Rng rng(seed);
    out.r = Eigen::MatrixXd::Constant(K, N, 1e-6);
    for (int n = 0; n < N; ++n) {
      out.r(static_cast<int>(rng.uniform_int(0, K - 1)), n) = 1.0;
      out.r.col(n) /= out.r.col(n).sum();
    }
  }
  return out;
}

struct TrainOptions {
  int max_iter = 200;
  double tol = 1e-6;
  InitStrategy init = InitStrategy::gmm_x;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  MStepOptions m_step;
};

struct TrainResult {
  PpamModel model;
  std::vector<double> trace;  // observed-data log-likelihood per iteration
  int iterations = 0;
  int removed_components = 0;
};

inline TrainResult train(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, int K,
                         const TrainOptions& opts = {}) {
  const int N = static_cast<int>(X.rows());
  const int L = static_cast<int>(X.cols());
  if (N < K * (L + 1))
    K = std::max(1, N / (L + 1));

  TrainResult result;
  Responsibilities r = init_responsibilities(X, Y, K, opts.init, opts.seed);

  MStepOptions mopts = opts.m_step;
  mopts.threads = opts.threads;
  double prev_ll = 0.0;
  for (int it = 0; it < opts.max_iter; ++it) {
    MStepResult ms = m_step(r, X, Y, mopts);
    result.removed_components += static_cast<int>(ms.removed.size());
    EStepResult es = e_step(ms.model, X, Y, opts.threads);
    r = es.resp;
    result.model = std::move(ms.model);
    result.trace.push_back(es.log_likelihood);
    result.iterations = it + 1;

    if (it > 0 && ms.removed.empty()) {
      const double rel = std::abs(es.log_likelihood - prev_ll) /
                         std::max(1.0, std::abs(prev_ll));
      if (rel < opts.tol) break;
    }
    prev_ll = es.log_likelihood;
  }
  return result;
}

// Closed-form swap of the conditioning direction. Gamma* = Sigma + A Gamma A^T
// is only ever needed through its log-determinant and quadratic form, both of
// which reduce to L x L algebra via the Woodbury identity; the full D x D
// matrix is materialized on demand only.
struct InverseParams {
  std::vector<Eigen::VectorXd> c_star;      // K x D
  std::vector<Eigen::MatrixXd> A_star;      // K x (L x D)
  std::vector<Eigen::VectorXd> b_star;      // K x L
  std::vector<Eigen::MatrixXd> sigma_star;  // K x (L x L), SPD
  Eigen::VectorXd logdet_gamma_star;        // K

  // pieces for the Woodbury quadratic form
  std::vector<Eigen::MatrixXd> A;  // K x (D x L)
  Eigen::VectorXd sigma2;          // D

  int K() const { return static_cast<int>(c_star.size()); }

  double log_gauss_gamma_star(int k, const Eigen::VectorXd& y) const {
    const Eigen::VectorXd u = y - c_star[static_cast<std::size_t>(k)];
    const Eigen::VectorXd w = u.array() / sigma2.array();
    const Eigen::VectorXd aw = A[static_cast<std::size_t>(k)].transpose() * w;
    const double quad =
        u.dot(w) - aw.dot(sigma_star[static_cast<std::size_t>(k)] * aw);
    return -0.5 * (static_cast<double>(y.size()) * std::log(2.0 * M_PI) +
                   logdet_gamma_star(k) + quad);
  }

  Eigen::MatrixXd gamma_star(int k, const PpamModel& model) const {
    return Eigen::MatrixXd(model.sigma2.asDiagonal()) +
           model.A[static_cast<std::size_t>(k)] * model.gamma[static_cast<std::size_t>(k)] *
               model.A[static_cast<std::size_t>(k)].transpose();
  }
};

inline InverseParams invert_params(const PpamModel& model) {
  model.validate();
  const int K = model.K(), L = model.L();

  InverseParams inv;
  inv.c_star.resize(static_cast<std::size_t>(K));
  inv.A_star.resize(static_cast<std::size_t>(K));
  inv.b_star.resize(static_cast<std::size_t>(K));
  inv.sigma_star.resize(static_cast<std::size_t>(K));
  inv.logdet_gamma_star.resize(K);
  inv.A = model.A;
  inv.sigma2 = model.sigma2;

  const double logdet_sigma = model.sigma2.array().log().sum();
  const double sig_max = model.sigma2.maxCoeff();
  const double sig_min = model.sigma2.minCoeff();

  for (int k = 0; k < K; ++k) {
    const Eigen::MatrixXd& G = model.gamma[static_cast<std::size_t>(k)];
    const Eigen::MatrixXd& Ak = model.A[static_cast<std::size_t>(k)];
    Eigen::LLT<Eigen::MatrixXd> lltG(G);
    if (lltG.info() != Eigen::Success)
      throw Error(ErrorCategory::numeric_error, "Gamma not SPD in invert_params");
    const Eigen::MatrixXd Ginv = lltG.solve(Eigen::MatrixXd::Identity(L, L));

    const Eigen::MatrixXd M = Ak.transpose() * model.sigma2.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd prec = Ginv + M * Ak;  // Sigma*^-1
    Eigen::LLT<Eigen::MatrixXd> llt_prec(prec);
    if (llt_prec.info() != Eigen::Success)
      throw Error(ErrorCategory::numeric_error, "inverse-noise precision not SPD");

    // condition estimate of Gamma* = Sigma + A Gamma A^T
    const Eigen::MatrixXd half = lltG.matrixL().toDenseMatrix();
    const Eigen::MatrixXd small = half.transpose() * (Ak.transpose() * Ak) * half;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(small);
    const double cond_est = (sig_max + std::max(0.0, es.eigenvalues().maxCoeff())) / sig_min;
    if (cond_est > 1e12)
      throw Error(ErrorCategory::numeric_error,
                  "Gamma* ill-conditioned; raise the noise-variance floor");

    inv.sigma_star[static_cast<std::size_t>(k)] =
        llt_prec.solve(Eigen::MatrixXd::Identity(L, L));
    inv.A_star[static_cast<std::size_t>(k)] =
        inv.sigma_star[static_cast<std::size_t>(k)] * M;
    inv.b_star[static_cast<std::size_t>(k)] =
        inv.sigma_star[static_cast<std::size_t>(k)] *
        (Ginv * model.c[static_cast<std::size_t>(k)] - M * model.b[static_cast<std::size_t>(k)]);
    inv.c_star[static_cast<std::size_t>(k)] =
        Ak * model.c[static_cast<std::size_t>(k)] + model.b[static_cast<std::size_t>(k)];
    // |Gamma*| = |Sigma| |Gamma| |Sigma*^-1|
    inv.logdet_gamma_star(k) =
        logdet_sigma + detail::logdet_llt(lltG) + detail::logdet_llt(llt_prec);
  }
  return inv;
}

// GMM over direction space; also the output type of the sparse-spectrogram
// posterior.
struct PosteriorGmm {
  Eigen::VectorXd rho;              // K, sums to 1
  std::vector<Eigen::VectorXd> m;   // K x L
  std::vector<Eigen::MatrixXd> V;   // K x (L x L), SPD

  int K() const { return static_cast<int>(rho.size()); }

  Eigen::VectorXd mean() const {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(m[0].size());
    for (int k = 0; k < K(); ++k) e += rho(k) * m[static_cast<std::size_t>(k)];
    return e;
  }
};

struct ForwardGmm {
  Eigen::VectorXd weights;  // K
  Eigen::MatrixXd means;    // K x D
  Eigen::VectorXd sigma2;   // shared diagonal covariance
};

inline ForwardGmm forward_density(const PpamModel& model, const Eigen::VectorXd& x) {
  const int K = model.K();
  ForwardGmm g;
  g.weights.resize(K);
  g.means.resize(K, model.D());
  g.sigma2 = model.sigma2;

  Eigen::VectorXd logw(K);
  for (int k = 0; k < K; ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(model.gamma[static_cast<std::size_t>(k)]);
    logw(k) = model.log_pi() +
              detail::log_gauss_full(x, model.c[static_cast<std::size_t>(k)], llt,
                                     detail::logdet_llt(llt));
    g.means.row(k) = (model.A[static_cast<std::size_t>(k)] * x +
                      model.b[static_cast<std::size_t>(k)])
                         .transpose();
  }
  const double lse = log_sum_exp(logw.data(), static_cast<std::size_t>(K));
  g.weights = (logw.array() - lse).exp();
  return g;
}

inline Eigen::VectorXd forward_map(const PpamModel& model, const Eigen::VectorXd& x) {
  const ForwardGmm g = forward_density(model, x);
  return g.means.transpose() * g.weights;
}

inline PosteriorGmm inverse_density(const PpamModel& model, const InverseParams& inv,
                                    const Eigen::VectorXd& y) {
  const int K = model.K();
  PosteriorGmm g;
  g.rho.resize(K);
  g.m.resize(static_cast<std::size_t>(K));
  g.V.resize(static_cast<std::size_t>(K));

  Eigen::VectorXd logw(K);
  for (int k = 0; k < K; ++k) {
    logw(k) = model.log_pi() + inv.log_gauss_gamma_star(k, y);
    g.m[static_cast<std::size_t>(k)] =
        inv.A_star[static_cast<std::size_t>(k)] * y + inv.b_star[static_cast<std::size_t>(k)];
    g.V[static_cast<std::size_t>(k)] = inv.sigma_star[static_cast<std::size_t>(k)];
  }
  const double lse = log_sum_exp(logw.data(), static_cast<std::size_t>(K));
  if (!std::isfinite(lse))
    throw Error(ErrorCategory::numeric_error, "inverse density underflow");
  g.rho = (logw.array() - lse).exp();
  return g;
}

inline PosteriorGmm inverse_density(const PpamModel& model, const Eigen::VectorXd& y) {
  return inverse_density(model, invert_params(model), y);
}

inline Eigen::VectorXd inverse_map(const PpamModel& model, const Eigen::VectorXd& y) {
  return inverse_density(model, y).mean();
}

inline Eigen::VectorXd inverse_map(const PpamModel& model, const InverseParams& inv,
                                   const Eigen::VectorXd& y) {
  return inverse_density(model, inv, y).mean();
}

enum class MappingDirection { low_to_high, high_to_low };

// Parameter counts of the two learning directions; the low-to-high form is
// what makes training tractable at large D.
inline long long param_count(long long K, long long D, long long L,
                             MappingDirection dir) {
  if (K <= 0 || D <= 0 || L <= 0)
    throw Error(ErrorCategory::bad_args, "param_count needs positive arguments");
  if (dir == MappingDirection::low_to_high)
    return K * (D * (L + 2) + L + L * L + 1);
  return K * (L * (D + 2) + D + D * D + 1);
}

}  // namespace vessl

#endif
