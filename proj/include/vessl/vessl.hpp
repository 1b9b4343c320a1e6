#ifndef VESSL_VESSL_HPP
#define VESSL_VESSL_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "vessl/common.hpp"
#include "vessl/localize.hpp"
#include "vessl/ppam.hpp"
#include "vessl/spectro.hpp"

namespace vessl {

// Dense view of an observation sequence used by the variational steps.
struct DenseObs {
  Eigen::MatrixXd Y;    // D x T
  Eigen::MatrixXd chi;  // D x T in {0,1}

  int D() const { return static_cast<int>(Y.rows()); }
  int T() const { return static_cast<int>(Y.cols()); }

  static DenseObs from(const ObservationSet& obs) {
    DenseObs d;
    const int D = obs.dim(), T = obs.n_frames();
    d.Y.setZero(D, T);
    d.chi.setZero(D, T);
    for (int t = 0; t < T; ++t) {
      const auto& fr = obs.frames[static_cast<std::size_t>(t)];
      for (int dd = 0; dd < D; ++dd) {
        if (fr.avail[static_cast<std::size_t>(dd)]) {
          d.Y(dd, t) = fr.y(dd);
          d.chi(dd, t) = 1.0;
        }
      }
    }
    return d;
  }
};

// Mixed model: the trained affine pieces stay frozen, the diagonal noise is
// re-estimated on the mixture, and lambda holds per-dimension source weights.
struct MixedModel {
  PpamModel base;
  Eigen::VectorXd sigma2;  // D
  Eigen::MatrixXd lambda;  // D x M, rows on the simplex

  int M() const { return static_cast<int>(lambda.cols()); }

  static MixedModel from(const PpamModel& model, int M) {
    MixedModel mm;
    mm.base = model;
    mm.sigma2 = model.sigma2;
    mm.lambda = Eigen::MatrixXd::Constant(model.D(), M, 1.0 / M);
    return mm;
  }
};

// Variational posterior over source positions and transform assignments:
// per source m, a K-component Gaussian mixture.
struct QXZ {
  Eigen::MatrixXd alpha;                        // K x M, columns on the simplex
  std::vector<std::vector<Eigen::VectorXd>> mu; // [m][k], L-vectors
  std::vector<std::vector<Eigen::MatrixXd>> S;  // [m][k], L x L SPD

  int K() const { return static_cast<int>(alpha.rows()); }
  int M() const { return static_cast<int>(alpha.cols()); }
};

// Variational posterior over per-cell source assignments. q[m] is D x T;
// unavailable cells carry zeros for every source.
struct QW {
  std::vector<Eigen::MatrixXd> q;

  int M() const { return static_cast<int>(q.size()); }
};

// Localization step: refit each source's position posterior with the data
// term weighted by that source's current assignment probabilities. With one
// source and q_W equal to chi this is exactly the single-source posterior.
inline QXZ e_xz_step(const MixedModel& mixed, const DenseObs& obs, const QW& qw) {
  const PpamModel& model = mixed.base;
  const int K = model.K(), L = model.L(), D = model.D();
  const int M = qw.M();
  if (mixed.sigma2.size() != D || obs.D() != D)
    throw Error(ErrorCategory::shape_mismatch, "mixed model / observation dims differ");

  const Eigen::ArrayXd inv_sigma2 = mixed.sigma2.array().inverse();

  QXZ out;
  out.alpha.resize(K, M);
  out.mu.assign(static_cast<std::size_t>(M), std::vector<Eigen::VectorXd>(static_cast<std::size_t>(K)));
  out.S.assign(static_cast<std::size_t>(M), std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(K)));

  for (int m = 0; m < M; ++m) {
    const Eigen::MatrixXd& qm = qw.q[static_cast<std::size_t>(m)];
    const Eigen::VectorXd cnt = qm.rowwise().sum();
    const Eigen::VectorXd s1 = (qm.array() * obs.Y.array()).rowwise().sum();
    const Eigen::VectorXd s2 = (qm.array() * obs.Y.array().square()).rowwise().sum();

    Eigen::VectorXd logw(K);
    for (int k = 0; k < K; ++k) {
      const Eigen::MatrixXd& Ak = model.A[static_cast<std::size_t>(k)];
      const Eigen::VectorXd& bk = model.b[static_cast<std::size_t>(k)];
      const Eigen::VectorXd& ck = model.c[static_cast<std::size_t>(k)];

      Eigen::LLT<Eigen::MatrixXd> lltG(model.gamma[static_cast<std::size_t>(k)]);
      if (lltG.info() != Eigen::Success)
        throw Error(ErrorCategory::numeric_error, "Gamma not SPD");
      const Eigen::MatrixXd Ginv = lltG.solve(Eigen::MatrixXd::Identity(L, L));

      const Eigen::ArrayXd wdim = cnt.array() * inv_sigma2;
      Eigen::MatrixXd prec = Ginv + Ak.transpose() * wdim.matrix().asDiagonal() * Ak;
      Eigen::LLT<Eigen::MatrixXd> llt_prec(prec);
      if (llt_prec.info() != Eigen::Success)
        throw Error(ErrorCategory::numeric_error, "variational precision not SPD");

      const Eigen::VectorXd rhs =
          Ginv * ck +
          Ak.transpose() * ((s1.array() - cnt.array() * bk.array()) * inv_sigma2).matrix();
      const Eigen::VectorXd mu = llt_prec.solve(rhs);

      const double data_term =
          ((s2.array() - 2.0 * bk.array() * s1.array() + cnt.array() * bk.array().square()) *
           inv_sigma2)
              .sum();

      out.mu[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = mu;
      out.S[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] =
          llt_prec.solve(Eigen::MatrixXd::Identity(L, L));
      logw(k) = -0.5 * detail::logdet_llt(llt_prec) - 0.5 * detail::logdet_llt(lltG) -
                0.5 * (data_term + ck.dot(Ginv * ck) - mu.dot(rhs));
    }
    const double lse = log_sum_exp(logw.data(), static_cast<std::size_t>(K));
    if (!std::isfinite(lse))
      throw Error(ErrorCategory::numeric_error, "alpha underflow in E-XZ step");
    out.alpha.col(m) = (logw.array() - lse).exp();
  }
  return out;
}

namespace detail {

// Per (dimension, source) pieces of E_q[(y - a^T x - b)^2]: the expected
// quadratic expands to A + y^2 - 2 B y + C with
//   A = sum_k alpha a^T S a,  B = sum_k alpha (a^T mu + b),  C = sum_k alpha (a^T mu + b)^2.
struct ExpectedQuad {
  Eigen::MatrixXd A, B, C;  // each D x M
};

inline ExpectedQuad expected_quadratics(const PpamModel& model, const QXZ& qxz) {
  const int K = qxz.K(), M = qxz.M(), D = model.D();
  ExpectedQuad eq;
  eq.A.setZero(D, M);
  eq.B.setZero(D, M);
  eq.C.setZero(D, M);
  for (int m = 0; m < M; ++m) {
    for (int k = 0; k < K; ++k) {
      const double a = qxz.alpha(k, m);
      if (a == 0.0) continue;
      const Eigen::MatrixXd& Ak = model.A[static_cast<std::size_t>(k)];
      const Eigen::VectorXd aSa =
          (Ak * qxz.S[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)])
              .cwiseProduct(Ak)
              .rowwise()
              .sum();
      const Eigen::VectorXd e =
          Ak * qxz.mu[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] +
          model.b[static_cast<std::size_t>(k)];
      eq.A.col(m) += a * aSa;
      eq.B.col(m) += a * e;
      eq.C.col(m) += a * e.array().square().matrix();
    }
  }
  return eq;
}

}  // namespace detail

// Separation step: per-cell source assignment posteriors.
inline QW e_w_step(const MixedModel& mixed, const DenseObs& obs, const QXZ& qxz) {
  const int D = obs.D(), T = obs.T(), M = qxz.M();
  const detail::ExpectedQuad eq = detail::expected_quadratics(mixed.base, qxz);
  const Eigen::ArrayXd inv2s = 0.5 * mixed.sigma2.array().inverse();

  QW out;
  out.q.assign(static_cast<std::size_t>(M), Eigen::MatrixXd::Zero(D, T));
  std::vector<double> logq(static_cast<std::size_t>(M));
  for (int d = 0; d < D; ++d) {
    for (int t = 0; t < T; ++t) {
      if (obs.chi(d, t) == 0.0) continue;
      const double y = obs.Y(d, t);
      for (int m = 0; m < M; ++m)
        logq[static_cast<std::size_t>(m)] =
            std::log(mixed.lambda(d, m)) -
            inv2s(d) * (eq.A(d, m) + y * y - 2.0 * y * eq.B(d, m) + eq.C(d, m));
      const double lse = log_sum_exp(logq);
      for (int m = 0; m < M; ++m)
        out.q[static_cast<std::size_t>(m)](d, t) =
            std::exp(logq[static_cast<std::size_t>(m)] - lse);
    }
  }
  return out;
}

// Block schedule of the progressive masking constraint: iteration 1 ties all
// frequency bins of a frame to one source, then every iteration doubles the
// number of per-frame frequency blocks until each bin stands alone.
struct MaskSchedule {
  int n_blocks = 1;
  std::vector<std::pair<int, int>> ranges;  // 1-based inclusive bin ranges

  bool released(int F) const { return n_blocks >= F; }
};

inline MaskSchedule progressive_mask_schedule(int iteration, int /*T*/, int F) {
  if (iteration < 1) throw Error(ErrorCategory::bad_args, "iteration starts at 1");
  MaskSchedule s;
  s.n_blocks = F;
  if (iteration - 1 < 30) {
    const long long b = 1LL << (iteration - 1);
    s.n_blocks = static_cast<int>(std::min<long long>(b, F));
  }
  s.ranges.reserve(static_cast<std::size_t>(s.n_blocks));
  for (int i = 0; i < s.n_blocks; ++i) {
    const int lo = 1 + static_cast<int>(static_cast<long long>(i) * F / s.n_blocks);
    const int hi = static_cast<int>(static_cast<long long>(i + 1) * F / s.n_blocks);
    s.ranges.emplace_back(lo, hi);
  }
  return s;
}

// block id per cue dimension, from the dimension's frequency bin
inline Eigen::VectorXi block_index(const IlpdLayout& layout, const MaskSchedule& sched) {
  const int D = layout.dim();
  Eigen::VectorXi idx(D);
  for (int d = 0; d < D; ++d) {
    const int bin = layout.dim_map(d).bin;
    int lo = 0, hi = sched.n_blocks - 1;
    while (lo < hi) {  // ranges are sorted
      const int mid = (lo + hi) / 2;
      if (sched.ranges[static_cast<std::size_t>(mid)].second < bin)
        lo = mid + 1;
      else
        hi = mid;
    }
    idx(d) = lo;
  }
  return idx;
}

// Constrained separation step: all available cells of a (frame, block) share
// one assignment distribution, the product of their per-cell factors.
inline QW e_w_step_blocked(const MixedModel& mixed, const DenseObs& obs, const QXZ& qxz,
                           const Eigen::VectorXi& block_of_dim, int n_blocks) {
  const int D = obs.D(), T = obs.T(), M = qxz.M();
  const detail::ExpectedQuad eq = detail::expected_quadratics(mixed.base, qxz);
  const Eigen::ArrayXd inv2s = 0.5 * mixed.sigma2.array().inverse();

  QW out;
  out.q.assign(static_cast<std::size_t>(M), Eigen::MatrixXd::Zero(D, T));
  Eigen::MatrixXd block_log(M, n_blocks);  // columns contiguous per block
  for (int t = 0; t < T; ++t) {
    block_log.setZero();
    for (int d = 0; d < D; ++d) {
      if (obs.chi(d, t) == 0.0) continue;
      const double y = obs.Y(d, t);
      for (int m = 0; m < M; ++m)
        block_log(m, block_of_dim(d)) +=
            std::log(mixed.lambda(d, m)) -
            inv2s(d) * (eq.A(d, m) + y * y - 2.0 * y * eq.B(d, m) + eq.C(d, m));
    }
    Eigen::MatrixXd block_q(M, n_blocks);
    for (int bkt = 0; bkt < n_blocks; ++bkt) {
      const double lse = log_sum_exp(block_log.col(bkt).data(), static_cast<std::size_t>(M));
      for (int m = 0; m < M; ++m)
        block_q(m, bkt) = std::exp(block_log(m, bkt) - lse);
    }
    for (int d = 0; d < D; ++d) {
      if (obs.chi(d, t) == 0.0) continue;
      for (int m = 0; m < M; ++m)
        out.q[static_cast<std::size_t>(m)](d, t) = block_q(m, block_of_dim(d));
    }
  }
  return out;
}

// M step: per-dimension source weights from the assignment posteriors, and
// the shared diagonal noise from the expected residual moments. Dimensions
// with no available cell keep their previous noise and get uniform weights.
inline void m_step_mixed(MixedModel& mixed, const DenseObs& obs, const QXZ& qxz,
                         const QW& qw, double sigma2_floor = 1e-10) {
  const int D = obs.D(), M = qxz.M();
  const detail::ExpectedQuad eq = detail::expected_quadratics(mixed.base, qxz);

  const Eigen::VectorXd n_avail = obs.chi.rowwise().sum();
  Eigen::VectorXd num = Eigen::VectorXd::Zero(D);
  Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(D, M);
  for (int m = 0; m < M; ++m) {
    const Eigen::MatrixXd& qm = qw.q[static_cast<std::size_t>(m)];
    const Eigen::VectorXd cnt = qm.rowwise().sum();
    const Eigen::VectorXd s1 = (qm.array() * obs.Y.array()).rowwise().sum();
    const Eigen::VectorXd s2 = (qm.array() * obs.Y.array().square()).rowwise().sum();
    lam.col(m) = cnt;
    num += eq.A.col(m).cwiseProduct(cnt) + s2 - 2.0 * eq.B.col(m).cwiseProduct(s1) +
           eq.C.col(m).cwiseProduct(cnt);
  }

  for (int d = 0; d < D; ++d) {
    if (n_avail(d) > 0.0) {
      // keep weights strictly positive so log lambda stays finite while the
      // lagged assignment mass decays through the denormal range
      Eigen::RowVectorXd row = (lam.row(d) / n_avail(d)).cwiseMax(1e-300);
      mixed.lambda.row(d) = row / row.sum();
      mixed.sigma2(d) = std::max(num(d) / n_avail(d), sigma2_floor);
    } else {
      mixed.lambda.row(d).setConstant(1.0 / M);
      // sigma2(d) keeps its previous value
    }
  }
}

// Evidence lower bound of the factorized posterior; used for convergence
// monitoring only. All expectations are closed form.
inline double free_energy(const MixedModel& mixed, const DenseObs& obs, const QXZ& qxz,
                          const QW& qw) {
  const PpamModel& model = mixed.base;
  const int K = qxz.K(), M = qxz.M(), L = model.L(), D = obs.D(), T = obs.T();
  const detail::ExpectedQuad eq = detail::expected_quadratics(model, qxz);

  double fe = 0.0;

  // E[log p(y | w, x, z)] and the lambda prior plus assignment entropy
  for (int m = 0; m < M; ++m) {
    const Eigen::MatrixXd& qm = qw.q[static_cast<std::size_t>(m)];
    const Eigen::VectorXd cnt = qm.rowwise().sum();
    const Eigen::VectorXd s1 = (qm.array() * obs.Y.array()).rowwise().sum();
    const Eigen::VectorXd s2 = (qm.array() * obs.Y.array().square()).rowwise().sum();
    for (int d = 0; d < D; ++d) {
      const double quad = eq.A(d, m) * cnt(d) + s2(d) - 2.0 * eq.B(d, m) * s1(d) +
                          eq.C(d, m) * cnt(d);
      fe += -0.5 * cnt(d) * std::log(2.0 * M_PI * mixed.sigma2(d)) -
            0.5 * quad / mixed.sigma2(d);
    }
    for (int d = 0; d < D; ++d)
      for (int t = 0; t < T; ++t) {
        const double q = qm(d, t);
        if (q > 0.0) fe += q * (std::log(mixed.lambda(d, m)) - std::log(q));
      }
  }

  // E[log p(x, z)] and the position-posterior entropy
  for (int m = 0; m < M; ++m) {
    for (int k = 0; k < K; ++k) {
      const double a = qxz.alpha(k, m);
      if (a == 0.0) continue;
      Eigen::LLT<Eigen::MatrixXd> lltG(model.gamma[static_cast<std::size_t>(k)]);
      const Eigen::MatrixXd Ginv = lltG.solve(Eigen::MatrixXd::Identity(L, L));
      const Eigen::VectorXd dm =
          qxz.mu[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] -
          model.c[static_cast<std::size_t>(k)];
      const Eigen::MatrixXd& Skm =
          qxz.S[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)];
      const double e_log_px =
          model.log_pi() - 0.5 * (L * std::log(2.0 * M_PI) + detail::logdet_llt(lltG) +
                                  (Ginv * Skm).trace() + dm.dot(Ginv * dm));
      Eigen::LLT<Eigen::MatrixXd> lltS(Skm);
      const double ent =
          -std::log(a) + 0.5 * (L * (1.0 + std::log(2.0 * M_PI)) + detail::logdet_llt(lltS));
      fe += a * (e_log_px + ent);
    }
  }
  return fe;
}

// Free energy of the block-tied posterior family used under progressive
// masking: cells of one (frame, block) share a single assignment variable, so
// the assignment entropy counts once per occupied block rather than per cell.
// With per-cell blocks this coincides with `free_energy`.
inline double free_energy_blocked(const MixedModel& mixed, const DenseObs& obs,
                                  const QXZ& qxz, const QW& qw,
                                  const Eigen::VectorXi& block_of_dim, int n_blocks) {
  const int D = obs.D(), T = obs.T(), M = qxz.M();
  double fe = free_energy(mixed, obs, qxz, qw);

  // replace the per-cell assignment entropy with the per-block one
  for (int t = 0; t < T; ++t) {
    std::vector<int> seen(static_cast<std::size_t>(n_blocks), 0);
    for (int d = 0; d < D; ++d) {
      if (obs.chi(d, t) == 0.0) continue;
      const int b = block_of_dim(d);
      double cell_entropy = 0.0;
      for (int m = 0; m < M; ++m) {
        const double q = qw.q[static_cast<std::size_t>(m)](d, t);
        if (q > 0.0) cell_entropy -= q * std::log(q);
      }
      fe -= cell_entropy;                     // remove the per-cell count
      if (!seen[static_cast<std::size_t>(b)]) {
        fe += cell_entropy;                   // keep it once per block
        seen[static_cast<std::size_t>(b)] = 1;
      }
    }
  }
  return fe;
}

struct MapEstimates {
  std::vector<Eigen::VectorXd> x_map;  // M
  std::vector<int> k_map;              // M
  Eigen::MatrixXi w_map;               // D x T, source index or -1
};

// MAP readout: per source the transform maximizing alpha |S|^{-1/2} and its
// posterior mean, plus the per-cell hard assignment. Ties pick the lowest
// index.
inline MapEstimates map_estimates(const QXZ& qxz, const QW& qw, const DenseObs& obs) {
  const int K = qxz.K(), M = qxz.M(), D = obs.D(), T = obs.T();
  MapEstimates est;
  est.x_map.resize(static_cast<std::size_t>(M));
  est.k_map.resize(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    int best_k = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
      const double a = qxz.alpha(k, m);
      double score = -std::numeric_limits<double>::infinity();
      if (a > 0.0) {
        Eigen::LLT<Eigen::MatrixXd> llt(
            qxz.S[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)]);
        score = std::log(a) - 0.5 * detail::logdet_llt(llt);
      }
      if (score > best) {
        best = score;
        best_k = k;
      }
    }
    est.k_map[static_cast<std::size_t>(m)] = best_k;
    est.x_map[static_cast<std::size_t>(m)] =
        qxz.mu[static_cast<std::size_t>(m)][static_cast<std::size_t>(best_k)];
  }

  est.w_map = Eigen::MatrixXi::Constant(D, T, -1);
  for (int d = 0; d < D; ++d)
    for (int t = 0; t < T; ++t) {
      if (obs.chi(d, t) == 0.0) continue;
      int best_m = 0;
      double best = qw.q[0](d, t);
      for (int m = 1; m < M; ++m)
        if (qw.q[static_cast<std::size_t>(m)](d, t) > best) {
          best = qw.q[static_cast<std::size_t>(m)](d, t);
          best_m = m;
        }
      est.w_map(d, t) = best_m;
    }
  return est;
}

struct VemOptions {
  int max_iter = 50;
  double tol = 1e-5;
  std::uint64_t seed = 0;
};

struct VemResult {
  QXZ qxz;
  QW qw;
  MixedModel mixed;
  std::vector<std::vector<double>> traces;  // free energy per scale
  MapEstimates map;
};

// Multi-scale driver: run coordinate updates at each K of the ladder, seeding
// each scale's assignment posteriors with the previous scale's result. The
// progressive-masking constraint restarts at frame level at each scale and is
// fully released before convergence may be declared.
inline VemResult vem_run(const std::vector<PpamModel>& ladder, const ObservationSet& obs,
                         int M, const VemOptions& opts = {}) {
  if (ladder.empty()) throw Error(ErrorCategory::bad_args, "empty model ladder");
  if (M < 1) throw Error(ErrorCategory::bad_args, "need at least one source");
  const int D = ladder.front().D();
  const int L = ladder.front().L();
  for (const auto& m : ladder)
    if (m.D() != D || m.L() != L)
      throw Error(ErrorCategory::shape_mismatch, "ladder models disagree on dimensions");
  if (obs.dim() != D)
    throw Error(ErrorCategory::shape_mismatch, "observations do not match ladder models");

  const DenseObs dense = DenseObs::from(obs);
  const int T = dense.T();
  const int F = obs.layout.F;

  VemResult res;
  Rng rng(opts.seed);

  // frame-level random assignment, matching the iteration-1 constraint
  res.qw.q.assign(static_cast<std::size_t>(M), Eigen::MatrixXd::Zero(D, T));
  for (int t = 0; t < T; ++t) {
    const std::vector<double> w = rng.simplex(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m)
      res.qw.q[static_cast<std::size_t>(m)].col(t) =
          w[static_cast<std::size_t>(m)] * dense.chi.col(t);
  }

  for (const PpamModel& model : ladder) {
    res.mixed = MixedModel::from(model, M);
    std::vector<double> trace;
    double prev = 0.0;
    for (int it = 1; it <= opts.max_iter; ++it) {
      res.qxz = e_xz_step(res.mixed, dense, res.qw);
      const MaskSchedule sched = progressive_mask_schedule(it, T, F);
      const Eigen::VectorXi blocks = block_index(obs.layout, sched);
      res.qw = e_w_step_blocked(res.mixed, dense, res.qxz, blocks, sched.n_blocks);
      m_step_mixed(res.mixed, dense, res.qxz, res.qw);
      const double fe =
          free_energy_blocked(res.mixed, dense, res.qxz, res.qw, blocks, sched.n_blocks);
      trace.push_back(fe);
      if (sched.released(F) && it > 1) {
        const double rel = std::abs(fe - prev) / std::max(1.0, std::abs(prev));
        if (rel < opts.tol) break;
      }
      prev = fe;
    }
    res.traces.push_back(std::move(trace));
  }

  // final E sweep so the returned posteriors reflect the converged parameters
  res.qxz = e_xz_step(res.mixed, dense, res.qw);
  const MaskSchedule full = progressive_mask_schedule(31, T, F);
  res.qw = e_w_step_blocked(res.mixed, dense, res.qxz, block_index(obs.layout, full),
                            full.n_blocks);
  res.map = map_estimates(res.qxz, res.qw, dense);
  return res;
}

// cue-dimension mask -> spectrogram-grid mask, each bin taking the
// assignment of its ILD dimension
inline Eigen::MatrixXi mask_to_grid(const Eigen::MatrixXi& w_map, const IlpdLayout& layout) {
  const int T = static_cast<int>(w_map.cols());
  Eigen::MatrixXi grid = Eigen::MatrixXi::Constant(layout.F, T, -1);
  for (int f = 1; f <= layout.F; ++f) {
    const int d = layout.ild_dim_of_bin(f);
    if (d < 0) continue;
    grid.row(f - 1) = w_map.row(d);
  }
  return grid;
}

// Binary masking on the spectrogram grid followed by resynthesis. The DC row
// has no cue dimension and inherits the mask of the lowest in-band bin.
inline std::vector<AudioBuffer> separate_grid(const ComplexSpectrogram& spec_left,
                                              const ComplexSpectrogram& spec_right,
                                              const Eigen::MatrixXi& grid, int M,
                                              std::size_t original_length, int dc_bin = 1) {
  if (grid.rows() != spec_left.bins() || grid.cols() != spec_left.frames())
    throw Error(ErrorCategory::shape_mismatch, "mask does not match spectrogram grid");
  std::vector<AudioBuffer> out;
  out.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    ComplexSpectrogram sl = spec_left;
    ComplexSpectrogram sr = spec_right;
    for (int t = 0; t < sl.frames(); ++t) {
      for (int f = 0; f < sl.bins(); ++f) {
        if (grid(f, t) != m) {
          sl.values(f, t) = 0.0;
          sr.values(f, t) = 0.0;
        }
      }
      if (grid(dc_bin - 1, t) != m) {
        sl.dc(t) = 0.0;
        sr.dc(t) = 0.0;
      }
    }
    out.push_back(istft(sl, sr, original_length));
  }
  return out;
}

inline std::vector<AudioBuffer> separate(const ComplexSpectrogram& spec_left,
                                         const ComplexSpectrogram& spec_right,
                                         const Eigen::MatrixXi& w_map,
                                         const IlpdLayout& layout, int M,
                                         std::size_t original_length) {
  return separate_grid(spec_left, spec_right, mask_to_grid(w_map, layout), M,
                       original_length, layout.band.ild_lo);
}

}  // namespace vessl

#endif
