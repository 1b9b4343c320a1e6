#ifndef VESSL_LOCALIZE_HPP
#define VESSL_LOCALIZE_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "vessl/common.hpp"
#include "vessl/ppam.hpp"
#include "vessl/spectro.hpp"

namespace vessl {

// Sufficient statistics of an observed sparse spectrogram. Everything the
// posterior needs reduces to per-dimension availability counts and first two
// moments, so the cost is independent of the number of frames.
struct SparseStats {
  Eigen::VectorXd n;  // D, available frame count per dimension
  Eigen::VectorXd s;  // D, sum of available values
  Eigen::VectorXd q;  // D, sum of available squares

  static SparseStats from(const ObservationSet& obs) {
    const int D = obs.dim();
    SparseStats st;
    st.n.setZero(D);
    st.s.setZero(D);
    st.q.setZero(D);
    for (const auto& fr : obs.frames) {
      if (fr.y.size() != D)
        throw Error(ErrorCategory::shape_mismatch, "inconsistent observation dimension");
      for (int d = 0; d < D; ++d) {
        if (fr.avail[static_cast<std::size_t>(d)]) {
          st.n(d) += 1.0;
          st.s(d) += fr.y(d);
          st.q(d) += fr.y(d) * fr.y(d);
        }
      }
    }
    return st;
  }
};

// Posterior GMM over source direction given every available cell of a sparse
// spectrogram, assuming a single emitting source. With no available data the
// posterior falls back to the model prior; with one fully available frame it
// coincides with the inverse conditional density.
inline PosteriorGmm sparse_posterior(const PpamModel& model, const SparseStats& st) {
  model.validate();
  const int K = model.K(), L = model.L(), D = model.D();
  if (st.n.size() != D)
    throw Error(ErrorCategory::shape_mismatch, "observation dimension does not match model");

  const Eigen::ArrayXd inv_sigma2 = model.sigma2.array().inverse();

  PosteriorGmm g;
  g.rho.resize(K);
  g.m.resize(static_cast<std::size_t>(K));
  g.V.resize(static_cast<std::size_t>(K));

  Eigen::VectorXd logw(K);
  for (int k = 0; k < K; ++k) {
    const Eigen::MatrixXd& Ak = model.A[static_cast<std::size_t>(k)];
    const Eigen::VectorXd& bk = model.b[static_cast<std::size_t>(k)];
    const Eigen::VectorXd& ck = model.c[static_cast<std::size_t>(k)];

    Eigen::LLT<Eigen::MatrixXd> lltG(model.gamma[static_cast<std::size_t>(k)]);
    if (lltG.info() != Eigen::Success)
      throw Error(ErrorCategory::numeric_error, "Gamma not SPD");
    const double logdet_gamma = detail::logdet_llt(lltG);
    const Eigen::MatrixXd Ginv = lltG.solve(Eigen::MatrixXd::Identity(L, L));

    const Eigen::ArrayXd wdim = st.n.array() * inv_sigma2;
    Eigen::MatrixXd prec = Ginv + Ak.transpose() * wdim.matrix().asDiagonal() * Ak;
    Eigen::LLT<Eigen::MatrixXd> llt_prec(prec);
    if (llt_prec.info() != Eigen::Success)
      throw Error(ErrorCategory::numeric_error, "posterior precision not SPD");

    const Eigen::VectorXd rhs =
        Ginv * ck +
        Ak.transpose() * ((st.s.array() - st.n.array() * bk.array()) * inv_sigma2).matrix();
    const Eigen::VectorXd mk = llt_prec.solve(rhs);

    const double data_term =
        ((st.q.array() - 2.0 * bk.array() * st.s.array() +
          st.n.array() * bk.array().square()) *
         inv_sigma2)
            .sum();
    const double prior_quad = ck.dot(Ginv * ck);
    const double post_quad = mk.dot(rhs);  // m^T V^-1 m, since V^-1 m = rhs

    g.m[static_cast<std::size_t>(k)] = mk;
    g.V[static_cast<std::size_t>(k)] = llt_prec.solve(Eigen::MatrixXd::Identity(L, L));
    logw(k) = -0.5 * detail::logdet_llt(llt_prec) - 0.5 * logdet_gamma -
              0.5 * (data_term + prior_quad - post_quad);
  }

  const double lse = log_sum_exp(logw.data(), static_cast<std::size_t>(K));
  if (!std::isfinite(lse))
    throw Error(ErrorCategory::numeric_error, "posterior weight underflow");
  g.rho = (logw.array() - lse).exp();
  return g;
}

inline PosteriorGmm sparse_posterior(const PpamModel& model, const ObservationSet& obs) {
  return sparse_posterior(model, SparseStats::from(obs));
}

struct LocalizeResult {
  Eigen::VectorXd x_hat;
  PosteriorGmm posterior;
};

inline LocalizeResult localize_point(const PpamModel& model, const ObservationSet& obs) {
  LocalizeResult res;
  res.posterior = sparse_posterior(model, obs);
  res.x_hat = res.posterior.mean();
  return res;
}

}  // namespace vessl

#endif
