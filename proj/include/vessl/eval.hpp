#ifndef VESSL_EVAL_HPP
#define VESSL_EVAL_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "vessl/common.hpp"
#include "vessl/spectro.hpp"

namespace vessl {

// absolute per-coordinate errors; azimuth wrapped onto [0, 180]
inline std::pair<double, double> angular_error(const Eigen::VectorXd& x_hat,
                                               const Eigen::VectorXd& x_true) {
  double daz = std::fmod(std::abs(x_hat(0) - x_true(0)), 360.0);
  if (daz > 180.0) daz = 360.0 - daz;
  const double del = std::abs(x_hat(1) - x_true(1));
  return {daz, del};
}

// Assignment of estimates to ground-truth directions minimizing the summed
// angular error, by exhaustive search (intended for small M).
inline std::vector<int> permutation_align(const std::vector<Eigen::VectorXd>& estimates,
                                          const std::vector<Eigen::VectorXd>& truths) {
  const int M = static_cast<int>(estimates.size());
  if (truths.size() != estimates.size())
    throw Error(ErrorCategory::bad_args, "estimate/truth counts differ");
  if (M > 8) throw Error(ErrorCategory::bad_args, "exhaustive alignment limited to M <= 8");

  std::vector<int> perm(static_cast<std::size_t>(M));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (int i = 0; i < M; ++i) {
      const auto [daz, del] = angular_error(estimates[static_cast<std::size_t>(i)],
                                            truths[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
      cost += daz + del;
    }
    if (cost < best_cost) {
      best_cost = cost;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Ground-truth assignment: each cell goes to the source with the largest
// summed left+right power there; ties to the lowest index.
inline Eigen::MatrixXi oracle_mask(
    const std::vector<std::pair<ComplexSpectrogram, ComplexSpectrogram>>& true_sources) {
  if (true_sources.empty())
    throw Error(ErrorCategory::bad_args, "oracle mask needs at least one source");
  const int F = true_sources[0].first.bins();
  const int T = true_sources[0].first.frames();
  Eigen::MatrixXi mask(F, T);
  for (int t = 0; t < T; ++t) {
    for (int f = 0; f < F; ++f) {
      int best_m = 0;
      double best = -1.0;
      for (int m = 0; m < static_cast<int>(true_sources.size()); ++m) {
        const auto& [sl, sr] = true_sources[static_cast<std::size_t>(m)];
        const double p = std::norm(sl.values(f, t)) + std::norm(sr.values(f, t));
        if (p > best) {
          best = p;
          best_m = m;
        }
      }
      mask(f, t) = best_m;
    }
  }
  return mask;
}

struct SdrScore {
  double sdr_db = 0.0;
  double sir_db = 0.0;
  bool defined = false;
};

constexpr double kSdrCeilingDb = 100.0;

// Instantaneous least-squares decomposition: the estimate is projected onto
// the true source, the residual onto the span of the interferers, and what
// remains counts as artifact. SDR = target / (interference + artifact),
// SIR = target / interference, both capped at +-100 dB.
inline SdrScore sdr_sir(const std::vector<double>& estimate,
                        const std::vector<double>& true_source,
                        const std::vector<std::vector<double>>& interferers) {
  const std::size_t n = estimate.size();
  if (true_source.size() != n)
    throw Error(ErrorCategory::shape_mismatch, "estimate/reference lengths differ");
  for (const auto& i : interferers)
    if (i.size() != n)
      throw Error(ErrorCategory::shape_mismatch, "interferer length differs");

  using Map = Eigen::Map<const Eigen::VectorXd>;
  const Map e(estimate.data(), static_cast<Eigen::Index>(n));
  const Map s(true_source.data(), static_cast<Eigen::Index>(n));

  SdrScore score;
  const double s2 = s.squaredNorm();
  if (s2 <= 0.0) return score;  // zero-energy target: undefined

  const Eigen::VectorXd target = (e.dot(s) / s2) * s;
  Eigen::VectorXd resid = e - target;

  Eigen::VectorXd interf = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (!interferers.empty()) {
    Eigen::MatrixXd I(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(interferers.size()));
    for (std::size_t j = 0; j < interferers.size(); ++j)
      I.col(static_cast<Eigen::Index>(j)) = Map(interferers[j].data(), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd beta =
        I.colPivHouseholderQr().solve(resid);
    interf = I * beta;
  }
  const Eigen::VectorXd artifact = resid - interf;

  auto to_db = [](double num, double den) {
    if (den <= 0.0) return kSdrCeilingDb;
    const double v = 10.0 * std::log10(num / den);
    return std::clamp(v, -kSdrCeilingDb, kSdrCeilingDb);
  };
  score.sdr_db = to_db(target.squaredNorm(), interf.squaredNorm() + artifact.squaredNorm());
  score.sir_db = to_db(target.squaredNorm(), interf.squaredNorm());
  score.defined = true;
  return score;
}

// stereo convenience: channels concatenated into one vector
inline SdrScore sdr_sir(const AudioBuffer& estimate, const AudioBuffer& true_source,
                        const std::vector<AudioBuffer>& interferers) {
  auto cat = [](const AudioBuffer& a) {
    std::vector<double> v = a.left;
    v.insert(v.end(), a.right.begin(), a.right.end());
    return v;
  };
  std::vector<std::vector<double>> icat;
  icat.reserve(interferers.size());
  for (const auto& i : interferers) icat.push_back(cat(i));
  return sdr_sir(cat(estimate), cat(true_source), icat);
}

// Delimited result table with an Avg +- Std summary row, mirrored as text for
// plotting.
struct MetricTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void write(const std::string& path, const std::string& comment = "") const {
    std::ofstream f(path);
    if (!f) throw Error(ErrorCategory::io_error, "cannot write " + path);
    if (!comment.empty()) f << "# " << comment << "\n";
    f << "row";
    for (const auto& c : columns) f << "\t" << c;
    f << "\n";
    char buf[64];
    for (std::size_t r = 0; r < rows.size(); ++r) {
      f << r;
      for (double v : rows[r]) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        f << "\t" << buf;
      }
      f << "\n";
    }
    if (!rows.empty()) {
      const std::size_t nc = columns.size();
      std::vector<double> mean(nc, 0.0), sd(nc, 0.0);
      for (const auto& row : rows)
        for (std::size_t c = 0; c < nc; ++c) mean[c] += row[c];
      for (auto& m : mean) m /= static_cast<double>(rows.size());
      for (const auto& row : rows)
        for (std::size_t c = 0; c < nc; ++c) {
          const double d = row[c] - mean[c];
          sd[c] += d * d;
        }
      f << "avg";
      for (std::size_t c = 0; c < nc; ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", mean[c]);
        f << "\t" << buf;
      }
      f << "\nstd";
      for (std::size_t c = 0; c < nc; ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g",
                      std::sqrt(sd[c] / static_cast<double>(rows.size())));
        f << "\t" << buf;
      }
      f << "\n";
    }
  }
};

}  // namespace vessl

#endif
