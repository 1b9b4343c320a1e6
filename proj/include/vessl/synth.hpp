#ifndef VESSL_SYNTH_HPP
#define VESSL_SYNTH_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <complex>
#include <vector>

#include "vessl/common.hpp"
#include "vessl/fft.hpp"
#include "vessl/ppam.hpp"
#include "vessl/spectro.hpp"

namespace vessl {

// Everything cue extraction needs to know; hashed into the container
// fingerprint so models and observations cannot be mixed across settings.
struct CueConfig {
  double window_ms = 64.0;
  double hop_ms = 8.0;
  double power_threshold_db = -40.0;
  BandConfig band;
};

// Parametric binaural receiver. Per-ear responses combine a frequency-scaled
// head-shadow term with a seeded low-order expansion in direction, giving
// smooth, bounded, left/right-asymmetric gains and sub-millisecond
// direction-dependent delays. Far field only: direction is the sole input.
class VirtualHead {
 public:
  static constexpr int kTerms = 9;
  static constexpr int kFreqOrders = 4;

  static VirtualHead make(std::uint64_t seed, double ear_spacing = 0.18,
                          double gain_scale = 0.15, double delay_scale_s = 25e-6) {
    VirtualHead h;
    h.ear_spacing_ = ear_spacing;
    Rng rng(seed);
    for (int ear = 0; ear < 2; ++ear) {
      for (int j = 0; j < kTerms; ++j) {
        for (int p = 0; p < kFreqOrders; ++p)
          h.gain_coef_[ear][j][p] =
              gain_scale * rng.normal() / ((1.0 + p) * (1.0 + 0.5 * j));
        h.delay_coef_[ear][j] = delay_scale_s * rng.normal() / (1.0 + j);
      }
    }
    return h;
  }

  // unit gain, zero delay on both ears
  static VirtualHead identity() {
    VirtualHead h;
    h.ear_spacing_ = 0.0;
    h.shadow_ = 0.0;
    for (int ear = 0; ear < 2; ++ear)
      for (int j = 0; j < kTerms; ++j) {
        h.delay_coef_[ear][j] = 0.0;
        for (int p = 0; p < kFreqOrders; ++p) h.gain_coef_[ear][j][p] = 0.0;
      }
    return h;
  }

  // ear: 0 left, 1 right
  std::complex<double> response(int ear, double f_hz, double az_deg, double el_deg) const {
    const double a = az_deg * M_PI / 180.0;
    const double e = el_deg * M_PI / 180.0;
    const std::array<double, kTerms> basis = direction_basis(a, e);
    const double nu = f_hz / 8000.0;

    const double side = (ear == 0 ? -1.0 : 1.0);
    double log_gain = shadow_ * side * std::sin(a) * std::cos(e) * std::sqrt(std::max(nu, 0.0));
    for (int j = 0; j < kTerms; ++j)
      for (int p = 0; p < kFreqOrders; ++p)
        log_gain += gain_coef_[ear][j][p] * std::cos(M_PI * p * nu) * basis[static_cast<std::size_t>(j)];

    double delay = side * (ear_spacing_ / (2.0 * kSpeedOfSound)) * std::sin(a) * std::cos(e);
    for (int j = 0; j < kTerms; ++j)
      delay += delay_coef_[ear][j] * basis[static_cast<std::size_t>(j)];

    const double phase = -2.0 * M_PI * f_hz * delay;
    return std::exp(log_gain) * std::complex<double>(std::cos(phase), std::sin(phase));
  }

  // interaural transfer function right/left
  std::complex<double> itf(double f_hz, double az_deg, double el_deg) const {
    return response(1, f_hz, az_deg, el_deg) / response(0, f_hz, az_deg, el_deg);
  }

  double ear_spacing() const { return ear_spacing_; }

 private:
  static constexpr double kSpeedOfSound = 343.0;

  static std::array<double, kTerms> direction_basis(double a, double e) {
    return {1.0,
            std::sin(a) * std::cos(e),
            std::cos(a) * std::cos(e),
            std::sin(e),
            std::sin(2.0 * a) * std::cos(e),
            std::cos(2.0 * a) * std::cos(e),
            std::sin(a) * std::sin(e),
            std::cos(a) * std::sin(e),
            std::cos(2.0 * e)};
  }

  double ear_spacing_ = 0.18;
  double shadow_ = 0.5;
  double gain_coef_[2][kTerms][kFreqOrders] = {};
  double delay_coef_[2][kTerms] = {};
};

struct SceneSource {
  double azimuth = 0.0;    // degrees, [-160, 160]
  double elevation = 0.0;  // degrees, [-60, 60]
  std::vector<double> signal;
};

struct Scene {
  std::vector<SceneSource> sources;
  double noise_level_db = -std::numeric_limits<double>::infinity();  // vs mixture rms
  std::uint64_t noise_seed = 0;
};

namespace detail {

inline void check_direction(double az, double el) {
  if (az < -160.0 || az > 160.0 || el < -60.0 || el > 60.0)
    throw Error(ErrorCategory::bad_args, "source direction outside supported range");
}

}  // namespace detail

// One source rendered through the head: per-bin complex response applied in
// the STFT domain, then resynthesis. Linear in the input signal.
inline AudioBuffer render_source(const VirtualHead& head, double az, double el,
                                 const std::vector<double>& signal, double sample_rate,
                                 double window_ms = 64.0, double hop_ms = 8.0) {
  detail::check_direction(az, el);
  const ComplexSpectrogram mono = stft_mono(signal, sample_rate, window_ms, hop_ms);

  AudioBuffer out;
  out.sample_rate = sample_rate;
  for (int ear = 0; ear < 2; ++ear) {
    ComplexSpectrogram spec = mono;
    const std::complex<double> h0 = head.response(ear, 0.0, az, el);
    spec.dc *= h0;
    for (int f = 0; f < spec.bins(); ++f) {
      const std::complex<double> h = head.response(ear, spec.bin_frequency(f + 1), az, el);
      spec.values.row(f) *= h;
    }
    auto samples = detail::istft_one(spec, signal.size());
    (ear == 0 ? out.left : out.right) = std::move(samples);
  }
  return out;
}

inline AudioBuffer render_scene(const VirtualHead& head, const Scene& scene,
                                double sample_rate, double window_ms = 64.0,
                                double hop_ms = 8.0) {
  if (scene.sources.empty())
    throw Error(ErrorCategory::bad_args, "scene has no sources");
  std::size_t n = 0;
  for (const auto& s : scene.sources) n = std::max(n, s.signal.size());

  AudioBuffer mix;
  mix.sample_rate = sample_rate;
  mix.left.assign(n, 0.0);
  mix.right.assign(n, 0.0);
  for (const auto& s : scene.sources) {
    std::vector<double> sig = s.signal;
    sig.resize(n, 0.0);
    const AudioBuffer one =
        render_source(head, s.azimuth, s.elevation, sig, sample_rate, window_ms, hop_ms);
    for (std::size_t i = 0; i < n; ++i) {
      mix.left[i] += one.left[i];
      mix.right[i] += one.right[i];
    }
  }

  if (std::isfinite(scene.noise_level_db)) {
    double power = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      power += mix.left[i] * mix.left[i] + mix.right[i] * mix.right[i];
    const double rms = std::sqrt(power / std::max<std::size_t>(1, 2 * n));
    const double sigma = rms * std::pow(10.0, scene.noise_level_db / 20.0);
    Rng rng(scene.noise_seed);
    for (std::size_t i = 0; i < n; ++i) {
      mix.left[i] += sigma * rng.normal();
      mix.right[i] += sigma * rng.normal();
    }
  }
  return mix;
}

// Draw a supervised set from a known model: x from the region mixture, the
// transform index from its conditional, then y through the affine piece plus
// diagonal noise.
inline TrainingSet sample_ppam(const PpamModel& model, int N, std::uint64_t seed) {
  model.validate();
  const int K = model.K(), L = model.L(), D = model.D();
  Rng rng(seed);

  std::vector<Eigen::MatrixXd> chol(static_cast<std::size_t>(K));
  std::vector<double> logdet(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(model.gamma[static_cast<std::size_t>(k)]);
    chol[static_cast<std::size_t>(k)] = llt.matrixL();
    logdet[static_cast<std::size_t>(k)] = detail::logdet_llt(llt);
  }
  const Eigen::VectorXd noise_sd = model.sigma2.cwiseSqrt();

  TrainingSet ts;
  ts.X.resize(N, L);
  ts.Y.resize(N, D);
  std::vector<double> logp(static_cast<std::size_t>(K));
  for (int n = 0; n < N; ++n) {
    const int k0 = static_cast<int>(rng.uniform_int(0, K - 1));
    Eigen::VectorXd u(L);
    for (int i = 0; i < L; ++i) u(i) = rng.normal();
    const Eigen::VectorXd x = model.c[static_cast<std::size_t>(k0)] +
                              chol[static_cast<std::size_t>(k0)] * u;

    for (int k = 0; k < K; ++k) {
      const Eigen::VectorXd d = x - model.c[static_cast<std::size_t>(k)];
      const Eigen::VectorXd s =
          chol[static_cast<std::size_t>(k)].triangularView<Eigen::Lower>().solve(d);
      logp[static_cast<std::size_t>(k)] =
          -0.5 * (logdet[static_cast<std::size_t>(k)] + s.squaredNorm());
    }
    const double lse = log_sum_exp(logp);
    double target = rng.uniform(), run = 0.0;
    int z = K - 1;
    for (int k = 0; k < K; ++k) {
      run += std::exp(logp[static_cast<std::size_t>(k)] - lse);
      if (run >= target) {
        z = k;
        break;
      }
    }

    Eigen::VectorXd y = model.A[static_cast<std::size_t>(z)] * x +
                        model.b[static_cast<std::size_t>(z)];
    for (int d = 0; d < D; ++d) y(d) += noise_sd(d) * rng.normal();
    ts.X.row(n) = x.transpose();
    ts.Y.row(n) = y.transpose();
  }
  return ts;
}

inline std::vector<double> white_noise(std::size_t n, std::uint64_t seed,
                                       double amplitude = 0.3) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = amplitude * rng.normal();
  return x;
}

struct BurstOptions {
  int min_bursts = 6;
  int max_bursts = 12;
  double min_len_s = 0.06;
  double max_len_s = 0.15;
  double min_freq_hz = 300.0;
  double max_freq_hz = 4000.0;
  double min_bw_hz = 500.0;
  double max_bw_hz = 2500.0;
};

// Speech-like test signal: a handful of band-limited noise bursts, sparse in
// both time and frequency.
inline std::vector<double> noise_bursts(std::size_t n, double sample_rate,
                                        std::uint64_t seed, const BurstOptions& opts = {}) {
  Rng rng(seed);
  std::vector<double> out(n, 0.0);
  const int nb = static_cast<int>(rng.uniform_int(opts.min_bursts, opts.max_bursts));
  for (int b = 0; b < nb; ++b) {
    const std::size_t len = static_cast<std::size_t>(
        rng.uniform(opts.min_len_s, opts.max_len_s) * sample_rate);
    if (len < 8 || len >= n) continue;
    const std::size_t t0 = static_cast<std::size_t>(rng.uniform_int(
        0, static_cast<std::int64_t>(n - len - 1)));
    const double f_lo = rng.uniform(opts.min_freq_hz, opts.max_freq_hz);
    const double f_hi = std::min(f_lo + rng.uniform(opts.min_bw_hz, opts.max_bw_hz),
                                 0.45 * sample_rate);

    std::size_t m = 1;
    while (m < 2 * len) m <<= 1;
    std::vector<std::complex<double>> seg(m, 0.0);
    for (std::size_t i = 0; i < len; ++i) seg[i] = rng.normal();
    fft_inplace(seg, false);
    for (std::size_t i = 0; i <= m / 2; ++i) {
      const double f = static_cast<double>(i) * sample_rate / static_cast<double>(m);
      if (f < f_lo || f > f_hi) {
        seg[i] = 0.0;
        if (i > 0 && i < m / 2) seg[m - i] = 0.0;
      } else if (i > 0 && i < m / 2) {
        seg[m - i] = std::conj(seg[i]);
      }
    }
    fft_inplace(seg, true);
    for (std::size_t i = 0; i < len; ++i) {
      const double fade = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / len));  // Hann envelope
      out[t0 + i] += 0.3 * fade * seg[i].real();
    }
  }
  return out;
}

struct GridSpec {
  double az_lo = -160.0, az_hi = 160.0;
  double el_lo = -60.0, el_hi = 60.0;
  double step = 2.0;

  int n_az() const { return static_cast<int>(std::floor((az_hi - az_lo) / step + 1e-9)) + 1; }
  int n_el() const { return static_cast<int>(std::floor((el_hi - el_lo) / step + 1e-9)) + 1; }
};

// White-noise rendering over a direction grid, one mean ILPD vector per
// direction. One shared noise realization keeps the set reproducible and the
// extraction identical to the runtime pipeline.
inline TrainingSet build_training_grid(const VirtualHead& head, const GridSpec& grid,
                                       std::uint64_t seed, const CueConfig& cue = {},
                                       double sample_rate = 16000.0,
                                       double noise_duration_s = 0.5,
                                       unsigned threads = 0) {
  const int na = grid.n_az(), ne = grid.n_el();
  const int N = na * ne;
  const std::vector<double> noise =
      white_noise(static_cast<std::size_t>(noise_duration_s * sample_rate), seed);

  TrainingSet ts;
  ts.X.resize(N, 2);
  int D = -1;
  {
    // probe one direction to size Y
    const AudioBuffer probe = render_source(head, grid.az_lo, grid.el_lo, noise,
                                            sample_rate, cue.window_ms, cue.hop_ms);
    auto [sl, sr] = stft(probe, cue.window_ms, cue.hop_ms);
    const auto cues = interaural_cues(sl, sr, cue.power_threshold_db);
    D = assemble_ilpd(cues, cue.band).dim();
  }
  ts.Y.resize(N, D);

  parallel_for(static_cast<std::size_t>(N), threads, [&](std::size_t idx) {
    const int ia = static_cast<int>(idx) / ne;
    const int ie = static_cast<int>(idx) % ne;
    const double az = grid.az_lo + ia * grid.step;
    const double el = grid.el_lo + ie * grid.step;
    const AudioBuffer rec =
        render_source(head, az, el, noise, sample_rate, cue.window_ms, cue.hop_ms);
    auto [sl, sr] = stft(rec, cue.window_ms, cue.hop_ms);
    const auto cues = interaural_cues(sl, sr, cue.power_threshold_db);
    const auto obs = assemble_ilpd(cues, cue.band);
    const IlpdObservation mean = mean_ilpd(obs.frames);
    ts.X(static_cast<int>(idx), 0) = az;
    ts.X(static_cast<int>(idx), 1) = el;
    ts.Y.row(static_cast<int>(idx)) = mean.y.transpose();
  });
  return ts;
}

// Random decimation emulating a sparser acquisition grid: keeps a fraction
// (base_step/target_step)^2 of the rows.
inline TrainingSet decimate_grid(const TrainingSet& ts, double base_step,
                                 double target_step, std::uint64_t seed) {
  const int N = static_cast<int>(ts.X.rows());
  const double frac = (base_step / target_step) * (base_step / target_step);
  const int keep = std::max(1, static_cast<int>(std::lround(N * frac)));

  std::vector<int> idx(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());

  TrainingSet out;
  out.X.resize(keep, ts.X.cols());
  out.Y.resize(keep, ts.Y.cols());
  for (int i = 0; i < keep; ++i) {
    out.X.row(i) = ts.X.row(idx[static_cast<std::size_t>(i)]);
    out.Y.row(i) = ts.Y.row(idx[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace vessl

#endif
