#ifndef VESSL_SPECTRO_HPP
#define VESSL_SPECTRO_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <utility>
#include <vector>

#include "vessl/common.hpp"
#include "vessl/fft.hpp"

namespace vessl {

struct AudioBuffer {
  std::vector<double> left;
  std::vector<double> right;
  double sample_rate = 16000.0;

  std::size_t n_samples() const { return left.size(); }

  void validate() const {
    if (left.size() != right.size())
      throw Error(ErrorCategory::shape_mismatch, "stereo channels differ in length");
    if (!(sample_rate > 0.0))
      throw Error(ErrorCategory::bad_args, "sample_rate must be positive");
  }
};

// One channel's complex spectrogram. `values` holds DFT bins 1..F (the DC bin
// carries no interaural information and is kept aside in `dc`, so masking and
// cue extraction never see it while resynthesis stays exact).
struct ComplexSpectrogram {
  Eigen::MatrixXcd values;   // F x T
  Eigen::VectorXcd dc;       // T
  double freq_resolution = 0.0;  // Hz per bin
  double hop = 0.0;              // seconds

  int bins() const { return static_cast<int>(values.rows()); }
  int frames() const { return static_cast<int>(values.cols()); }
  int fft_size() const { return 2 * bins(); }
  double sample_rate() const { return freq_resolution * fft_size(); }
  int hop_samples() const { return static_cast<int>(std::lround(hop * sample_rate())); }
  // 1-based DFT bin index -> center frequency
  double bin_frequency(int bin) const { return freq_resolution * bin; }
};

namespace detail {

inline std::vector<double> hann_periodic(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n));
  return w;
}

inline ComplexSpectrogram stft_one(const std::vector<double>& x, double sr,
                                   int win, int hop) {
  const int half = win / 2;
  const int T = static_cast<int>(x.size()) / hop + 1;
  const int F = win / 2;

  ComplexSpectrogram spec;
  spec.values.resize(F, T);
  spec.dc.resize(T);
  spec.freq_resolution = sr / win;
  spec.hop = hop / sr;

  const auto w = hann_periodic(win);
  std::vector<std::complex<double>> frame(win);
  for (int t = 0; t < T; ++t) {
    const long center = static_cast<long>(t) * hop;
    for (int i = 0; i < win; ++i) {
      const long n = center - half + i;
      const double v =
          (n >= 0 && n < static_cast<long>(x.size())) ? x[static_cast<std::size_t>(n)] : 0.0;
      frame[i] = v * w[i];
    }
    fft_inplace(frame, false);
    spec.dc(t) = frame[0];
    for (int f = 0; f < F; ++f) spec.values(f, t) = frame[f + 1];
  }
  return spec;
}

}  // namespace detail

// Centered frames at multiples of the hop, zero padding at the borders;
// a signal of n samples yields floor(n/hop)+1 frames (126 for 1 s at 16 kHz
// with the 64 ms / 8 ms defaults). Window: periodic Hann.
inline std::pair<ComplexSpectrogram, ComplexSpectrogram> stft(
    const AudioBuffer& audio, double window_ms = 64.0, double hop_ms = 8.0) {
  audio.validate();
  const int win = static_cast<int>(std::lround(audio.sample_rate * window_ms / 1000.0));
  const int hop = static_cast<int>(std::lround(audio.sample_rate * hop_ms / 1000.0));
  if (win <= 0 || hop <= 0 || (win & (win - 1)) != 0)
    throw Error(ErrorCategory::bad_args, "window must map to a power-of-two sample count");
  if (audio.n_samples() < static_cast<std::size_t>(win))
    throw Error(ErrorCategory::length_error, "audio shorter than one analysis window");
  return {detail::stft_one(audio.left, audio.sample_rate, win, hop),
          detail::stft_one(audio.right, audio.sample_rate, win, hop)};
}

inline ComplexSpectrogram stft_mono(const std::vector<double>& samples, double sr,
                                    double window_ms = 64.0, double hop_ms = 8.0) {
  const int win = static_cast<int>(std::lround(sr * window_ms / 1000.0));
  const int hop = static_cast<int>(std::lround(sr * hop_ms / 1000.0));
  if (win <= 0 || hop <= 0 || (win & (win - 1)) != 0)
    throw Error(ErrorCategory::bad_args, "window must map to a power-of-two sample count");
  if (samples.size() < static_cast<std::size_t>(win))
    throw Error(ErrorCategory::length_error, "audio shorter than one analysis window");
  return detail::stft_one(samples, sr, win, hop);
}

namespace detail {

inline std::vector<double> istft_one(const ComplexSpectrogram& spec,
                                     std::size_t original_length) {
  const int win = spec.fft_size();
  const int hop = spec.hop_samples();
  const int half = win / 2;
  const int F = spec.bins();
  const int T = spec.frames();

  const auto w = hann_periodic(win);
  std::vector<double> acc(original_length, 0.0);
  std::vector<double> wsum(original_length, 0.0);
  std::vector<std::complex<double>> frame(win);

  for (int t = 0; t < T; ++t) {
    frame[0] = spec.dc(t);
    for (int f = 1; f <= F; ++f) frame[f] = spec.values(f - 1, t);
    for (int f = 1; f < F; ++f) frame[win - f] = std::conj(frame[f]);
    fft_inplace(frame, true);
    const long center = static_cast<long>(t) * hop;
    for (int i = 0; i < win; ++i) {
      const long n = center - half + i;
      if (n < 0 || n >= static_cast<long>(original_length)) continue;
      acc[static_cast<std::size_t>(n)] += frame[i].real() * w[i];
      wsum[static_cast<std::size_t>(n)] += w[i] * w[i];
    }
  }
  for (std::size_t n = 0; n < original_length; ++n)
    if (wsum[n] > 1e-12) acc[n] /= wsum[n];
  return acc;
}

}  // namespace detail

// Weighted overlap-add with the analysis window reapplied at synthesis and
// the accumulated squared-window sum divided out, so stft -> istft is an
// identity up to floating point on every covered sample.
inline AudioBuffer istft(const ComplexSpectrogram& spec_left,
                         const ComplexSpectrogram& spec_right,
                         std::size_t original_length) {
  if (spec_left.bins() != spec_right.bins() || spec_left.frames() != spec_right.frames())
    throw Error(ErrorCategory::shape_mismatch, "left/right spectrogram shapes differ");
  AudioBuffer out;
  out.sample_rate = spec_left.sample_rate();
  out.left = detail::istft_one(spec_left, original_length);
  out.right = detail::istft_one(spec_right, original_length);
  return out;
}

// Integer-factor decimation with a windowed-sinc low-pass; fractional
// resampling is out of scope.
inline std::vector<double> decimate_integer(const std::vector<double>& x, int factor) {
  if (factor < 1) throw Error(ErrorCategory::bad_args, "decimation factor must be >= 1");
  if (factor == 1) return x;
  const int half = 32;
  const double cutoff = 0.45 / factor;
  std::vector<double> taps(2 * half + 1);
  double norm = 0.0;
  for (int i = -half; i <= half; ++i) {
    const double t = i == 0 ? 2.0 * cutoff
                            : std::sin(2.0 * M_PI * cutoff * i) / (M_PI * i);
    const double w = 0.5 * (1.0 + std::cos(M_PI * i / (half + 1)));
    taps[static_cast<std::size_t>(i + half)] = t * w;
    norm += t * w;
  }
  for (auto& t : taps) t /= norm;

  std::vector<double> out(x.size() / static_cast<std::size_t>(factor));
  for (std::size_t o = 0; o < out.size(); ++o) {
    const long center = static_cast<long>(o) * factor;
    double acc = 0.0;
    for (int i = -half; i <= half; ++i) {
      const long n = center + i;
      if (n >= 0 && n < static_cast<long>(x.size()))
        acc += taps[static_cast<std::size_t>(i + half)] * x[static_cast<std::size_t>(n)];
    }
    out[o] = acc;
  }
  return out;
}

// ILD in dB, IPD as a unit complex number, availability mask chi.
// Entries where chi is 0 hold placeholder values and must not be read.
struct InterauralSpectrogram {
  Eigen::MatrixXd alpha;                             // F x T, dB
  Eigen::MatrixXcd phi;                              // F x T, |phi| = 1 where chi = 1
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> chi;  // F x T
  double freq_resolution = 0.0;
  double hop = 0.0;

  int bins() const { return static_cast<int>(alpha.rows()); }
  int frames() const { return static_cast<int>(alpha.cols()); }
};

// chi is 1 only where both channels carry power above `power_threshold_db`
// relative to the loudest cell of either channel, which keeps the ratio away
// from 0/0 at silent cells.
inline InterauralSpectrogram interaural_cues(const ComplexSpectrogram& left,
                                             const ComplexSpectrogram& right,
                                             double power_threshold_db = -40.0) {
  if (left.bins() != right.bins() || left.frames() != right.frames())
    throw Error(ErrorCategory::shape_mismatch, "left/right spectrogram shapes differ");
  const int F = left.bins();
  const int T = left.frames();

  InterauralSpectrogram out;
  out.alpha.setZero(F, T);
  out.phi.setOnes(F, T);
  out.chi.setZero(F, T);
  out.freq_resolution = left.freq_resolution;
  out.hop = left.hop;

  double max_power = 0.0;
  for (int t = 0; t < T; ++t)
    for (int f = 0; f < F; ++f)
      max_power = std::max({max_power, std::norm(left.values(f, t)),
                            std::norm(right.values(f, t))});
  if (max_power <= 0.0) return out;  // silent input: everything missing

  const double floor_power = max_power * std::pow(10.0, power_threshold_db / 10.0);
  for (int t = 0; t < T; ++t) {
    for (int f = 0; f < F; ++f) {
      const double pl = std::norm(left.values(f, t));
      const double pr = std::norm(right.values(f, t));
      if (pl > floor_power && pr > floor_power) {
        const std::complex<double> ratio = right.values(f, t) / left.values(f, t);
        const double mag = std::abs(ratio);
        out.alpha(f, t) = 20.0 * std::log10(mag);
        out.phi(f, t) = ratio / mag;
        out.chi(f, t) = 1;
      }
    }
  }
  return out;
}

// Frequency-band selection, 1-based inclusive DFT bin indices.
struct BandConfig {
  int ild_lo = 1;
  int ild_hi = 512;
  int ipd_lo = 20;
  int ipd_hi = 128;

  int n_ild() const { return ild_hi - ild_lo + 1; }
  int n_ipd() const { return ipd_hi - ipd_lo + 1; }

  void validate(int F) const {
    if (ild_lo < 1 || ild_hi > F || ild_lo > ild_hi || ipd_lo < 1 || ipd_hi > F ||
        ipd_lo > ipd_hi)
      throw Error(ErrorCategory::bad_args, "band limits outside [1, F] or empty");
  }

  // full-spectrum ILD; IPD bins whose center frequency lies in [300, 2000] Hz
  static BandConfig defaults(int F, double freq_resolution) {
    BandConfig b;
    b.ild_lo = 1;
    b.ild_hi = F;
    b.ipd_lo = static_cast<int>(std::ceil(300.0 / freq_resolution - 1e-9));
    b.ipd_hi = static_cast<int>(std::floor(2000.0 / freq_resolution + 1e-9));
    b.ipd_lo = std::max(1, b.ipd_lo);
    b.ipd_hi = std::min(F, b.ipd_hi);
    return b;
  }
};

enum class CueKind : std::uint8_t { Ild = 0, IpdRe = 1, IpdIm = 2 };

struct CueDim {
  CueKind kind;
  int bin;  // 1-based DFT bin
};

// Layout of the assembled observation vector:
//   [ ILD over ild band | IPD real over ipd band | IPD imag over ipd band ]
struct IlpdLayout {
  BandConfig band;
  int F = 512;

  int dim() const { return band.n_ild() + 2 * band.n_ipd(); }

  CueDim dim_map(int d) const {
    const int n_ild = band.n_ild();
    const int n_ipd = band.n_ipd();
    if (d < 0 || d >= dim())
      throw Error(ErrorCategory::bad_args, "cue dimension out of range");
    if (d < n_ild) return {CueKind::Ild, band.ild_lo + d};
    d -= n_ild;
    if (d < n_ipd) return {CueKind::IpdRe, band.ipd_lo + d};
    return {CueKind::IpdIm, band.ipd_lo + (d - n_ipd)};
  }

  // -1 when the bin is outside the ILD band
  int ild_dim_of_bin(int bin) const {
    if (bin < band.ild_lo || bin > band.ild_hi) return -1;
    return bin - band.ild_lo;
  }
};

struct IlpdObservation {
  Eigen::VectorXd y;
  std::vector<std::uint8_t> avail;
};

struct ObservationSet {
  IlpdLayout layout;
  std::vector<IlpdObservation> frames;

  int dim() const { return layout.dim(); }
  int n_frames() const { return static_cast<int>(frames.size()); }
};

inline ObservationSet assemble_ilpd(const InterauralSpectrogram& ispec,
                                    const BandConfig& band) {
  const int F = ispec.bins();
  band.validate(F);

  ObservationSet out;
  out.layout.band = band;
  out.layout.F = F;
  const int D = out.layout.dim();
  const int n_ild = band.n_ild();
  const int n_ipd = band.n_ipd();

  out.frames.resize(static_cast<std::size_t>(ispec.frames()));
  for (int t = 0; t < ispec.frames(); ++t) {
    IlpdObservation& obs = out.frames[static_cast<std::size_t>(t)];
    obs.y.setZero(D);
    obs.avail.assign(static_cast<std::size_t>(D), 0);
    for (int i = 0; i < n_ild; ++i) {
      const int f = band.ild_lo - 1 + i;
      obs.y(i) = ispec.alpha(f, t);
      obs.avail[static_cast<std::size_t>(i)] = ispec.chi(f, t);
    }
    for (int i = 0; i < n_ipd; ++i) {
      const int f = band.ipd_lo - 1 + i;
      obs.y(n_ild + i) = ispec.phi(f, t).real();
      obs.y(n_ild + n_ipd + i) = ispec.phi(f, t).imag();
      obs.avail[static_cast<std::size_t>(n_ild + i)] = ispec.chi(f, t);
      obs.avail[static_cast<std::size_t>(n_ild + n_ipd + i)] = ispec.chi(f, t);
    }
  }
  return out;
}

// Per-dimension mean over the frames where the dimension is available.
// A dimension that is never available stays flagged unavailable.
inline IlpdObservation mean_ilpd(const std::vector<IlpdObservation>& frames) {
  if (frames.empty())
    throw Error(ErrorCategory::bad_args, "mean over zero frames");
  const int D = static_cast<int>(frames[0].y.size());
  IlpdObservation out;
  out.y.setZero(D);
  out.avail.assign(static_cast<std::size_t>(D), 0);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(D);
  for (const auto& fr : frames) {
    if (fr.y.size() != D)
      throw Error(ErrorCategory::shape_mismatch, "inconsistent observation dimension");
    for (int d = 0; d < D; ++d) {
      if (fr.avail[static_cast<std::size_t>(d)]) {
        out.y(d) += fr.y(d);
        count(d) += 1.0;
      }
    }
  }
  for (int d = 0; d < D; ++d) {
    if (count(d) > 0.0) {
      out.y(d) /= count(d);
      out.avail[static_cast<std::size_t>(d)] = 1;
    }
  }
  return out;
}

}  // namespace vessl

#endif
