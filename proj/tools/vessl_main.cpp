// Command-line front end: simulate / extract / train / localize / separate /
// embed / eval. All commands are deterministic given the same config and
// seed; wall-clock timings go to a separate timings.txt so every other
// output is byte-reproducible.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vessl/config.hpp"
#include "vessl/container.hpp"
#include "vessl/eval.hpp"
#include "vessl/localize.hpp"
#include "vessl/manifold.hpp"
#include "vessl/ppam.hpp"
#include "vessl/spectro.hpp"
#include "vessl/synth.hpp"
#include "vessl/vessl.hpp"
#include "vessl/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vessl;

namespace {

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::bad_args: return 2;
    case ErrorCategory::fingerprint_mismatch: return 3;
    case ErrorCategory::missing_file: return 4;
    case ErrorCategory::malformed_config: return 5;
    case ErrorCategory::shape_mismatch:
    case ErrorCategory::length_error:
    case ErrorCategory::numeric_error: return 6;
    case ErrorCategory::io_error: return 7;
  }
  return 1;
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
  unsigned threads = 0;
  bool threads_set = false;

  RunConfig load() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::from_file(config_path);
    if (seed_set) cfg.seed = seed;
    if (threads_set) cfg.threads = threads;
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration (json)")
      ->envname("VESSL_CONFIG");
  cmd->add_option("--out", args.out_dir, "output directory")->envname("VESSL_OUT");
  cmd->add_option("--seed", args.seed, "seed override")
      ->envname("VESSL_SEED")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--threads", args.threads, "worker threads (0 = auto)")
      ->envname("VESSL_THREADS")
      ->each([&args](const std::string&) { args.threads_set = true; });
}

AudioBuffer load_stereo(const std::string& in, const std::string& right,
                        double target_rate) {
  AudioBuffer buf;
  if (!right.empty()) {
    const WavData l = read_wav(in);
    const WavData r = read_wav(right);
    if (l.channels.size() != 1 || r.channels.size() != 1)
      throw Error(ErrorCategory::bad_args, "mono pair expected with --right");
    if (l.sample_rate != r.sample_rate)
      throw Error(ErrorCategory::bad_args, "sample rates differ between channels");
    buf.left = l.channels[0];
    buf.right = r.channels[0];
    buf.sample_rate = l.sample_rate;
  } else {
    const WavData w = read_wav(in);
    if (w.channels.size() != 2)
      throw Error(ErrorCategory::bad_args, "stereo file expected (or pass --right)");
    buf.left = w.channels[0];
    buf.right = w.channels[1];
    buf.sample_rate = w.sample_rate;
  }
  if (buf.sample_rate != target_rate) {
    const double ratio = buf.sample_rate / target_rate;
    const int factor = static_cast<int>(std::lround(ratio));
    if (factor < 1 || std::abs(ratio - factor) > 1e-9)
      throw Error(ErrorCategory::bad_args,
                  "input rate is not an integer multiple of the configured rate");
    buf.left = decimate_integer(buf.left, factor);
    buf.right = decimate_integer(buf.right, factor);
    buf.sample_rate = target_rate;
  }
  buf.validate();
  return buf;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCategory::io_error, "cannot write " + path);
  f << content;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string config_comment(const RunConfig& cfg) {
  return "# config: " + cfg.to_json().dump() + "\n";
}

void write_run_config(const std::string& dir, const RunConfig& cfg) {
  write_text((fs::path(dir) / "run_config.json").string(), cfg.to_json().dump(2) + "\n");
}

// gridded log-density of a direction-space GMM, for plotting
std::string gmm_grid_tsv(const Eigen::VectorXd& weights,
                         const std::vector<Eigen::VectorXd>& means,
                         const std::vector<Eigen::MatrixXd>& covs) {
  std::string grid = "# azimuth\televation\tlog_density\n";
  for (double az = -160.0; az <= 160.0 + 1e-9; az += 4.0) {
    for (double el = -60.0; el <= 60.0 + 1e-9; el += 4.0) {
      double density = 0.0;
      for (int k = 0; k < weights.size(); ++k) {
        const auto& m = means[static_cast<std::size_t>(k)];
        const auto& V = covs[static_cast<std::size_t>(k)];
        Eigen::Vector2d d(az - m(0), el - m(1));
        const double q = d.dot(V.inverse() * d);
        density += weights(k) * std::exp(-0.5 * q) /
                   (2.0 * M_PI * std::sqrt(V.determinant()));
      }
      grid += fmt(az) + "\t" + fmt(el) + "\t" + fmt(std::log(density + 1e-300)) + "\n";
    }
  }
  return grid;
}

void put_spectrogram(ArrayContainer& c, const std::string& prefix,
                     const ComplexSpectrogram& s) {
  const int F = s.bins(), T = s.frames();
  Eigen::MatrixXd re(F + 1, T), im(F + 1, T);
  for (int t = 0; t < T; ++t) {
    re(0, t) = s.dc(t).real();
    im(0, t) = s.dc(t).imag();
    for (int f = 0; f < F; ++f) {
      re(f + 1, t) = s.values(f, t).real();
      im(f + 1, t) = s.values(f, t).imag();
    }
  }
  c.put_matrix(prefix + "re", re);
  c.put_matrix(prefix + "im", im);
}

ComplexSpectrogram get_spectrogram(const ArrayContainer& c, const std::string& prefix,
                                   double freq_resolution, double hop) {
  const Eigen::MatrixXd re = c.get_matrix(prefix + "re");
  const Eigen::MatrixXd im = c.get_matrix(prefix + "im");
  ComplexSpectrogram s;
  const int F = static_cast<int>(re.rows()) - 1;
  const int T = static_cast<int>(re.cols());
  s.values.resize(F, T);
  s.dc.resize(T);
  s.freq_resolution = freq_resolution;
  s.hop = hop;
  for (int t = 0; t < T; ++t) {
    s.dc(t) = {re(0, t), im(0, t)};
    for (int f = 0; f < F; ++f) s.values(f, t) = {re(f + 1, t), im(f + 1, t)};
  }
  return s;
}

ObservationSet extract_observations(const AudioBuffer& buf, const RunConfig& cfg) {
  auto [sl, sr] = stft(buf, cfg.cue.window_ms, cfg.cue.hop_ms);
  const InterauralSpectrogram cues =
      interaural_cues(sl, sr, cfg.cue.power_threshold_db);
  return assemble_ilpd(cues, cfg.cue.band);
}

void save_observations(const std::string& path, const ObservationSet& obs,
                       const RunConfig& cfg) {
  const DenseObs d = DenseObs::from(obs);
  ArrayContainer c;
  c.fingerprint = cfg.fingerprint();
  c.put_matrix("Y", d.Y);
  c.put_matrix("avail", d.chi);
  c.put_scalar("F", obs.layout.F);
  c.put_bytes("run_config", cfg.to_json().dump(2));
  c.save(path);
}

ObservationSet load_observations(const std::string& path, const RunConfig& cfg) {
  const ArrayContainer c = ArrayContainer::load(path);
  if (c.fingerprint != cfg.fingerprint())
    throw Error(ErrorCategory::fingerprint_mismatch,
                "observation file was extracted under a different cue configuration");
  const Eigen::MatrixXd Y = c.get_matrix("Y");
  const Eigen::MatrixXd avail = c.get_matrix("avail");
  ObservationSet obs;
  obs.layout.band = cfg.cue.band;
  obs.layout.F = static_cast<int>(c.get_scalar("F"));
  const int D = static_cast<int>(Y.rows()), T = static_cast<int>(Y.cols());
  if (D != obs.layout.dim())
    throw Error(ErrorCategory::shape_mismatch, "observation dimension mismatch");
  obs.frames.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    obs.frames[static_cast<std::size_t>(t)].y = Y.col(t);
    obs.frames[static_cast<std::size_t>(t)].avail.resize(static_cast<std::size_t>(D));
    for (int dd = 0; dd < D; ++dd)
      obs.frames[static_cast<std::size_t>(t)].avail[static_cast<std::size_t>(dd)] =
          avail(dd, t) > 0.5 ? 1 : 0;
  }
  return obs;
}

// ---------------------------------------------------------------- simulate

std::vector<double> make_signal(const json& sig, double sr, double duration_s,
                                std::uint64_t seed) {
  const std::string kind = sig.value("kind", "white");
  const std::size_t n = static_cast<std::size_t>(sig.value("duration_s", duration_s) * sr);
  if (kind == "white") return white_noise(n, seed);
  if (kind == "bursts") {
    BurstOptions opts;
    opts.min_bursts = sig.value("min_bursts", opts.min_bursts);
    opts.max_bursts = sig.value("max_bursts", opts.max_bursts);
    return noise_bursts(n, sr, seed, opts);
  }
  if (kind == "wav") {
    const WavData w = read_wav(sig.at("path").get<std::string>());
    if (w.channels.empty()) throw Error(ErrorCategory::io_error, "empty wav");
    return w.channels[0];
  }
  throw Error(ErrorCategory::malformed_config, "unknown signal kind: " + kind);
}

int cmd_simulate(const CommonArgs& common, const std::string& scene_path) {
  RunConfig cfg = common.load();
  std::ifstream f(scene_path);
  if (!f) throw Error(ErrorCategory::missing_file, "cannot open scene " + scene_path);
  json scene_json;
  try {
    f >> scene_json;
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::malformed_config, e.what());
  }

  fs::create_directories(common.out_dir);
  const std::uint64_t seed = common.seed_set ? common.seed : scene_json.value("seed", cfg.seed);
  const double sr = scene_json.value("sample_rate", cfg.sample_rate);
  const VirtualHead head = VirtualHead::make(
      scene_json.contains("head") ? scene_json["head"].value("seed", std::uint64_t{7}) : 7,
      scene_json.contains("head") ? scene_json["head"].value("ear_spacing", 0.18) : 0.18);

  if (scene_json.value("mode", "scene") == "training_grid") {
    GridSpec grid;
    if (scene_json.contains("grid")) {
      const auto& g = scene_json["grid"];
      if (g.contains("az")) {
        grid.az_lo = g["az"][0].get<double>();
        grid.az_hi = g["az"][1].get<double>();
      }
      if (g.contains("el")) {
        grid.el_lo = g["el"][0].get<double>();
        grid.el_hi = g["el"][1].get<double>();
      }
      grid.step = g.value("step", grid.step);
    }
    TrainingSet ts = build_training_grid(head, grid, seed, cfg.cue, sr,
                                         scene_json.value("noise_duration_s", 0.5),
                                         cfg.threads);
    if (scene_json.contains("grid") && scene_json["grid"].contains("decimate_to_step")) {
      const double target = scene_json["grid"]["decimate_to_step"].get<double>();
      ts = decimate_grid(ts, grid.step, target, seed + 1);
    }
    ArrayContainer c;
    c.fingerprint = cfg.fingerprint();
    c.put_matrix("X", ts.X);
    c.put_matrix("Y", ts.Y);
    c.put_bytes("run_config", cfg.to_json().dump(2));
    c.put_bytes("scene", scene_json.dump(2));
    c.save((fs::path(common.out_dir) / "trainset.vslc").string());
    write_run_config(common.out_dir, cfg);
    std::cout << "trainset: " << ts.X.rows() << " directions, D=" << ts.Y.cols() << "\n";
    return 0;
  }

  Scene scene;
  scene.noise_seed = seed + 1000;
  if (scene_json.contains("noise_level_db") && !scene_json["noise_level_db"].is_null())
    scene.noise_level_db = scene_json["noise_level_db"].get<double>();
  const double duration_s = scene_json.value("duration_s", 1.2);
  int si = 0;
  for (const auto& s : scene_json.at("sources")) {
    SceneSource src;
    src.azimuth = s.at("azimuth").get<double>();
    src.elevation = s.at("elevation").get<double>();
    src.signal = make_signal(s.value("signal", json{{"kind", "white"}}), sr, duration_s,
                             seed + static_cast<std::uint64_t>(si) * 7919);
    scene.sources.push_back(std::move(src));
    ++si;
  }

  const AudioBuffer mix = render_scene(head, scene, sr, cfg.cue.window_ms, cfg.cue.hop_ms);
  write_wav((fs::path(common.out_dir) / "mixture.wav").string(), {mix.left, mix.right}, sr);

  ArrayContainer truth;
  truth.fingerprint = cfg.fingerprint();
  Eigen::MatrixXd dirs(static_cast<int>(scene.sources.size()), 2);
  std::size_t n = mix.n_samples();
  for (int m = 0; m < static_cast<int>(scene.sources.size()); ++m) {
    const auto& s = scene.sources[static_cast<std::size_t>(m)];
    dirs(m, 0) = s.azimuth;
    dirs(m, 1) = s.elevation;
    std::vector<double> sig = s.signal;
    sig.resize(n, 0.0);
    const AudioBuffer one =
        render_source(head, s.azimuth, s.elevation, sig, sr, cfg.cue.window_ms, cfg.cue.hop_ms);
    auto [sl, srr] = stft(one, cfg.cue.window_ms, cfg.cue.hop_ms);
    const std::string p = "src" + std::to_string(m) + "/";
    put_spectrogram(truth, p + "left_", sl);
    put_spectrogram(truth, p + "right_", srr);
    Eigen::MatrixXd wave(2, static_cast<int>(n));
    for (std::size_t i = 0; i < n; ++i) {
      wave(0, static_cast<int>(i)) = one.left[i];
      wave(1, static_cast<int>(i)) = one.right[i];
    }
    truth.put_matrix(p + "wave", wave);
    write_wav((fs::path(common.out_dir) / ("source_true_" + std::to_string(m) + ".wav")).string(),
              {one.left, one.right}, sr);
  }
  Eigen::MatrixXd mixwave(2, static_cast<int>(n));
  for (std::size_t i = 0; i < n; ++i) {
    mixwave(0, static_cast<int>(i)) = mix.left[i];
    mixwave(1, static_cast<int>(i)) = mix.right[i];
  }
  truth.put_matrix("mixture_wave", mixwave);
  truth.put_matrix("directions", dirs);
  truth.put_scalar("n_sources", static_cast<std::int64_t>(scene.sources.size()));
  truth.put_scalar("original_length", static_cast<std::int64_t>(n));
  truth.put_scalar("sample_rate", static_cast<std::int64_t>(sr));
  truth.put_bytes("run_config", cfg.to_json().dump(2));
  truth.put_bytes("scene", scene_json.dump(2));
  truth.save((fs::path(common.out_dir) / "truth.vslc").string());
  write_run_config(common.out_dir, cfg);
  std::cout << "scene: " << scene.sources.size() << " sources, " << n << " samples\n";
  return 0;
}

// ---------------------------------------------------------------- extract

int cmd_extract(const CommonArgs& common, const std::string& in, const std::string& right,
                bool mean_only) {
  const RunConfig cfg = common.load();
  const AudioBuffer buf = load_stereo(in, right, cfg.sample_rate);
  ObservationSet obs = extract_observations(buf, cfg);
  fs::create_directories(common.out_dir);

  if (mean_only) {
    const IlpdObservation mean = mean_ilpd(obs.frames);
    ObservationSet one;
    one.layout = obs.layout;
    one.frames = {mean};
    obs = std::move(one);
  }
  save_observations((fs::path(common.out_dir) / "observations.vslc").string(), obs, cfg);
  write_run_config(common.out_dir, cfg);

  // text mirror of the assembled vectors
  std::string tsv = config_comment(cfg) + "# dim\tframe\tvalue\tavail\n";
  for (int t = 0; t < obs.n_frames(); ++t)
    for (int d = 0; d < obs.dim(); ++d)
      tsv += std::to_string(d) + "\t" + std::to_string(t) + "\t" +
             fmt(obs.frames[static_cast<std::size_t>(t)].y(d)) + "\t" +
             std::to_string(
                 static_cast<int>(obs.frames[static_cast<std::size_t>(t)].avail[static_cast<std::size_t>(d)])) +
             "\n";
  write_text((fs::path(common.out_dir) / "observations.tsv").string(), tsv);
  std::cout << "observations: D=" << obs.dim() << " T=" << obs.n_frames() << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

int cmd_train(const CommonArgs& common, const std::string& trainset_path, int K_flag,
              bool ladder_flag) {
  const RunConfig cfg = common.load();
  const ArrayContainer tsc = ArrayContainer::load(trainset_path);
  if (tsc.fingerprint != cfg.fingerprint())
    throw Error(ErrorCategory::fingerprint_mismatch,
                "training set was extracted under a different cue configuration");
  TrainingSet ts;
  ts.X = tsc.get_matrix("X");
  ts.Y = tsc.get_matrix("Y");

  std::vector<int> ks;
  if (ladder_flag)
    ks = cfg.ladder;
  else
    ks = {K_flag > 0 ? K_flag : cfg.K};

  fs::create_directories(common.out_dir);
  write_run_config(common.out_dir, cfg);
  ArrayContainer out;
  out.fingerprint = cfg.fingerprint();
  Eigen::VectorXd ladder_v(static_cast<int>(ks.size()));

  TrainOptions topt;
  topt.max_iter = cfg.em_max_iter;
  topt.tol = cfg.em_tol;
  topt.seed = cfg.seed;
  topt.threads = cfg.threads;
  topt.init = cfg.em_init == "gmm_joint" ? InitStrategy::gmm_joint : InitStrategy::gmm_x;

  std::string trace_tsv = config_comment(cfg) + "# K\titeration\tlog_likelihood\n";
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const TrainResult res = train(ts.X, ts.Y, ks[i], topt);
    put_model(out, res.model, "m" + std::to_string(ks[i]) + "/");
    ladder_v(static_cast<int>(i)) = ks[i];
    for (std::size_t it = 0; it < res.trace.size(); ++it)
      trace_tsv += std::to_string(ks[i]) + "\t" + std::to_string(it) + "\t" +
                   fmt(res.trace[it]) + "\n";
    std::cout << "K=" << ks[i] << ": " << res.iterations << " iterations, final ll "
              << res.trace.back() << ", removed " << res.removed_components << "\n";
  }
  out.put_vector("ladder", ladder_v);
  out.put_bytes("run_config", cfg.to_json().dump(2));
  out.save((fs::path(common.out_dir) / (ks.size() > 1 ? "ladder.vslc" : "model.vslc")).string());
  write_text((fs::path(common.out_dir) / "training_trace.tsv").string(), trace_tsv);
  return 0;
}

std::vector<PpamModel> load_ladder(const std::string& path, const RunConfig& cfg) {
  const ArrayContainer c = ArrayContainer::load(path);
  if (c.fingerprint != cfg.fingerprint())
    throw Error(ErrorCategory::fingerprint_mismatch,
                "model fingerprint does not match the cue configuration");
  const Eigen::VectorXd ladder = c.get_vector("ladder");
  std::vector<PpamModel> models;
  for (int i = 0; i < ladder.size(); ++i)
    models.push_back(get_model(c, "m" + std::to_string(static_cast<int>(ladder(i))) + "/"));
  return models;
}

// ---------------------------------------------------------------- localize

int cmd_localize(const CommonArgs& common, const std::string& in, const std::string& right,
                 const std::string& model_path) {
  const RunConfig cfg = common.load();
  std::vector<PpamModel> models = load_ladder(model_path, cfg);
  const PpamModel& model = models.back();  // largest K

  const AudioBuffer buf = load_stereo(in, right, cfg.sample_rate);
  const ObservationSet obs = extract_observations(buf, cfg);
  const LocalizeResult res = localize_point(model, obs);

  fs::create_directories(common.out_dir);
  write_run_config(common.out_dir, cfg);
  std::string est = config_comment(cfg) + "# azimuth\televation\n" + fmt(res.x_hat(0)) +
                    "\t" + fmt(res.x_hat(1)) + "\n";
  write_text((fs::path(common.out_dir) / "estimate.tsv").string(), est);

  std::string comp = config_comment(cfg) + "# k\trho\tm_az\tm_el\tV00\tV01\tV10\tV11\n";
  for (int k = 0; k < res.posterior.K(); ++k) {
    const auto& m = res.posterior.m[static_cast<std::size_t>(k)];
    const auto& V = res.posterior.V[static_cast<std::size_t>(k)];
    comp += std::to_string(k) + "\t" + fmt(res.posterior.rho(k)) + "\t" + fmt(m(0)) + "\t" +
            fmt(m(1)) + "\t" + fmt(V(0, 0)) + "\t" + fmt(V(0, 1)) + "\t" + fmt(V(1, 0)) +
            "\t" + fmt(V(1, 1)) + "\n";
  }
  write_text((fs::path(common.out_dir) / "components.tsv").string(), comp);

  write_text((fs::path(common.out_dir) / "posterior_grid.tsv").string(),
             config_comment(cfg) + gmm_grid_tsv(res.posterior.rho, res.posterior.m,
                                                res.posterior.V));

  ArrayContainer out;
  out.fingerprint = cfg.fingerprint();
  Eigen::MatrixXd xh(1, 2);
  xh << res.x_hat(0), res.x_hat(1);
  out.put_matrix("x_hat", xh);
  out.put_vector("rho", res.posterior.rho);
  out.put_bytes("run_config", cfg.to_json().dump(2));
  out.save((fs::path(common.out_dir) / "estimate.vslc").string());

  std::cout << "estimate: az " << res.x_hat(0) << " el " << res.x_hat(1) << "\n";
  return 0;
}

// ---------------------------------------------------------------- separate

int cmd_separate(const CommonArgs& common, const std::string& in, const std::string& right,
                 const std::string& models_path, int M) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = common.load();
  const std::vector<PpamModel> ladder = load_ladder(models_path, cfg);

  const AudioBuffer buf = load_stereo(in, right, cfg.sample_rate);
  auto [sl, sr] = stft(buf, cfg.cue.window_ms, cfg.cue.hop_ms);
  const InterauralSpectrogram cues = interaural_cues(sl, sr, cfg.cue.power_threshold_db);
  const ObservationSet obs = assemble_ilpd(cues, cfg.cue.band);

  VemOptions vopt;
  vopt.max_iter = cfg.vem_max_iter;
  vopt.tol = cfg.vem_tol;
  vopt.seed = cfg.seed;
  const VemResult res = vem_run(ladder, obs, M, vopt);
  const auto t1 = std::chrono::steady_clock::now();

  fs::create_directories(common.out_dir);
  write_run_config(common.out_dir, cfg);
  const std::vector<AudioBuffer> sources =
      separate(sl, sr, res.map.w_map, obs.layout, M, buf.n_samples());
  for (int m = 0; m < M; ++m)
    write_wav((fs::path(common.out_dir) / ("source_" + std::to_string(m) + ".wav")).string(),
              {sources[static_cast<std::size_t>(m)].left, sources[static_cast<std::size_t>(m)].right},
              buf.sample_rate);

  for (int m = 0; m < M; ++m) {
    const Eigen::VectorXd alpha = res.qxz.alpha.col(m);
    write_text((fs::path(common.out_dir) /
                ("source_" + std::to_string(m) + "_posterior.tsv"))
                   .string(),
               config_comment(cfg) +
                   gmm_grid_tsv(alpha, res.qxz.mu[static_cast<std::size_t>(m)],
                                res.qxz.S[static_cast<std::size_t>(m)]));
  }

  std::string est = config_comment(cfg) + "# source\tazimuth\televation\tk_map\n";
  for (int m = 0; m < M; ++m)
    est += std::to_string(m) + "\t" + fmt(res.map.x_map[static_cast<std::size_t>(m)](0)) + "\t" +
           fmt(res.map.x_map[static_cast<std::size_t>(m)](1)) + "\t" +
           std::to_string(res.map.k_map[static_cast<std::size_t>(m)]) + "\n";
  write_text((fs::path(common.out_dir) / "estimates.tsv").string(), est);

  ArrayContainer masks;
  masks.fingerprint = cfg.fingerprint();
  masks.put_int_matrix("w_map", res.map.w_map);
  masks.put_int_matrix("grid_mask", mask_to_grid(res.map.w_map, obs.layout));
  for (int m = 0; m < M; ++m)
    masks.put_matrix("q_w" + std::to_string(m), res.qw.q[static_cast<std::size_t>(m)]);
  masks.put_bytes("run_config", cfg.to_json().dump(2));
  masks.save((fs::path(common.out_dir) / "masks.vslc").string());

  json report;
  report["n_sources"] = M;
  report["scales"] = json::array();
  for (std::size_t s = 0; s < res.traces.size(); ++s) {
    json sc;
    sc["K"] = ladder[s].K();
    sc["iterations"] = res.traces[s].size();
    sc["free_energy"] = res.traces[s];
    report["scales"].push_back(sc);
  }
  json est_j = json::array();
  for (int m = 0; m < M; ++m)
    est_j.push_back({{"azimuth", res.map.x_map[static_cast<std::size_t>(m)](0)},
                     {"elevation", res.map.x_map[static_cast<std::size_t>(m)](1)},
                     {"k_map", res.map.k_map[static_cast<std::size_t>(m)]}});
  report["estimates"] = est_j;
  report["config"] = cfg.to_json();
  write_text((fs::path(common.out_dir) / "report.json").string(), report.dump(2) + "\n");

  const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  write_text((fs::path(common.out_dir) / "timings.txt").string(),
             "vem_ms\t" + fmt(ms) + "\n");
  std::cout << "separated " << M << " sources\n";
  return 0;
}

// ---------------------------------------------------------------- embed

int cmd_embed(const CommonArgs& common, const std::string& obs_path, int k, int dim) {
  const RunConfig cfg = common.load();
  const ArrayContainer c = ArrayContainer::load(obs_path);
  Eigen::MatrixXd points;
  if (c.has("X")) {
    points = c.get_matrix("Y");  // training set: rows are mean cue vectors
  } else {
    points = c.get_matrix("Y").transpose();  // observation frames
  }

  LtsaOptions lopt;
  lopt.threads = cfg.threads;
  const Embedding emb = ltsa_embed(points, k, dim, dim + 1, lopt);

  fs::create_directories(common.out_dir);
  write_run_config(common.out_dir, cfg);
  std::string tsv = config_comment(cfg) + "# original_index\tcoords...\n";
  for (int i = 0; i < emb.coords.rows(); ++i) {
    tsv += std::to_string(emb.kept_indices[static_cast<std::size_t>(i)]);
    for (int j = 0; j < emb.coords.cols(); ++j) tsv += "\t" + fmt(emb.coords(i, j));
    tsv += "\n";
  }
  write_text((fs::path(common.out_dir) / "embedding.tsv").string(), tsv);

  ArrayContainer out;
  out.fingerprint = cfg.fingerprint();
  out.put_matrix("coords", emb.coords);
  out.put_vector("eigvals", emb.eigvals);
  out.put_bytes("run_config", cfg.to_json().dump(2));
  out.save((fs::path(common.out_dir) / "embedding.vslc").string());
  std::cout << "embedded " << emb.coords.rows() << " points (dropped "
            << emb.dropped_indices.size() << ")\n";
  return 0;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const CommonArgs& common, const std::string& run_dir,
             const std::string& truth_path) {
  const RunConfig cfg = common.load();
  const ArrayContainer truth = ArrayContainer::load(truth_path);
  const int M = static_cast<int>(truth.get_scalar("n_sources"));
  const Eigen::MatrixXd dirs = truth.get_matrix("directions");
  const std::size_t n = static_cast<std::size_t>(truth.get_scalar("original_length"));
  const double sr = static_cast<double>(truth.get_scalar("sample_rate"));

  auto wave_of = [&](const std::string& name) {
    const Eigen::MatrixXd w = truth.get_matrix(name);
    AudioBuffer b;
    b.sample_rate = sr;
    b.left.resize(static_cast<std::size_t>(w.cols()));
    b.right.resize(static_cast<std::size_t>(w.cols()));
    for (int i = 0; i < w.cols(); ++i) {
      b.left[static_cast<std::size_t>(i)] = w(0, i);
      b.right[static_cast<std::size_t>(i)] = w(1, i);
    }
    return b;
  };
  const AudioBuffer mix = wave_of("mixture_wave");
  std::vector<AudioBuffer> true_sources;
  std::vector<std::pair<ComplexSpectrogram, ComplexSpectrogram>> true_specs;
  const int win = static_cast<int>(std::lround(sr * cfg.cue.window_ms / 1000.0));
  const double fres = sr / win;
  const double hop_s = cfg.cue.hop_ms / 1000.0;
  for (int m = 0; m < M; ++m) {
    const std::string p = "src" + std::to_string(m) + "/";
    true_sources.push_back(wave_of(p + "wave"));
    true_specs.emplace_back(get_spectrogram(truth, p + "left_", fres, hop_s),
                            get_spectrogram(truth, p + "right_", fres, hop_s));
  }

  // estimated directions from the separation run
  std::ifstream rf(fs::path(run_dir) / "report.json");
  if (!rf) throw Error(ErrorCategory::missing_file, "run report not found in " + run_dir);
  json report;
  rf >> report;
  std::vector<Eigen::VectorXd> est_dirs;
  for (const auto& e : report.at("estimates")) {
    Eigen::VectorXd x(2);
    x << e.at("azimuth").get<double>(), e.at("elevation").get<double>();
    est_dirs.push_back(x);
  }
  std::vector<Eigen::VectorXd> truth_dirs;
  for (int m = 0; m < M; ++m) truth_dirs.push_back(dirs.row(m).transpose());
  const std::vector<int> perm = permutation_align(est_dirs, truth_dirs);

  // oracle-mask reconstruction from the mixture
  auto [ml, mr] = stft(mix, cfg.cue.window_ms, cfg.cue.hop_ms);
  const Eigen::MatrixXi omask = oracle_mask(true_specs);
  const std::vector<AudioBuffer> oracle_rec = separate_grid(ml, mr, omask, M, n);

  MetricTable table;
  table.columns = {"az_err", "el_err", "sdr", "sir", "sdr_mixture", "sir_mixture",
                   "sdr_oracle", "sir_oracle"};
  for (int m = 0; m < M; ++m) {
    const int tm = perm[static_cast<std::size_t>(m)];
    const auto [daz, del] = angular_error(est_dirs[static_cast<std::size_t>(m)],
                                          truth_dirs[static_cast<std::size_t>(tm)]);
    const WavData est_w =
        read_wav((fs::path(run_dir) / ("source_" + std::to_string(m) + ".wav")).string());
    AudioBuffer est;
    est.sample_rate = sr;
    est.left = est_w.channels[0];
    est.right = est_w.channels.size() > 1 ? est_w.channels[1] : est_w.channels[0];

    std::vector<AudioBuffer> interf;
    for (int j = 0; j < M; ++j)
      if (j != tm) interf.push_back(true_sources[static_cast<std::size_t>(j)]);

    const SdrScore sc = sdr_sir(est, true_sources[static_cast<std::size_t>(tm)], interf);
    const SdrScore mx = sdr_sir(mix, true_sources[static_cast<std::size_t>(tm)], interf);
    const SdrScore orc =
        sdr_sir(oracle_rec[static_cast<std::size_t>(tm)], true_sources[static_cast<std::size_t>(tm)], interf);
    table.rows.push_back({daz, del, sc.sdr_db, sc.sir_db, mx.sdr_db, mx.sir_db, orc.sdr_db,
                          orc.sir_db});
  }
  fs::create_directories(common.out_dir);
  write_run_config(common.out_dir, cfg);
  table.write((fs::path(common.out_dir) / "metrics.tsv").string(),
              "config: " + cfg.to_json().dump());
  std::cout << "metrics written for " << M << " sources\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acoustic space learning: binaural localization and separation"};
  app.require_subcommand(1);

  CommonArgs common;

  auto* sim = app.add_subcommand("simulate", "render a scene or a training grid");
  std::string scene_path;
  sim->add_option("--scene", scene_path, "scene description (json)")->required();
  add_common(sim, common);

  auto* ext = app.add_subcommand("extract", "interaural observations from a recording");
  std::string in_path, right_path;
  bool mean_only = false;
  ext->add_option("--in", in_path, "stereo wav (or left channel)")->required();
  ext->add_option("--right", right_path, "right channel wav for a mono pair");
  ext->add_flag("--mean", mean_only, "emit the temporal mean vector only");
  add_common(ext, common);

  auto* trn = app.add_subcommand("train", "fit the mapping on a training set");
  std::string trainset_path;
  int K_flag = 0;
  bool ladder_flag = false;
  trn->add_option("--trainset", trainset_path, "training container")->required();
  trn->add_option("--K", K_flag, "component count (default from config)");
  trn->add_flag("--ladder", ladder_flag, "train every K in the config ladder");
  add_common(trn, common);

  auto* loc = app.add_subcommand("localize", "single-source direction estimate");
  std::string model_path;
  loc->add_option("--in", in_path, "stereo wav (or left channel)")->required();
  loc->add_option("--right", right_path, "right channel wav for a mono pair");
  loc->add_option("--model", model_path, "model container")->required();
  add_common(loc, common);

  auto* sep = app.add_subcommand("separate", "multi-source separation and localization");
  int M = 2;
  sep->add_option("--in", in_path, "stereo wav (or left channel)")->required();
  sep->add_option("--right", right_path, "right channel wav for a mono pair");
  sep->add_option("--models", model_path, "model ladder container")->required();
  sep->add_option("--num-sources", M, "number of sources")->required();
  add_common(sep, common);

  auto* emb = app.add_subcommand("embed", "nonlinear embedding of cue vectors");
  std::string obs_path;
  int knn_k = 20, emb_dim = 2;
  emb->add_option("--obs", obs_path, "observation or training container")->required();
  emb->add_option("--k", knn_k, "neighborhood size");
  emb->add_option("--dim", emb_dim, "intrinsic dimension");
  add_common(emb, common);

  auto* evl = app.add_subcommand("eval", "score a separation run against ground truth");
  std::string run_dir, truth_path;
  evl->add_option("--run", run_dir, "directory produced by separate")->required();
  evl->add_option("--truth", truth_path, "truth sidecar from simulate")->required();
  add_common(evl, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: bad_args: " << e.what() << "\n";
    return 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(common, scene_path);
    if (ext->parsed()) return cmd_extract(common, in_path, right_path, mean_only);
    if (trn->parsed()) return cmd_train(common, trainset_path, K_flag, ladder_flag);
    if (loc->parsed()) return cmd_localize(common, in_path, right_path, model_path);
    if (sep->parsed()) return cmd_separate(common, in_path, right_path, model_path, M);
    if (emb->parsed()) return cmd_embed(common, obs_path, knn_k, emb_dim);
    if (evl->parsed()) return cmd_eval(common, run_dir, truth_path);
  } catch (const Error& e) {
    std::cerr << "error: " << category_name(e.category()) << ": " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
