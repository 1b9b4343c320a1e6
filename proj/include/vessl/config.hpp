#ifndef VESSL_CONFIG_HPP
#define VESSL_CONFIG_HPP

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vessl/common.hpp"
#include "vessl/synth.hpp"

namespace vessl {

// Run-wide configuration. Serialized into every output for provenance; the
// cue-extraction subset is hashed into a fingerprint that must match between
// a trained model and the observations it is applied to.
struct RunConfig {
  double sample_rate = 16000.0;
  CueConfig cue;

  int K = 64;
  std::vector<int> ladder = {1, 2, 4, 8, 16, 32, 64};
  int em_max_iter = 200;
  double em_tol = 1e-6;
  std::string em_init = "gmm_x";  // or "gmm_joint"

  int vem_max_iter = 50;
  double vem_tol = 1e-5;

  std::uint64_t seed = 0;
  unsigned threads = 1;

  std::uint64_t fingerprint() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "sr=%.6g;win=%.6g;hop=%.6g;thr=%.6g;ild=%d:%d;ipd=%d:%d",
                  sample_rate, cue.window_ms, cue.hop_ms, cue.power_threshold_db,
                  cue.band.ild_lo, cue.band.ild_hi, cue.band.ipd_lo, cue.band.ipd_hi);
    return fnv1a64(std::string(buf));
  }

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"sample_rate", sample_rate},
        {"stft", {{"window_ms", cue.window_ms}, {"hop_ms", cue.hop_ms}}},
        {"threshold_db", cue.power_threshold_db},
        {"band",
         {{"ild", {cue.band.ild_lo, cue.band.ild_hi}},
          {"ipd", {cue.band.ipd_lo, cue.band.ipd_hi}}}},
        {"train",
         {{"K", K},
          {"ladder", ladder},
          {"max_iter", em_max_iter},
          {"tol", em_tol},
          {"init", em_init}}},
        {"vem", {{"max_iter", vem_max_iter}, {"tol", vem_tol}}},
        {"seed", seed},
        {"threads", threads}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
      if (j.contains("sample_rate")) c.sample_rate = j.at("sample_rate").get<double>();
      if (j.contains("stft")) {
        c.cue.window_ms = j.at("stft").value("window_ms", c.cue.window_ms);
        c.cue.hop_ms = j.at("stft").value("hop_ms", c.cue.hop_ms);
      }
      if (j.contains("threshold_db"))
        c.cue.power_threshold_db = j.at("threshold_db").get<double>();
      if (j.contains("band")) {
        const auto& b = j.at("band");
        if (b.contains("ild")) {
          c.cue.band.ild_lo = b.at("ild").at(0).get<int>();
          c.cue.band.ild_hi = b.at("ild").at(1).get<int>();
        }
        if (b.contains("ipd")) {
          c.cue.band.ipd_lo = b.at("ipd").at(0).get<int>();
          c.cue.band.ipd_hi = b.at("ipd").at(1).get<int>();
        }
      }
      if (j.contains("train")) {
        const auto& t = j.at("train");
        c.K = t.value("K", c.K);
        if (t.contains("ladder")) c.ladder = t.at("ladder").get<std::vector<int>>();
        c.em_max_iter = t.value("max_iter", c.em_max_iter);
        c.em_tol = t.value("tol", c.em_tol);
        c.em_init = t.value("init", c.em_init);
      }
      if (j.contains("vem")) {
        c.vem_max_iter = j.at("vem").value("max_iter", c.vem_max_iter);
        c.vem_tol = j.at("vem").value("tol", c.vem_tol);
      }
      if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("threads")) c.threads = j.at("threads").get<unsigned>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCategory::malformed_config, e.what());
    }
    return c;
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorCategory::missing_file, "cannot open config " + path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCategory::malformed_config, e.what());
    }
    return from_json(j);
  }
};

}  // namespace vessl

#endif
