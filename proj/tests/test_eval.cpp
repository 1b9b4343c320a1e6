#include <catch2/catch.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "vessl/eval.hpp"
#include "vessl/synth.hpp"
#include "vessl/vessl.hpp"

using namespace vessl;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("angular error wraps azimuth onto [0, 180]") {
  VectorXd a(2), b(2);
  a << 30.0, 10.0;
  b << 30.0, 10.0;
  auto [daz0, del0] = angular_error(a, b);
  CHECK(daz0 == 0.0);
  CHECK(del0 == 0.0);

  a << 170.0, 0.0;
  b << -170.0, 0.0;
  auto [daz, del] = angular_error(a, b);
  CHECK(daz == Approx(20.0));
  CHECK(del == 0.0);
}

TEST_CASE("metric tables report the same mean and deviation as direct sums") {
  Rng rng(1);
  MetricTable table;
  table.columns = {"v"};
  std::vector<double> vals;
  for (int i = 0; i < 50; ++i) {
    vals.push_back(rng.uniform(0.0, 10.0));
    table.rows.push_back({vals.back()});
  }
  const std::string path = "/tmp/vessl_test_table.tsv";
  table.write(path);

  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= vals.size();
  double var = 0.0;
  for (double v : vals) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / vals.size());

  std::ifstream f(path);
  std::string line, avg_line, std_line;
  while (std::getline(f, line)) {
    if (line.rfind("avg\t", 0) == 0) avg_line = line;
    if (line.rfind("std\t", 0) == 0) std_line = line;
  }
  REQUIRE(!avg_line.empty());
  CHECK(std::stod(avg_line.substr(4)) == Approx(mean).epsilon(1e-12));
  CHECK(std::stod(std_line.substr(4)) == Approx(sd).epsilon(1e-12));
  std::remove(path.c_str());
}

TEST_CASE("permutation alignment recovers swaps and identities") {
  VectorXd p0(2), p1(2);
  p0 << -30.0, 10.0;
  p1 << 40.0, -20.0;
  const std::vector<VectorXd> truths = {p0, p1};

  const std::vector<int> swap = permutation_align({p1, p0}, truths);
  CHECK(swap[0] == 1);
  CHECK(swap[1] == 0);

  const std::vector<int> id = permutation_align({p0, p1}, truths);
  CHECK(id[0] == 0);
  CHECK(id[1] == 1);
}

TEST_CASE("alignment matches exhaustive search on random triples") {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<VectorXd> est(3), truth(3);
    for (int i = 0; i < 3; ++i) {
      est[static_cast<std::size_t>(i)] = VectorXd(2);
      truth[static_cast<std::size_t>(i)] = VectorXd(2);
      est[static_cast<std::size_t>(i)] << rng.uniform(-160.0, 160.0), rng.uniform(-60.0, 60.0);
      truth[static_cast<std::size_t>(i)] << rng.uniform(-160.0, 160.0), rng.uniform(-60.0, 60.0);
    }
    const std::vector<int> got = permutation_align(est, truth);

    std::vector<int> perm = {0, 1, 2}, best = perm;
    double best_cost = 1e300;
    do {
      double cost = 0.0;
      for (int i = 0; i < 3; ++i) {
        const auto [daz, del] =
            angular_error(est[static_cast<std::size_t>(i)], truth[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
        cost += daz + del;
      }
      if (cost < best_cost) {
        best_cost = cost;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got == best);
  }
}

TEST_CASE("oracle masks recover disjoint supports exactly and break ties low") {
  ComplexSpectrogram a, b;
  a.values.setZero(4, 3);
  a.dc.setZero(3);
  b.values.setZero(4, 3);
  b.dc.setZero(3);
  a.freq_resolution = b.freq_resolution = 15.625;
  a.hop = b.hop = 0.008;
  a.values(0, 0) = 2.0;
  a.values(1, 2) = 1.0;
  b.values(2, 1) = 3.0;
  b.values(3, 0) = 0.5;

  const Eigen::MatrixXi mask = oracle_mask({{a, a}, {b, b}});
  CHECK(mask(0, 0) == 0);
  CHECK(mask(1, 2) == 0);
  CHECK(mask(2, 1) == 1);
  CHECK(mask(3, 0) == 1);
  CHECK(mask(0, 1) == 0);  // both zero: tie goes to the lowest index
}

TEST_CASE("sdr caps at the ceiling for a perfect estimate") {
  Rng rng(3);
  std::vector<double> s(1000), i1(1000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.normal();
    i1[i] = rng.normal();
  }
  const SdrScore perfect = sdr_sir(s, s, {i1});
  CHECK(perfect.defined);
  CHECK(perfect.sdr_db == Approx(100.0));
  CHECK(perfect.sir_db == Approx(100.0));
}

TEST_CASE("estimating a pure interferer gives non-positive interference ratio") {
  Rng rng(4);
  std::vector<double> s(2000), i1(2000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.normal();
    i1[i] = rng.normal();
  }
  const SdrScore sc = sdr_sir(i1, s, {i1});
  CHECK(sc.defined);
  CHECK(sc.sir_db <= 0.0);
}

TEST_CASE("the decomposition matches explicit normal equations") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 60;
    std::vector<double> e(n), s(n), i1(n), i2(n);
    for (int i = 0; i < n; ++i) {
      e[static_cast<std::size_t>(i)] = rng.normal();
      s[static_cast<std::size_t>(i)] = rng.normal();
      i1[static_cast<std::size_t>(i)] = rng.normal();
      i2[static_cast<std::size_t>(i)] = rng.normal();
    }
    const SdrScore sc = sdr_sir(e, s, {i1, i2});

    using Map = Eigen::Map<const VectorXd>;
    const Map ev(e.data(), n), sv(s.data(), n);
    MatrixXd I(n, 2);
    I.col(0) = Map(i1.data(), n);
    I.col(1) = Map(i2.data(), n);
    const VectorXd target = (ev.dot(sv) / sv.squaredNorm()) * sv;
    const VectorXd resid = ev - target;
    const VectorXd beta = (I.transpose() * I).ldlt().solve(I.transpose() * resid);
    const VectorXd interf = I * beta;
    const VectorXd artifact = resid - interf;
    const double sdr = 10.0 * std::log10(target.squaredNorm() /
                                         (interf.squaredNorm() + artifact.squaredNorm()));
    const double sir = 10.0 * std::log10(target.squaredNorm() / interf.squaredNorm());
    CHECK(sc.sdr_db == Approx(sdr).margin(1e-9));
    CHECK(sc.sir_db == Approx(sir).margin(1e-9));
    CHECK(sc.sdr_db <= sc.sir_db + 1e-12);
  }
}

TEST_CASE("scores are invariant to a common positive gain") {
  Rng rng(6);
  std::vector<double> e(500), s(500), i1(500);
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] = rng.normal();
    s[i] = rng.normal();
    i1[i] = rng.normal();
  }
  const SdrScore base = sdr_sir(e, s, {i1});
  std::vector<double> e2 = e, s2 = s, i2 = i1;
  for (auto& v : e2) v *= 7.3;
  for (auto& v : s2) v *= 7.3;
  for (auto& v : i2) v *= 7.3;
  const SdrScore scaled = sdr_sir(e2, s2, {i2});
  CHECK(base.sdr_db == Approx(scaled.sdr_db).margin(1e-9));
  CHECK(base.sir_db == Approx(scaled.sir_db).margin(1e-9));
}

TEST_CASE("a zero-energy target is reported as undefined") {
  std::vector<double> e(100, 1.0), s(100, 0.0);
  const SdrScore sc = sdr_sir(e, s, {});
  CHECK_FALSE(sc.defined);
}

TEST_CASE("oracle masks dominate a crude algorithmic mask on average") {
  const VirtualHead head = VirtualHead::make(7);
  const double sr = 16000.0;
  double oracle_sum = 0.0, crude_sum = 0.0;
  int count = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    const std::size_t n = 6000;
    Scene scene;
    scene.sources = {{rng.uniform(-60.0, -20.0), rng.uniform(-30.0, 30.0),
                      noise_bursts(n, sr, 200 + trial)},
                     {rng.uniform(20.0, 60.0), rng.uniform(-30.0, 30.0),
                      noise_bursts(n, sr, 300 + trial)}};
    const AudioBuffer mix = render_scene(head, scene, sr);
    auto [ml, mr] = stft(mix);

    std::vector<std::pair<ComplexSpectrogram, ComplexSpectrogram>> specs;
    std::vector<AudioBuffer> refs;
    for (const auto& s : scene.sources) {
      std::vector<double> sig = s.signal;
      sig.resize(n, 0.0);
      const AudioBuffer one = render_source(head, s.azimuth, s.elevation, sig, sr);
      auto [l, r] = stft(one);
      specs.emplace_back(l, r);
      refs.push_back(one);
    }

    const Eigen::MatrixXi omask = oracle_mask(specs);
    const auto oracle_rec = separate_grid(ml, mr, omask, 2, n);

    // crude mask: random assignment of every cell
    Eigen::MatrixXi crude(512, ml.frames());
    for (int f = 0; f < 512; ++f)
      for (int t = 0; t < ml.frames(); ++t)
        crude(f, t) = rng.uniform() < 0.5 ? 0 : 1;
    const auto crude_rec = separate_grid(ml, mr, crude, 2, n);

    for (int m = 0; m < 2; ++m) {
      std::vector<AudioBuffer> interf = {refs[static_cast<std::size_t>(1 - m)]};
      const SdrScore orc = sdr_sir(oracle_rec[static_cast<std::size_t>(m)],
                                   refs[static_cast<std::size_t>(m)], interf);
      const SdrScore crd = sdr_sir(crude_rec[static_cast<std::size_t>(m)],
                                   refs[static_cast<std::size_t>(m)], interf);
      if (orc.defined && crd.defined) {
        oracle_sum += orc.sdr_db;
        crude_sum += crd.sdr_db;
        ++count;
      }
    }
  }
  REQUIRE(count >= 20);
  CHECK(oracle_sum / count > crude_sum / count);
}
