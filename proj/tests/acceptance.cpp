// SPDX-License-Identifier: Apache-2.0
// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// non-zero if any selected criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#define DOCTEST_CONFIG_DISABLE
#include "CLI11.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "pcmstore/harness.hpp"

using namespace pcmstore;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string measured;
  std::vector<std::string> info;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

ExperimentConfig load_config(const std::string& file) {
  return load_experiment_config(fs::path(PCMSTORE_CONFIG_DIR) / file);
}

std::map<std::string, double> accuracy_by_label(const SweepReport& r) {
  std::map<std::string, double> out;
  for (const auto& row : r.rows) {
    if (row.mean_accuracy) out[row.label] = *row.mean_accuracy;
  }
  return out;
}

// One report per seed so results can be paired.
std::vector<std::map<std::string, double>> per_seed(ExperimentConfig cfg) {
  std::vector<std::map<std::string, double>> out;
  const auto seeds = cfg.seeds;
  for (auto s : seeds) {
    cfg.seeds = {s};
    out.push_back(accuracy_by_label(run_experiment(cfg)));
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Outcome noise_scaling() {
  const ChannelModel ch = build_synthetic({});
  Rng rng(1);
  std::vector<double> one, sixteen;
  for (int i = 0; i < 10000; ++i) one.push_back(ch.read_avg(0.2, 1, rng));
  for (int i = 0; i < 10000; ++i) sixteen.push_back(ch.read_avg(0.2, 16, rng));
  const double ratio = testutil::stddev(one) / testutil::stddev(sixteen);
  return {std::abs(ratio - 4.0) <= 0.4, fmt::format("std ratio r=1/r=16 = {:.4f} (need 4.0 +/- 0.4)", ratio), {}};
}

Outcome inversion() {
  const ChannelModel ch = build_synthetic({});
  const Interval out = ch.invertible_output_range();
  Rng rng(2);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double y = out.lo + out.width() * k / 99.0;
    const double x = ch.invert_mean(y);
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) sum += ch.sample(x, rng);
    worst = std::max(worst, std::abs(sum / 10000.0 - y));
  }
  return {worst < 0.005, fmt::format("max |mean read - target| = {:.5f} over 100 points (need < 0.005)", worst), {}};
}

Outcome codec_identity() {
  SyntheticChannelParams p;
  p.mean_shape = MeanShape::Identity;
  p.sigma0 = p.sigma1 = 0.0;
  const ChannelModel ch = build_synthetic(p);
  Rng rng(3);
  WeightTensor t;
  t.name = "w";
  t.shape = {100000};
  std::vector<double> sens;
  for (int i = 0; i < 100000; ++i) {
    t.values.push_back(0.3 * rng.normal());
    sens.push_back(rng.uniform());
  }
  double worst = 0.0;
  int combos = 0;
  for (int bits = 0; bits < 16; ++bits) {
    CodingConfig cfg;
    cfg.sign_protection = bits & 1;
    cfg.adaptive_mapping = bits & 2;
    cfg.adaptive_redundancy = bits & 4;
    cfg.sensitivity_redundancy = bits & 8;
    const MappingParams mp = fit_mapping(t, cfg);
    std::optional<std::span<const double>> s;
    if (cfg.sensitivity_redundancy) s = std::span<const double>(sens);
    const EncodedWeights e = encode(t, cfg, mp, s);
    const WeightTensor back = decode(store(e, ch, rng), e);
    for (std::size_t i = 0; i < t.values.size(); ++i) worst = std::max(worst, std::abs(back.values[i] - t.values[i]));
    ++combos;
  }
  return {worst < 1e-9, fmt::format("max abs error {:.3e} over {} strategy combinations (need < 1e-9)", worst, combos),
          {}};
}

Outcome cost() {
  const PartitionCounts counts{11168312, 5650, 0, 0};
  CodingConfig cfg;
  apply_strategy_label(cfg, "SP+AM+AR");
  const double r_avg = storage_cost(cfg, counts).r_avg.value();
  std::map<std::string, int> expected{{"SP", 1}, {"SP+AM", 2}, {"SP+AM+AR", 2}, {"SP+AM+AR+Sens", 3}};
  bool bits_ok = true;
  std::string bits;
  for (const auto& [label, want] : expected) {
    CodingConfig c;
    apply_strategy_label(c, label);
    const int got = storage_cost(c, counts).side_bits_per_weight;
    bits_ok = bits_ok && got == want;
    bits += fmt::format(" {}={}", label, got);
  }
  return {std::abs(r_avg - 1.0076) <= 1e-4 && bits_ok,
          fmt::format("r_avg = {:.6f} (need 1.0076 +/- 1e-4); side bits{}", r_avg, bits),
          {}};
}

Outcome gradients() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const std::vector<int> sizes = {3, 5, 4, 3}, tsizes = {3, 6, 3};
    Model m = Model::mlp(sizes, rng);
    for (auto& layer : m.layers()) {
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = 0.1 * rng.normal();
    }
    const Model teacher = Model::mlp(tsizes, rng);
    Dataset batch;
    batch.x = Eigen::MatrixXd::NullaryExpr(3, 16, [&] { return rng.normal(); });
    for (int i = 0; i < 16; ++i) batch.y.push_back(static_cast<int>(rng.index(3)));
    const auto noise = sample_weight_noise(m, 0.05, rng);
    worst = std::max(worst, oracle::max_gradient_error(m, batch, CrossEntropyLoss{}, {}));
    worst = std::max(worst, oracle::max_gradient_error(m, batch, RobustLoss{0.5, 0.05}, noise));
    worst = std::max(worst, oracle::max_gradient_error(m, batch, DistillLoss{&teacher, 1.5, 0.5, 0.05}, noise));
  }
  return {worst < 1e-4, fmt::format("max relative error {:.3e} over 10 models x 3 losses (need < 1e-4)", worst), {}};
}

Outcome sensitivity() {
  const DeskTask task = generate_desk_task({}, 1);
  Rng rng(101);
  const std::vector<int> sizes = {2, 32, 32, 2};
  TrainConfig tc;
  tc.epochs = 60;
  const Model m = train(Model::mlp(sizes, rng), task.train, tc);
  const SensitivityMap s = compute_sensitivity(m, task.train);
  const auto base = m.parameters();
  std::vector<double> quad, emp;
  for (int k = 0; k < 50; ++k) {
    // One random coordinate with a random magnitude, |delta| <= 1e-3.
    std::vector<double> delta(base.size(), 0.0);
    const std::size_t j = rng.index(base.size());
    delta[j] = rng.uniform(-1e-3, 1e-3);
    auto moved = base;
    moved[j] += delta[j];
    Model p = m;
    p.set_parameters(moved);
    quad.push_back(kl_quadratic(s, delta));
    emp.push_back(empirical_kl(m, p, task.train.x));
  }
  const double r2 = testutil::r_squared(quad, emp);
  return {r2 > 0.9, fmt::format("R^2 = {:.4f} over 50 perturbations (need > 0.9)", r2),
          {fmt::format("model test accuracy {:.4f}", evaluate(m, task.test))}};
}

Outcome strategy_ordering() {
  ExperimentConfig cfg = load_config("sweep.json");
  cfg.seeds = {1, 2, 3, 4, 5};
  cfg.redundancy = {1};
  cfg.strategies = {"none", "SP", "SP+AM", "SP+AM+AR"};
  const auto acc = accuracy_by_label(run_experiment(cfg));
  const double clean = acc.at("clean"), none = acc.at("none"), sp = acc.at("SP"), am = acc.at("SP+AM"),
               ar = acc.at("SP+AM+AR");
  const bool pass = ar >= am && am >= sp && sp >= none && clean - ar <= 0.03 && std::abs(none - 0.5) <= 0.15;
  return {pass,
          fmt::format("clean {:.4f}, SP+AM+AR {:.4f} >= SP+AM {:.4f} >= SP {:.4f} >= none {:.4f}", clean, ar, am, sp,
                      none),
          {fmt::format("clean - SP+AM+AR = {:.4f} (need <= 0.03); |none - 0.5| = {:.4f} (need <= 0.15)", clean - ar,
                       std::abs(none - 0.5))}};
}

// Mean paired gap (a - b) of one row label over seeds.
Outcome paired(const std::vector<std::map<std::string, double>>& runs, const std::string& a, const std::string& b,
               bool strict) {
  double gap = 0.0;
  int wins = 0;
  std::vector<std::string> info;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    const double d = runs[s].at(a) - runs[s].at(b);
    gap += d;
    wins += d >= 0.0;
    info.push_back(fmt::format("seed {}: {} {:.4f} vs {} {:.4f}", s + 1, a, runs[s].at(a), b, runs[s].at(b)));
  }
  gap /= static_cast<double>(runs.size());
  const bool pass = strict ? gap > 0.0 : gap >= 0.0;
  return {pass, fmt::format("mean paired gap {:+.4f} ({}/{} seeds non-negative)", gap, wins, runs.size()), info};
}

Outcome robust_direction() {
  ExperimentConfig cfg = load_config("robust_train.json");
  const std::string dest = cfg.robust.destination;
  cfg.strategies = {dest};
  cfg.redundancy = {cfg.robust.destination_r};
  return paired(per_seed(cfg), "robust/" + dest, "naive/" + dest, true);
}

Outcome distill_direction() {
  ExperimentConfig cfg = load_config("distill.json");
  const std::string dest = cfg.distill.destination;
  cfg.strategies = {dest};
  cfg.redundancy = {cfg.distill.destination_r};
  return paired(per_seed(cfg), "noisy-student/" + dest, "clean-student/" + dest, false);
}

Outcome pruning() {
  ExperimentConfig cfg = load_config("prune.json");
  cfg.strategies = {"SP+AM+AR"};
  cfg.redundancy = {1};
  const auto acc = accuracy_by_label(run_experiment(cfg));
  const double full = acc.at("unpruned/clean"), pr = acc.at("pruned/clean"), stored = acc.at("pruned/SP+AM+AR");
  return {full - pr <= 0.02 && pr - stored <= 0.03,
          fmt::format("unpruned {:.4f}, pruned {:.4f} (drop {:.4f}, need <= 0.02), pruned stored {:.4f} (drop {:.4f}, "
                      "need <= 0.03)",
                      full, pr, full - pr, stored, pr - stored),
          {}};
}

Outcome end_to_end() {
  const auto acc = accuracy_by_label(run_experiment(load_config("e2e.json")));
  const double easy = acc.at("easy/gaussian"), hard_g = acc.at("hard/gaussian"), hard_c = acc.at("hard/channel");
  std::vector<std::string> info;
  for (const std::string kind : {"easy", "hard"}) {
    info.push_back(fmt::format("{}: Bayes-optimal {:.4f}, original classifiers {:.4f}", kind, acc.at(kind + "/bayes"),
                               acc.at(kind + "/original")));
    for (const std::string mode : {"gaussian", "channel"}) {
      info.push_back(fmt::format("{}/{}: accuracy {:.4f}, agreement with original {:.4f}", kind, mode,
                                 acc.at(kind + "/" + mode), acc.at(kind + "/" + mode + "/agreement")));
    }
  }
  return {easy >= 0.90 && hard_g >= 0.70 && hard_c >= 0.70,
          fmt::format("easy/gaussian {:.4f} (need >= 0.90), hard/gaussian {:.4f}, hard/channel {:.4f} (need >= 0.70)",
                      easy, hard_g, hard_c),
          info};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "pcmstore_acceptance_cli";
  fs::remove_all(root);
  struct Run {
    std::string sub, config, extra;
  };
  const std::vector<Run> runs = {
      {"channel-stats", "channel_stats.json", ""}, {"cost", "cost.json", ""},
      {"sweep", "sweep.json", "--seeds 1,2"},      {"sweep", "sweep.json", "--seeds 1,2 --threads 3"},
      {"robust-train", "robust_train.json", "--seeds 1"}, {"distill", "distill.json", "--seeds 1"},
      {"prune", "prune.json", "--seeds 1"},        {"e2e", "e2e.json", ""},
  };
  std::vector<std::string> info;
  bool pass = true;
  std::size_t files = 0;
  std::map<std::string, std::string> first_sweep;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    std::map<std::string, std::string> outputs[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = root / fmt::format("{}_{}", k, rep);
      const std::string cmd = fmt::format("\"{}\" {} --config \"{}\" --out \"{}\" {} -q", PCMSTORE_CLI, runs[k].sub,
                                          (fs::path(PCMSTORE_CONFIG_DIR) / runs[k].config).string(), out.string(),
                                          runs[k].extra);
      if (std::system(cmd.c_str()) != 0) {
        pass = false;
        info.push_back("command failed: " + cmd);
        continue;
      }
      for (const auto& entry : fs::directory_iterator(out)) {
        outputs[rep][entry.path().filename().string()] = slurp(entry.path());
      }
    }
    const bool same = !outputs[0].empty() && outputs[0] == outputs[1];
    pass = pass && same;
    files += outputs[0].size();
    info.push_back(fmt::format("{} {}: {} files, {}", runs[k].sub, runs[k].extra, outputs[0].size(),
                               same ? "identical" : "DIFFER"));
    if (runs[k].sub == "sweep") {
      if (first_sweep.empty()) {
        first_sweep = outputs[0];
      } else {
        const bool threads_same = first_sweep == outputs[0];
        pass = pass && threads_same;
        info.push_back(fmt::format("sweep 1 vs 3 threads: {}", threads_same ? "identical" : "DIFFER"));
      }
    }
  }
  return {pass, fmt::format("{} CLI runs repeated, {} output files compared byte for byte", runs.size(), files), info};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria (1-12)")->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all = {
      {1, "read-average noise scaling", 5, noise_scaling},
      {2, "channel inversion", 30, inversion},
      {3, "codec identity", 10, codec_identity},
      {4, "cost arithmetic", 1, cost},
      {5, "gradient correctness", 30, gradients},
      {6, "sensitivity fidelity", 60, sensitivity},
      {7, "strategy ordering", 300, strategy_ordering},
      {8, "robust training direction", 300, robust_direction},
      {9, "noisy-student distillation direction", 300, distill_direction},
      {10, "pruning", 300, pruning},
      {11, "end-to-end autoencoder", 600, end_to_end},
      {12, "CLI determinism", 600, determinism},
  };

  int failed = 0, ran = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what(), {}};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("[%s] %2d %s: %s; %.2f s (budget %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.measured.c_str(), secs, c.budget_s, in_time ? "" : ", exceeded");
    for (const auto& line : o.info) std::printf("       %s\n", line.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
