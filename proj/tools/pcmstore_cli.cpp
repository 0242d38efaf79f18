// SPDX-License-Identifier: Apache-2.0
// pcmstore: command-line front end for the experiment harness.
#include <cstdio>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "CLI11.hpp"
#include "pcmstore/error.hpp"
#include "pcmstore/harness.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
  int threads = 0;
  bool quiet = false;
};

int run(const std::string& sub, const Options& opt) {
  using namespace pcmstore;
  Json doc = Json::object();
  std::filesystem::path base = ".";
  if (!opt.config.empty()) {
    doc = read_json(opt.config);
    const std::filesystem::path p(opt.config);
    if (p.has_parent_path()) base = p.parent_path();
    if (!doc.is_object()) throw Error(ErrorKind::ConfigError, "config: expected a JSON object");
  }
  if (!doc.contains("experiment")) {
    doc["experiment"] = sub;
  } else if (doc["experiment"] != sub) {
    throw Error(ErrorKind::ConfigError,
                fmt::format("experiment: config is for '{}', not '{}'", doc["experiment"].dump(), sub));
  }
  if (!opt.seeds.empty()) doc["seeds"] = opt.seeds;
  if (opt.threads > 0) doc["threads"] = opt.threads;

  ExperimentConfig cfg = parse_experiment_config(doc, base);
  if (!opt.out.empty()) {
    cfg.output = opt.out;
  } else if (cfg.output.is_relative()) {
    cfg.output = base / cfg.output;
  }
  const SweepReport report = run_experiment(cfg);
  write_report(report, cfg.output);
  if (!opt.quiet) fmt::print("{}\nwrote {}\n", report_markdown(report), (cfg.output / "report.csv").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Store neural-network weights on a simulated analog memory channel"};
  app.require_subcommand(1);

  Options opt;
  const std::vector<std::pair<std::string, std::string>> subs = {
      {"channel-stats", "Channel level statistics, inversion check and redundancy scaling"},
      {"sweep", "Accuracy vs. cells per weight for each coding strategy"},
      {"robust-train", "Naive vs. noise-regularized training"},
      {"distill", "Clean vs. noisy-student distillation"},
      {"prune", "Unpruned vs. pruned-and-retrained models"},
      {"e2e", "Weight autoencoder over a set of logistic-regression classifiers"},
      {"cost", "Storage cost per weight from partition counts"},
  };
  for (const auto& [name, help] : subs) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--config", opt.config, "JSON config document");
    s->add_option("--out", opt.out, "Output directory (overrides the config)");
    s->add_option("--seeds", opt.seeds, "Seeds (overrides the config)")->delimiter(',');
    s->add_option("--threads", opt.threads, "Worker threads (overrides the config)")->check(CLI::PositiveNumber);
    s->add_flag("-q,--quiet", opt.quiet, "Do not print the report");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    return run(sub, opt);
  } catch (const pcmstore::Error& e) {
    std::fprintf(stderr, "pcmstore %s: %s\n", sub.c_str(), e.what());
    return e.kind() == pcmstore::ErrorKind::ConfigError ? 2 : e.kind() == pcmstore::ErrorKind::IoError ? 3 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pcmstore %s: %s\n", sub.c_str(), e.what());
    return 1;
  }
}
