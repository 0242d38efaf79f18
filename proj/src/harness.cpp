// SPDX-License-Identifier: Apache-2.0
#include "pcmstore/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/core.h>

#include "pcmstore/error.hpp"

namespace pcmstore {

// ---------------------------------------------------------------------------
// Desk task and storage pipeline

DeskTask generate_desk_task(const DeskTaskConfig& config, std::uint64_t seed) {
  if (config.n_train < 2 || config.n_test < 1 || config.blobs_per_class < 1) {
    throw Error(ErrorKind::InvalidCount, "desk task needs n_train >= 2, n_test >= 1, blobs >= 1");
  }
  Rng rng(seed);
  const int n_blobs = 2 * config.blobs_per_class;
  std::vector<Eigen::Vector2d> centres(static_cast<std::size_t>(n_blobs));
  for (auto& c : centres) c = {rng.uniform(-config.range, config.range), rng.uniform(-config.range, config.range)};

  auto draw = [&](std::size_t n) {
    Dataset d;
    d.x.resize(2, static_cast<Eigen::Index>(n));
    d.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t b = rng.index(static_cast<std::size_t>(n_blobs));
      const double a = rng.normal();
      const double c = rng.normal();
      d.x(0, static_cast<Eigen::Index>(i)) = centres[b](0) + config.spread * a;
      d.x(1, static_cast<Eigen::Index>(i)) = centres[b](1) + config.spread * c;
      d.y[i] = static_cast<int>(b % 2);
    }
    return d;
  };
  DeskTask task;
  task.train = draw(config.n_train);
  task.test = draw(config.n_test);
  return task;
}

namespace {

std::span<const double> layer_slice(const SensitivityMap& sens, const Model& model, std::size_t l) {
  const auto offsets = model.layer_offsets();
  return std::span<const double>(sens.s).subspan(offsets[l], model.layers()[l].num_parameters());
}

}  // namespace

std::vector<EncodedWeights> encode_model(const Model& model, const CodingConfig& config,
                                         const SensitivityMap* sens) {
  if (config.sensitivity_redundancy && sens == nullptr) {
    throw Error(ErrorKind::MissingSensitivity, "sensitivity redundancy requires a sensitivity map");
  }
  if (sens != nullptr && sens->s.size() != model.num_parameters()) {
    throw Error(ErrorKind::ShapeMismatch, "sensitivity map does not match the model");
  }
  const auto tensors = model_tensors(model);
  std::vector<EncodedWeights> out;
  for (std::size_t l = 0; l < tensors.size(); ++l) {
    const MappingParams mapping = fit_mapping(tensors[l], config);
    std::optional<std::span<const double>> s;
    if (config.sensitivity_redundancy) s = layer_slice(*sens, model, l);
    out.push_back(encode(tensors[l], config, mapping, s));
  }
  return out;
}

namespace {

Model decode_into(const Model& model, const std::vector<EncodedWeights>& encoded,
                  const ChannelModel& channel, Rng& rng) {
  std::vector<WeightTensor> tensors;
  for (const auto& e : encoded) tensors.push_back(decode(store(e, channel, rng), e));
  return with_tensors(model, tensors);
}

}  // namespace

Model store_model(const Model& model, const CodingConfig& config, const ChannelModel& channel,
                  Rng& rng, const SensitivityMap* sens) {
  config.validate(&channel);
  return decode_into(model, encode_model(model, config, sens), channel, rng);
}

CostReport model_cost(const Model& model, const CodingConfig& config, const SensitivityMap* sens) {
  PartitionCounts total;
  for (const auto& e : encode_model(model, config, sens)) {
    const auto c = partition_counts(e);
    total.n_small += c.n_small;
    total.n_large += c.n_large;
    total.n_sens_small += c.n_sens_small;
    total.n_sens_large += c.n_sens_large;
  }
  return storage_cost(config, total);
}

double perturbed_accuracy(const Model& model, const Dataset& test, const CodingConfig& config,
                          const ChannelModel& channel, int trials, std::uint64_t seed,
                          const SensitivityMap* sens) {
  if (trials < 1) throw Error(ErrorKind::InvalidCount, "trials must be >= 1");
  config.validate(&channel);
  const auto encoded = encode_model(model, config, sens);
  double sum = 0.0;
  for (int t = 0; t < trials; ++t) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(t)));
    sum += evaluate(decode_into(model, encoded, channel, rng), test);
  }
  return sum / trials;
}

double injection_noise_std(const Model& model, const CodingConfig& config,
                           const ChannelModel& channel, const SensitivityMap* sens) {
  config.validate(&channel);
  constexpr int kGrid = 101;
  double sigma_bar = 0.0;
  for (int k = 0; k < kGrid; ++k) {
    const double t = config.target.lo + config.target.width() * k / (kGrid - 1);
    sigma_bar += channel.stddev(channel.invert_mean(t));
  }
  sigma_bar /= kGrid;

  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& e : encode_model(model, config, sens)) {
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (e.cells[i] == 0) continue;
      const bool large = config.adaptive_mapping && e.group_bit[i] != 0;
      const double alpha = large ? e.mapping.large.alpha : e.mapping.small.alpha;
      sum += sigma_bar / (alpha * std::sqrt(static_cast<double>(e.cells[i])));
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Config parsing

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::ChannelStats: return "channel-stats";
    case ExperimentKind::Sweep: return "sweep";
    case ExperimentKind::RobustTrain: return "robust-train";
    case ExperimentKind::Distill: return "distill";
    case ExperimentKind::Prune: return "prune";
    case ExperimentKind::EndToEnd: return "e2e";
    case ExperimentKind::Cost: return "cost";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(const std::string& name) {
  for (auto k : {ExperimentKind::ChannelStats, ExperimentKind::Sweep, ExperimentKind::RobustTrain,
                 ExperimentKind::Distill, ExperimentKind::Prune, ExperimentKind::EndToEnd,
                 ExperimentKind::Cost}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorKind::ConfigError, fmt::format("experiment: unknown kind '{}'", name));
}

namespace {

/// Reads known keys from one JSON object and rejects everything else.
class Section {
 public:
  Section(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw Error(ErrorKind::ConfigError, fmt::format("{}: expected an object", path_));
  }

  bool has(const std::string& key) {
    known_.insert(key);
    return obj_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw Error(ErrorKind::ConfigError, fmt::format("{}: wrong type", field(key)));
    }
  }

  void get(const std::string& key, Interval& out) {
    std::vector<double> v;
    get(key, v);
    if (!has(key)) return;
    if (v.size() != 2) throw Error(ErrorKind::ConfigError, fmt::format("{}: expected [lo, hi]", field(key)));
    out = {v[0], v[1]};
  }

  Section child(const std::string& key) {
    known_.insert(key);
    return Section(obj_.at(key), field(key));
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!known_.contains(key)) throw Error(ErrorKind::ConfigError, fmt::format("{}: unknown key", field(key)));
    }
  }

 private:
  const Json& obj_;
  std::string path_;
  std::set<std::string> known_;
};

Optimizer parse_optimizer(const std::string& s, const std::string& where) {
  if (s == "adam") return Optimizer::Adam;
  if (s == "sgd" || s == "sgd+momentum") return Optimizer::SgdMomentum;
  throw Error(ErrorKind::ConfigError, fmt::format("{}: unknown optimizer '{}'", where, s));
}

std::optional<double> parse_noise(Section& sec, const std::string& key) {
  if (!sec.has(key)) return std::nullopt;
  std::string s;
  try {
    double v = 0.0;
    sec.get(key, v);
    return v;
  } catch (const Error&) {
    sec.get(key, s);
  }
  if (s == "auto") return std::nullopt;
  throw Error(ErrorKind::ConfigError, fmt::format("{}: expected a number or \"auto\"", sec.field(key)));
}

}  // namespace

ExperimentConfig parse_experiment_config(const Json& doc, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  Section root(doc, "");

  std::string kind;
  root.get("experiment", kind);
  if (kind.empty()) throw Error(ErrorKind::ConfigError, "experiment: missing");
  cfg.kind = parse_experiment_kind(kind);

  std::string output;
  root.get("output", output);
  if (!output.empty()) cfg.output = output;
  root.get("seeds", cfg.seeds);
  root.get("threads", cfg.threads);
  root.get("noise_trials", cfg.noise_trials);
  root.get("strategies", cfg.strategies);
  root.get("redundancy", cfg.redundancy);

  if (root.has("channel")) {
    Section ch = root.child("channel");
    std::string path;
    ch.get("measurements", path);
    if (!path.empty()) cfg.channel.measurements = path;
    if (ch.has("synthetic")) {
      Section syn = ch.child("synthetic");
      std::string shape = "tanh";
      syn.get("mean_shape", shape);
      if (shape == "tanh") cfg.channel.synthetic.mean_shape = MeanShape::Tanh;
      else if (shape == "identity") cfg.channel.synthetic.mean_shape = MeanShape::Identity;
      else throw Error(ErrorKind::ConfigError, fmt::format("{}: unknown shape '{}'", syn.field("mean_shape"), shape));
      syn.get("gain", cfg.channel.synthetic.gain);
      syn.get("sigma0", cfg.channel.synthetic.sigma0);
      syn.get("sigma1", cfg.channel.synthetic.sigma1);
      syn.get("input_range", cfg.channel.synthetic.input_range);
      syn.get("grid_levels", cfg.channel.synthetic.grid_levels);
      syn.finish();
    }
    if (cfg.channel.measurements && ch.has("synthetic")) {
      throw Error(ErrorKind::ConfigError, "channel: give either 'measurements' or 'synthetic', not both");
    }
    ch.finish();
  }

  if (root.has("coding")) {
    Section c = root.child("coding");
    c.get("target", cfg.coding.target);
    c.get("q_large", cfg.coding.q_large);
    c.get("q_sens", cfg.coding.q_sens);
    c.get("r_small", cfg.coding.r_small);
    c.get("r_large", cfg.coding.r_large);
    c.get("r_sens", cfg.coding.r_sens);
    c.finish();
  }

  if (root.has("model")) {
    Section m = root.child("model");
    m.get("sizes", cfg.model_sizes);
    m.finish();
  }

  if (root.has("task")) {
    Section t = root.child("task");
    t.get("n_train", cfg.task.n_train);
    t.get("n_test", cfg.task.n_test);
    t.get("blobs_per_class", cfg.task.blobs_per_class);
    t.get("range", cfg.task.range);
    t.get("spread", cfg.task.spread);
    t.finish();
  }

  if (root.has("train")) {
    Section t = root.child("train");
    std::string opt;
    t.get("optimizer", opt);
    if (!opt.empty()) cfg.train.optimizer = parse_optimizer(opt, t.field("optimizer"));
    t.get("learning_rate", cfg.train.learning_rate);
    t.get("momentum", cfg.train.momentum);
    t.get("weight_decay", cfg.train.weight_decay);
    t.get("epochs", cfg.train.epochs);
    t.get("batch_size", cfg.train.batch_size);
    t.get("patience", cfg.train.patience);
    t.get("validation_fraction", cfg.train.validation_fraction);
    t.finish();
  }

  if (root.has("robust")) {
    Section r = root.child("robust");
    r.get("lambda", cfg.robust.lambda);
    cfg.robust.noise_std = parse_noise(r, "noise_std");
    r.get("destination", cfg.robust.destination);
    r.get("destination_r", cfg.robust.destination_r);
    r.finish();
  }

  if (root.has("distill")) {
    Section d = root.child("distill");
    d.get("teacher_sizes", cfg.distill.teacher_sizes);
    d.get("student_sizes", cfg.distill.student_sizes);
    d.get("temperature", cfg.distill.temperature);
    d.get("lambda", cfg.distill.lambda);
    cfg.distill.noise_std = parse_noise(d, "noise_std");
    d.get("destination", cfg.distill.destination);
    d.get("destination_r", cfg.distill.destination_r);
    d.finish();
  }

  if (root.has("prune")) {
    Section p = root.child("prune");
    p.get("sparsity", cfg.prune.sparsity);
    p.get("retrain_epochs", cfg.prune.retrain_epochs);
    p.finish();
  }

  if (root.has("e2e")) {
    Section e = root.child("e2e");
    e.get("tasks", cfg.e2e.tasks);
    e.get("points", cfg.e2e.points);
    e.get("trials", cfg.e2e.trials);
    e.get("gaussian_std", cfg.e2e.gaussian_std);
    e.get("latent_target", cfg.e2e.latent_target);
    e.get("cells", cfg.e2e.cells);
    e.get("kinds", cfg.e2e.kinds);
    e.get("noise_modes", cfg.e2e.noise_modes);
    e.get("epochs", cfg.e2e.autoencoder.epochs);
    e.get("batch_size", cfg.e2e.autoencoder.batch_size);
    e.get("learning_rate", cfg.e2e.autoencoder.learning_rate);
    e.get("validation_points", cfg.e2e.autoencoder.validation_points);
    e.finish();
  }

  if (root.has("cost")) {
    Section c = root.child("cost");
    c.get("n_small", cfg.cost.counts.n_small);
    c.get("n_large", cfg.cost.counts.n_large);
    c.get("n_sens_small", cfg.cost.counts.n_sens_small);
    c.get("n_sens_large", cfg.cost.counts.n_sens_large);
    c.finish();
  }

  root.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_json(path), path.has_parent_path() ? path.parent_path() : ".");
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw Error(ErrorKind::ConfigError, fmt::format("{}: {}", field, msg));
  };
  if (seeds.empty()) fail("seeds", "at least one seed required");
  if (threads < 1) fail("threads", "must be >= 1");
  if (noise_trials < 1) fail("noise_trials", "must be >= 1");
  for (int r : redundancy) {
    if (r < 1) fail("redundancy", "values must be >= 1");
  }
  if (channel.measurements) {
    const auto p = channel.measurements->is_absolute() ? *channel.measurements : base_dir / *channel.measurements;
    if (!std::filesystem::exists(p)) fail("channel.measurements", fmt::format("file '{}' does not exist", p.string()));
  }
  for (const auto& s : strategies) {
    CodingConfig probe;
    try {
      apply_strategy_label(probe, s);
    } catch (const Error& e) {
      fail("strategies", e.what());
    }
  }
  try {
    coding.validate();
  } catch (const Error& e) {
    fail("coding", e.what());
  }
  try {
    TrainConfig t = train;
    t.validate();
  } catch (const Error& e) {
    fail("train", e.what());
  }
  if (model_sizes.size() < 2) fail("model.sizes", "need at least input and output sizes");
  if (!(prune.sparsity >= 0.0 && prune.sparsity <= 1.0)) fail("prune.sparsity", "must lie in [0, 1]");
  if (prune.retrain_epochs < 1) fail("prune.retrain_epochs", "must be >= 1");
  if (!(robust.lambda >= 0.0 && robust.lambda <= 1.0)) fail("robust.lambda", "must lie in [0, 1]");
  if (robust.destination_r < 1) fail("robust.destination_r", "must be >= 1");
  if (!(distill.lambda >= 0.0 && distill.lambda <= 1.0)) fail("distill.lambda", "must lie in [0, 1]");
  if (!(distill.temperature >= 1.0)) fail("distill.temperature", "must be >= 1");
  if (distill.destination_r < 1) fail("distill.destination_r", "must be >= 1");
  if (e2e.tasks < 1) fail("e2e.tasks", "must be >= 1");
  if (e2e.points < 2) fail("e2e.points", "must be >= 2");
  if (e2e.trials < 1) fail("e2e.trials", "must be >= 1");
  if (e2e.cells < 1) fail("e2e.cells", "must be >= 1");
  for (const auto& k : e2e.kinds) {
    if (k != "easy" && k != "hard") fail("e2e.kinds", fmt::format("unknown kind '{}'", k));
  }
  for (const auto& m : e2e.noise_modes) {
    if (m != "none" && m != "gaussian" && m != "channel") fail("e2e.noise_modes", fmt::format("unknown mode '{}'", m));
  }
}

ChannelModel build_channel(const ChannelSource& source, const std::filesystem::path& base_dir) {
  if (source.measurements) {
    const auto p = source.measurements->is_absolute() ? *source.measurements : base_dir / *source.measurements;
    if (!std::filesystem::exists(p)) {
      throw Error(ErrorKind::ConfigError, fmt::format("channel.measurements: file '{}' does not exist", p.string()));
    }
    return build_from_measurements(load_measurements_csv(p));
  }
  return build_synthetic(source.synthetic);
}

// ---------------------------------------------------------------------------
// Runner

namespace {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots, so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(threads, static_cast<int>(n))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::uint64_t label_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

struct Stats {
  double mean = 0.0;
  double stddev = 0.0;
};

Stats stats(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

CodingConfig strategy_config(const CodingConfig& base, const std::string& label, int r) {
  CodingConfig c = base;
  apply_strategy_label(c, label);
  c.r_small = r;
  c.r_large = std::max(base.r_large, r);
  c.r_sens = std::max(base.r_sens, c.r_large);
  return c;
}

bool any_sensitivity(const std::vector<std::string>& strategies) {
  for (const auto& s : strategies) {
    CodingConfig c;
    apply_strategy_label(c, s);
    if (c.sensitivity_redundancy) return true;
  }
  return false;
}

SweepRow make_row(std::string label, int r, double r_avg, int side_bits, const std::vector<double>& accs) {
  SweepRow row;
  row.label = std::move(label);
  row.r = r;
  row.r_avg = r_avg;
  row.side_bits = side_bits;
  row.total_cells_per_weight = r_avg + side_bits / 2.0;
  if (!accs.empty()) {
    const Stats s = stats(accs);
    row.mean_accuracy = s.mean;
    row.std_accuracy = s.stddev;
  }
  row.runs = accs.size();
  return row;
}

// Digital baseline: a 32-bit float at 2 error-free bits per cell.
constexpr int kDigitalCells = 16;

/// One trained model per seed plus everything derived from it.
struct SeedModel {
  std::string variant;
  Model model;
  std::optional<SensitivityMap> sens;
  Dataset test;
  double clean_accuracy = 0.0;
};

/// Evaluates each (variant, strategy, r) cell over all seeds and appends rows
/// in a fixed order: variant-major, then strategy, then r.
void evaluate_grid(const ExperimentConfig& cfg, const ChannelModel& channel,
                   const std::vector<std::vector<SeedModel>>& per_seed,
                   const std::vector<std::string>& variants, SweepReport& report) {
  const std::size_t n_seeds = per_seed.size();
  const std::size_t n_var = variants.size();
  const std::size_t n_strat = cfg.strategies.size();
  const std::size_t n_r = cfg.redundancy.size();
  const std::size_t cells = n_var * n_strat * n_r * n_seeds;
  std::vector<double> acc(cells), r_avg(cells);

  parallel_for(cells, cfg.threads, [&](std::size_t idx) {
    const std::size_t s = idx % n_seeds;
    const std::size_t k = (idx / n_seeds) % n_r;
    const std::size_t j = (idx / (n_seeds * n_r)) % n_strat;
    const std::size_t v = idx / (n_seeds * n_r * n_strat);
    const SeedModel& sm = per_seed[s][v];
    const CodingConfig c = strategy_config(cfg.coding, cfg.strategies[j], cfg.redundancy[k]);
    const SensitivityMap* sens = sm.sens ? &*sm.sens : nullptr;
    const std::uint64_t seed =
        mix_seed(cfg.seeds[s], label_hash(cfg.strategies[j]) ^ (static_cast<std::uint64_t>(cfg.redundancy[k]) << 40));
    acc[idx] = perturbed_accuracy(sm.model, sm.test, c, channel, cfg.noise_trials, seed, sens);
    r_avg[idx] = model_cost(sm.model, c, sens).analog_cells.value();
  });

  for (std::size_t v = 0; v < n_var; ++v) {
    std::vector<double> clean;
    for (std::size_t s = 0; s < n_seeds; ++s) clean.push_back(per_seed[s][v].clean_accuracy);
    const std::string prefix = variants[v].empty() ? "" : variants[v] + "/";
    report.rows.push_back(make_row(prefix + "clean", kDigitalCells, kDigitalCells, 0, clean));
    for (std::size_t j = 0; j < n_strat; ++j) {
      for (std::size_t k = 0; k < n_r; ++k) {
        std::vector<double> a;
        double cost = 0.0;
        for (std::size_t s = 0; s < n_seeds; ++s) {
          const std::size_t idx = ((v * n_strat + j) * n_r + k) * n_seeds + s;
          a.push_back(acc[idx]);
          cost += r_avg[idx];
        }
        CodingConfig c;
        apply_strategy_label(c, cfg.strategies[j]);
        report.rows.push_back(make_row(prefix + cfg.strategies[j], cfg.redundancy[k],
                                       cost / static_cast<double>(n_seeds), c.side_bits(), a));
      }
    }
  }
}

Model fresh_model(const std::vector<int>& sizes, std::uint64_t seed) {
  Rng init(mix_seed(seed, 200));
  return Model::mlp(sizes, init);
}

TrainConfig seeded(const TrainConfig& base, std::uint64_t seed) {
  TrainConfig t = base;
  t.seed = mix_seed(seed, 300);
  return t;
}

ExtraTable histogram_table(const Model& model, const SensitivityMap* sens) {
  ExtraTable t;
  t.file = "histograms.csv";
  t.header = {"quantity", "bin_lo", "bin_hi", "count"};
  auto add = [&](const std::string& name, const std::vector<double>& values) {
    if (values.empty()) return;
    constexpr int kBins = 40;
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    const double lo = *mn, hi = *mx > *mn ? *mx : *mn + 1.0;
    std::vector<std::size_t> counts(kBins, 0);
    for (double v : values) {
      const auto b = std::min(kBins - 1, static_cast<int>((v - lo) / (hi - lo) * kBins));
      ++counts[static_cast<std::size_t>(b)];
    }
    for (int b = 0; b < kBins; ++b) {
      t.rows.push_back({name, fmt_num(lo + (hi - lo) * b / kBins), fmt_num(lo + (hi - lo) * (b + 1) / kBins),
                        std::to_string(counts[static_cast<std::size_t>(b)])});
    }
  };
  std::vector<double> w;
  for (const auto& layer : model.layers()) {
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) w.push_back(layer.weight.data()[i]);
  }
  add("weight", w);
  if (sens != nullptr) add("sensitivity", sens->s);
  return t;
}

SweepReport run_sweep(const ExperimentConfig& cfg, const ChannelModel& channel) {
  SweepReport report;
  report.title = "Accuracy vs. cells per weight";
  const bool need_sens = any_sensitivity(cfg.strategies);
  std::vector<std::vector<SeedModel>> per_seed(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t s) {
    const std::uint64_t seed = cfg.seeds[s];
    DeskTask task = generate_desk_task(cfg.task, mix_seed(seed, 100));
    SeedModel sm;
    sm.model = train(fresh_model(cfg.model_sizes, seed), task.train, seeded(cfg.train, seed));
    if (need_sens) sm.sens = compute_sensitivity(sm.model, task.train);
    sm.clean_accuracy = evaluate(sm.model, task.test);
    sm.test = std::move(task.test);
    per_seed[s].push_back(std::move(sm));
  });
  evaluate_grid(cfg, channel, per_seed, {""}, report);
  const auto& first = per_seed.front().front();
  report.extras.push_back(histogram_table(first.model, first.sens ? &*first.sens : nullptr));
  return report;
}

double matched_noise(const std::optional<double>& fixed, const Model& model, const ExperimentConfig& cfg,
                     const std::string& destination, int r, const ChannelModel& channel,
                     const SensitivityMap* sens) {
  if (fixed) return *fixed;
  const CodingConfig dest = strategy_config(cfg.coding, destination, r);
  return injection_noise_std(model, dest, channel, sens);
}

SweepReport run_robust(const ExperimentConfig& cfg, const ChannelModel& channel) {
  SweepReport report;
  report.title = "Naive vs. robust training under channel noise";
  const bool need_sens = any_sensitivity(cfg.strategies);
  std::vector<std::vector<SeedModel>> per_seed(cfg.seeds.size());
  std::vector<double> noise(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t s) {
    const std::uint64_t seed = cfg.seeds[s];
    const DeskTask task = generate_desk_task(cfg.task, mix_seed(seed, 100));
    const Model init = fresh_model(cfg.model_sizes, seed);
    SeedModel naive;
    naive.variant = "naive";
    naive.model = train(init, task.train, seeded(cfg.train, seed));
    if (need_sens) naive.sens = compute_sensitivity(naive.model, task.train);

    TrainConfig rt = seeded(cfg.train, seed);
    rt.lambda = cfg.robust.lambda;
    rt.noise_std = noise[s] = matched_noise(cfg.robust.noise_std, naive.model, cfg, cfg.robust.destination,
                                            cfg.robust.destination_r, channel,
                                            naive.sens ? &*naive.sens : nullptr);
    SeedModel robust;
    robust.variant = "robust";
    robust.model = train(init, task.train, rt);
    if (need_sens) robust.sens = compute_sensitivity(robust.model, task.train);

    for (SeedModel* sm : {&naive, &robust}) {
      sm->clean_accuracy = evaluate(sm->model, task.test);
      sm->test = task.test;
    }
    per_seed[s] = {std::move(naive), std::move(robust)};
  });
  evaluate_grid(cfg, channel, per_seed, {"naive", "robust"}, report);
  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
    report.notes.push_back(fmt::format("seed {}: injected weight-noise std {}", cfg.seeds[s], fmt_num(noise[s])));
  }
  return report;
}

SweepReport run_distill(const ExperimentConfig& cfg, const ChannelModel& channel) {
  SweepReport report;
  report.title = "Clean vs. noisy-student distillation under channel noise";
  const bool need_sens = any_sensitivity(cfg.strategies);
  std::vector<std::vector<SeedModel>> per_seed(cfg.seeds.size());
  std::vector<double> noise(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t s) {
    const std::uint64_t seed = cfg.seeds[s];
    const DeskTask task = generate_desk_task(cfg.task, mix_seed(seed, 100));
    SeedModel teacher;
    teacher.variant = "teacher";
    teacher.model = train(fresh_model(cfg.distill.teacher_sizes, seed), task.train, seeded(cfg.train, seed));

    TrainConfig dt = seeded(cfg.train, seed);
    dt.temperature = cfg.distill.temperature;
    dt.lambda = cfg.distill.lambda;
    dt.noise_std = 0.0;
    SeedModel clean;
    clean.variant = "clean-student";
    clean.model = distill(teacher.model, cfg.distill.student_sizes, task.train, dt);
    std::optional<SensitivityMap> clean_sens;
    if (need_sens) clean_sens = compute_sensitivity(clean.model, task.train);

    dt.noise_std = noise[s] = matched_noise(cfg.distill.noise_std, clean.model, cfg, cfg.distill.destination,
                                            cfg.distill.destination_r, channel,
                                            clean_sens ? &*clean_sens : nullptr);
    SeedModel noisy;
    noisy.variant = "noisy-student";
    noisy.model = distill(teacher.model, cfg.distill.student_sizes, task.train, dt);

    clean.sens = std::move(clean_sens);
    for (SeedModel* sm : {&teacher, &noisy}) {
      if (need_sens) sm->sens = compute_sensitivity(sm->model, task.train);
    }
    for (SeedModel* sm : {&teacher, &clean, &noisy}) {
      sm->clean_accuracy = evaluate(sm->model, task.test);
      sm->test = task.test;
    }
    per_seed[s] = {std::move(teacher), std::move(clean), std::move(noisy)};
  });
  evaluate_grid(cfg, channel, per_seed, {"teacher", "clean-student", "noisy-student"}, report);
  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
    report.notes.push_back(fmt::format("seed {}: student weight-noise std {}", cfg.seeds[s], fmt_num(noise[s])));
  }
  return report;
}

SweepReport run_prune(const ExperimentConfig& cfg, const ChannelModel& channel) {
  SweepReport report;
  report.title = fmt::format("Unpruned vs. {}% pruned and retrained", fmt_num(100.0 * cfg.prune.sparsity));
  const bool need_sens = any_sensitivity(cfg.strategies);
  std::vector<std::vector<SeedModel>> per_seed(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.threads, [&](std::size_t s) {
    const std::uint64_t seed = cfg.seeds[s];
    const DeskTask task = generate_desk_task(cfg.task, mix_seed(seed, 100));
    SeedModel full;
    full.variant = "unpruned";
    full.model = train(fresh_model(cfg.model_sizes, seed), task.train, seeded(cfg.train, seed));

    TrainConfig rt = seeded(cfg.train, mix_seed(seed, 400));
    rt.epochs = cfg.prune.retrain_epochs;
    SeedModel pruned;
    pruned.variant = "pruned";
    pruned.model = train(prune(full.model, cfg.prune.sparsity), task.train, rt);

    for (SeedModel* sm : {&full, &pruned}) {
      if (need_sens) sm->sens = compute_sensitivity(sm->model, task.train);
      sm->clean_accuracy = evaluate(sm->model, task.test);
      sm->test = task.test;
    }
    per_seed[s] = {std::move(full), std::move(pruned)};
  });
  evaluate_grid(cfg, channel, per_seed, {"unpruned", "pruned"}, report);
  return report;
}

SweepReport run_e2e(const ExperimentConfig& cfg, const ChannelModel& channel) {
  SweepReport report;
  report.title = "End-to-end weight autoencoder on logistic-regression sets";
  const auto shared_channel = std::make_shared<const ChannelModel>(channel);
  const std::size_t n_seeds = cfg.seeds.size();
  const std::size_t n_kinds = cfg.e2e.kinds.size();
  const std::size_t n_modes = cfg.e2e.noise_modes.size();

  struct KindResult {
    std::vector<MixtureTask> tasks;
    WeightSet set;
  };
  std::vector<KindResult> kind_results(n_seeds * n_kinds);
  parallel_for(n_seeds * n_kinds, cfg.threads, [&](std::size_t idx) {
    const std::size_t s = idx / n_kinds, k = idx % n_kinds;
    const TaskKind kind = cfg.e2e.kinds[k] == "easy" ? TaskKind::Easy : TaskKind::Hard;
    KindResult kr;
    for (int t = 0; t < cfg.e2e.tasks; ++t) {
      kr.tasks.push_back(generate_task(kind, cfg.e2e.points,
                                       mix_seed(cfg.seeds[s], 1000 + 100 * k + static_cast<std::uint64_t>(t))));
    }
    kr.set = train_classifier_set(kr.tasks);
    kind_results[idx] = std::move(kr);
  });

  std::vector<AeEvaluation> evals(n_seeds * n_kinds * n_modes);
  std::vector<std::vector<double>> latents(evals.size());
  parallel_for(evals.size(), cfg.threads, [&](std::size_t idx) {
    const std::size_t m = idx % n_modes;
    const std::size_t sk = idx / n_modes;
    const std::size_t s = sk / n_kinds;
    const KindResult& kr = kind_results[sk];
    NoiseMode mode;
    const std::string& name = cfg.e2e.noise_modes[m];
    mode.kind = name == "gaussian" ? LatentNoise::Gaussian : name == "channel" ? LatentNoise::Channel : LatentNoise::None;
    mode.gaussian_std = cfg.e2e.gaussian_std;
    mode.channel = shared_channel;
    mode.target = cfg.e2e.latent_target;
    mode.cells = cfg.e2e.cells;
    AutoEncoderConfig ac = cfg.e2e.autoencoder;
    ac.seed = mix_seed(cfg.seeds[s], 500 + idx);
    const AutoEncoderTraining tr = train_autoencoder(kr.set, mode, kr.tasks, ac);
    evals[idx] = evaluate_ae(tr.ae, kr.set, kr.tasks, cfg.e2e.trials, mix_seed(cfg.seeds[s], 600 + idx));
    for (const auto& w : kr.set.weights) latents[idx].push_back(tr.ae.encode(w));
  });

  ExtraTable trials{"trials.csv", {"seed", "kind", "noise", "task_id", "trial", "accuracy", "agreement"}, {}};
  ExtraTable zs{"latents.csv", {"seed", "kind", "noise", "classifier", "z"}, {}};
  for (std::size_t k = 0; k < n_kinds; ++k) {
    std::vector<double> orig, bayes;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const KindResult& kr = kind_results[s * n_kinds + k];
      double a = 0.0, b = 0.0;
      for (std::size_t j = 0; j < kr.set.size(); ++j) {
        a += kr.set.held_out_accuracy[j];
        b += bayes_accuracy(kr.tasks[kr.set.task_ids[j]]);
      }
      orig.push_back(a / static_cast<double>(kr.set.size()));
      bayes.push_back(b / static_cast<double>(kr.set.size()));
    }
    // A 32-bit float per weight stored digitally, versus one latent per 3 weights.
    report.rows.push_back(make_row(cfg.e2e.kinds[k] + "/bayes", 0, 0.0, 0, bayes));
    report.rows.push_back(make_row(cfg.e2e.kinds[k] + "/original", kDigitalCells, kDigitalCells, 0, orig));
    for (std::size_t m = 0; m < n_modes; ++m) {
      std::vector<double> acc, agree;
      for (std::size_t s = 0; s < n_seeds; ++s) {
        const std::size_t idx = (s * n_kinds + k) * n_modes + m;
        acc.push_back(evals[idx].mean_accuracy);
        agree.push_back(evals[idx].mean_agreement);
        for (const auto& row : evals[idx].rows) {
          trials.rows.push_back({std::to_string(cfg.seeds[s]), cfg.e2e.kinds[k], cfg.e2e.noise_modes[m],
                                 std::to_string(row.task_id), std::to_string(row.trial), fmt_num(row.accuracy),
                                 fmt_num(row.agreement)});
        }
        for (std::size_t j = 0; j < latents[idx].size(); ++j) {
          zs.rows.push_back({std::to_string(cfg.seeds[s]), cfg.e2e.kinds[k], cfg.e2e.noise_modes[m],
                             std::to_string(j), fmt_num(latents[idx][j])});
        }
      }
      const int cells = cfg.e2e.noise_modes[m] == "channel" ? cfg.e2e.cells : 1;
      report.rows.push_back(make_row(cfg.e2e.kinds[k] + "/" + cfg.e2e.noise_modes[m], cells, cells / 3.0, 0, acc));
      report.rows.push_back(
          make_row(cfg.e2e.kinds[k] + "/" + cfg.e2e.noise_modes[m] + "/agreement", cells, cells / 3.0, 0, agree));
    }
  }
  report.notes.push_back("bayes: accuracy of the optimal rule for each task (upper bound on any classifier)");
  report.notes.push_back("agreement: fraction of held-out points where the reconstructed classifier predicts like the original");
  report.extras.push_back(std::move(trials));
  report.extras.push_back(std::move(zs));
  return report;
}

SweepReport run_cost(const ExperimentConfig& cfg) {
  SweepReport report;
  report.title = "Storage cost per weight";
  for (const auto& label : cfg.strategies) {
    CodingConfig c = cfg.coding;
    apply_strategy_label(c, label);
    const CostReport rep = storage_cost(c, cfg.cost.counts);
    report.rows.push_back(make_row(label, c.r_small, rep.analog_cells.value(), rep.side_bits_per_weight, {}));
    report.notes.push_back(fmt::format("{}: r_avg = {}/{}, sensitivity top-up = {}/{}", label, rep.r_avg.num,
                                       rep.r_avg.den, rep.sens_top_up.num, rep.sens_top_up.den));
  }
  report.rows.push_back(make_row("digital", kDigitalCells, kDigitalCells, 0, {}));
  return report;
}

SweepReport run_channel_stats(const ExperimentConfig& cfg, const ChannelModel& channel) {
  SweepReport report;
  report.title = "Channel statistics";
  ExtraTable levels{"channel.csv", {"level", "mean", "std"}, {}};
  for (std::size_t i = 0; i < channel.levels().size(); ++i) {
    levels.rows.push_back({fmt_num(channel.levels()[i]), fmt_num(channel.mean_at_level()[i]),
                           fmt_num(channel.std_at_level()[i])});
  }

  constexpr int kGrid = 21;
  constexpr int kReads = 10000;
  const Interval out = channel.invertible_output_range();
  ExtraTable inversion{"inversion.csv", {"target", "write_level", "mean_read", "std_read"}, {}};
  Rng rng(mix_seed(cfg.seeds.front(), 700));
  for (int k = 0; k < kGrid; ++k) {
    const double y = out.lo + out.width() * k / (kGrid - 1);
    const double x = channel.invert_mean(y);
    std::vector<double> reads;
    for (int i = 0; i < kReads; ++i) reads.push_back(channel.sample(x, rng));
    const Stats st = stats(reads);
    inversion.rows.push_back({fmt_num(y), fmt_num(x), fmt_num(st.mean), fmt_num(st.stddev)});
  }

  const double x = std::clamp(0.2, channel.input_range().lo, channel.input_range().hi);
  ExtraTable red{"redundancy.csv", {"r", "empirical_std", "predicted_std"}, {}};
  for (int r : cfg.redundancy) {
    std::vector<double> reads;
    for (int i = 0; i < kReads; ++i) reads.push_back(channel.read_avg(x, r, rng));
    const double predicted = channel.stddev(x) / std::sqrt(static_cast<double>(r));
    red.rows.push_back({std::to_string(r), fmt_num(stats(reads).stddev), fmt_num(predicted)});
    report.rows.push_back(make_row(fmt::format("read_avg@x={}", fmt_num(x)), r, r, 0, {}));
  }
  report.notes.push_back(fmt::format("invertible input [{}, {}], output [{}, {}]", fmt_num(channel.invertible_input_range().lo),
                                     fmt_num(channel.invertible_input_range().hi), fmt_num(out.lo), fmt_num(out.hi)));
  report.extras = {std::move(levels), std::move(inversion), std::move(red)};
  return report;
}

}  // namespace

SweepReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  if (config.kind == ExperimentKind::Cost) return run_cost(config);
  const ChannelModel channel = build_channel(config.channel, config.base_dir);
  if (config.kind != ExperimentKind::ChannelStats && config.kind != ExperimentKind::EndToEnd) {
    try {
      config.coding.validate(&channel);
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, fmt::format("coding.target: {}", e.what()));
    }
  }
  switch (config.kind) {
    case ExperimentKind::ChannelStats: return run_channel_stats(config, channel);
    case ExperimentKind::Sweep: return run_sweep(config, channel);
    case ExperimentKind::RobustTrain: return run_robust(config, channel);
    case ExperimentKind::Distill: return run_distill(config, channel);
    case ExperimentKind::Prune: return run_prune(config, channel);
    case ExperimentKind::EndToEnd: return run_e2e(config, channel);
    case ExperimentKind::Cost: break;
  }
  return run_cost(config);
}

std::string fmt_num(double v) {
  std::string s = fmt::format("{:.6f}", v);
  if (s == "-0.000000") s.erase(0, 1);  // values that round to zero lose the sign
  return s;
}

std::string report_csv(const SweepReport& report) {
  std::string out = "strategy,r,r_avg,side_bits,total_cells_per_weight,mean_accuracy,std_accuracy,runs\r\n";
  for (const auto& row : report.rows) {
    out += fmt::format("{},{},{},{},{},{},{},{}\r\n", csv_field(row.label), row.r, fmt_num(row.r_avg), row.side_bits,
                       fmt_num(row.total_cells_per_weight),
                       row.mean_accuracy ? fmt_num(*row.mean_accuracy) : "",
                       row.std_accuracy ? fmt_num(*row.std_accuracy) : "", row.runs);
  }
  return out;
}

std::string report_markdown(const SweepReport& report) {
  std::string out = fmt::format("# {}\n\n", report.title);
  out += "| strategy | r | r_avg | side bits | cells/weight | accuracy | std | runs |\n";
  out += "|---|---:|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& row : report.rows) {
    out += fmt::format("| {} | {} | {:.4f} | {} | {:.4f} | {} | {} | {} |\n", row.label, row.r, row.r_avg,
                       row.side_bits, row.total_cells_per_weight,
                       row.mean_accuracy ? fmt::format("{:.4f}", *row.mean_accuracy) : "-",
                       row.std_accuracy ? fmt::format("{:.4f}", *row.std_accuracy) : "-", row.runs);
  }
  if (!report.notes.empty()) {
    out += "\n";
    for (const auto& n : report.notes) out += "- " + n + "\n";
  }
  return out;
}

void write_report(const SweepReport& report, const std::filesystem::path& dir) {
  write_text(dir / "report.csv", report_csv(report));
  write_text(dir / "report.md", report_markdown(report));
  for (const auto& extra : report.extras) {
    std::string out;
    for (std::size_t i = 0; i < extra.header.size(); ++i) out += (i ? "," : "") + csv_field(extra.header[i]);
    out += "\r\n";
    for (const auto& row : extra.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_field(row[i]);
      out += "\r\n";
    }
    write_text(dir / extra.file, out);
  }
}

}  // namespace pcmstore
