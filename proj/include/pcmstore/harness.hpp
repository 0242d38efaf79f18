// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pcmstore/channel.hpp"
#include "pcmstore/codec.hpp"
#include "pcmstore/endtoend.hpp"
#include "pcmstore/io.hpp"
#include "pcmstore/sensitivity.hpp"
#include "pcmstore/tinynn.hpp"

namespace pcmstore {

// ---------------------------------------------------------------------------
// Desk task and storage pipeline

/// 2-class mixture of isotropic Gaussian blobs in the plane. Blob centres
/// are drawn uniformly in [-range, range]^2 and alternate between labels.
struct DeskTaskConfig {
  std::size_t n_train = 4000;
  std::size_t n_test = 2000;
  int blobs_per_class = 2;
  double range = 2.0;
  double spread = 0.35;
};

struct DeskTask {
  Dataset train;
  Dataset test;
};

DeskTask generate_desk_task(const DeskTaskConfig& config, std::uint64_t seed);

/// Encodes every layer (weights and biases) of `model` with its own mapping.
std::vector<EncodedWeights> encode_model(const Model& model, const CodingConfig& config,
                                         const SensitivityMap* sens = nullptr);

/// Encode, write to the channel, read back and decode every layer.
Model store_model(const Model& model, const CodingConfig& config, const ChannelModel& channel,
                  Rng& rng, const SensitivityMap* sens = nullptr);

/// Storage cost of a model under a config, from the exact partition counts.
CostReport model_cost(const Model& model, const CodingConfig& config,
                      const SensitivityMap* sens = nullptr);

/// Mean accuracy over `trials` independent channel draws.
double perturbed_accuracy(const Model& model, const Dataset& test, const CodingConfig& config,
                          const ChannelModel& channel, int trials, std::uint64_t seed,
                          const SensitivityMap* sens = nullptr);

/// Weight-noise std for robust training aimed at a coding config: the mean
/// over stored weights of sigma_bar / (alpha_g * sqrt(r_g)), where sigma_bar
/// is the channel std averaged over the levels inside the target interval.
double injection_noise_std(const Model& model, const CodingConfig& config,
                           const ChannelModel& channel, const SensitivityMap* sens = nullptr);

// ---------------------------------------------------------------------------
// Experiment configuration and reports

enum class ExperimentKind { ChannelStats, Sweep, RobustTrain, Distill, Prune, EndToEnd, Cost };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& name);

struct ChannelSource {
  std::optional<std::filesystem::path> measurements;
  SyntheticChannelParams synthetic;
};

struct RobustSettings {
  double lambda = 0.5;
  std::optional<double> noise_std;  // unset: derived from the destination config
  std::string destination = "SP";   // strategy label the noise level is matched to
  int destination_r = 1;
};

struct DistillSettings {
  std::vector<int> teacher_sizes{2, 64, 64, 2};
  std::vector<int> student_sizes{2, 16, 16, 2};
  double temperature = 1.5;
  double lambda = 0.5;
  std::optional<double> noise_std;
  std::string destination = "SP";
  int destination_r = 1;
};

struct PruneSettings {
  double sparsity = 0.9;
  int retrain_epochs = 20;
};

struct EndToEndSettings {
  int tasks = 50;
  std::size_t points = 5000;
  int trials = 20;
  double gaussian_std = 0.05;
  Interval latent_target{-1.0, 1.0};
  int cells = 1;
  std::vector<std::string> kinds{"easy", "hard"};
  std::vector<std::string> noise_modes{"gaussian", "channel"};
  AutoEncoderConfig autoencoder;
};

struct CostSettings {
  PartitionCounts counts{11168312, 5650, 0, 0};
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Sweep;
  ChannelSource channel;
  CodingConfig coding;
  TrainConfig train;
  std::vector<int> model_sizes{2, 32, 32, 2};
  DeskTaskConfig task;
  std::vector<std::string> strategies{"none", "SP", "SP+AM", "SP+AM+AR", "SP+AM+AR+Sens"};
  std::vector<int> redundancy{1, 2, 3, 4, 8, 16, 32, 64};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int noise_trials = 5;
  int threads = 1;
  RobustSettings robust;
  DistillSettings distill;
  PruneSettings prune;
  EndToEndSettings e2e;
  CostSettings cost;
  std::filesystem::path output = "out";
  std::filesystem::path base_dir = ".";  // relative paths resolve against this

  void validate() const;
};

/// Parses a JSON config document; unknown keys are errors naming the field.
ExperimentConfig parse_experiment_config(const Json& doc, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

ChannelModel build_channel(const ChannelSource& source, const std::filesystem::path& base_dir);

struct SweepRow {
  std::string label;
  int r = 0;
  double r_avg = 0.0;  // analog cells per weight incl. sensitivity top-ups
  int side_bits = 0;
  double total_cells_per_weight = 0.0;  // r_avg + side_bits / 2
  std::optional<double> mean_accuracy;
  std::optional<double> std_accuracy;
  std::size_t runs = 0;
};

struct ExtraTable {
  std::string file;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct SweepReport {
  std::string title;
  std::vector<SweepRow> rows;
  std::vector<std::string> notes;
  std::vector<ExtraTable> extras;
};

SweepReport run_experiment(const ExperimentConfig& config);

std::string report_csv(const SweepReport& report);
std::string report_markdown(const SweepReport& report);
/// Writes report.csv, report.md and the extra tables into `dir`.
void write_report(const SweepReport& report, const std::filesystem::path& dir);

/// Fixed-precision number formatting used by every report.
std::string fmt_num(double v);

}  // namespace pcmstore
