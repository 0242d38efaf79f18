// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "pcmstore/codec.hpp"
#include "pcmstore/sensitivity.hpp"
#include "pcmstore/tinynn.hpp"

namespace pcmstore {

using Json = nlohmann::ordered_json;

// Weight file: {"format": "pcmstore-weights", "version": 1, "head": ...,
// "layers": [{"name", "activation", "rows", "cols", "weight" (row-major),
// "bias", "zero_mask" (optional, row-major 0/1)}]}
Json model_to_json(const Model& model);
Model model_from_json(const Json& doc);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

/// Per-layer tensors: weights row-major followed by biases, with the
/// pruning mask carried along (biases never masked).
std::vector<WeightTensor> model_tensors(const Model& model);
/// Replaces the model's parameters with the tensors' values (same layout).
Model with_tensors(Model model, const std::vector<WeightTensor>& tensors);

Json encoded_to_json(const std::vector<EncodedWeights>& layers);
Json sensitivity_to_json(const SensitivityMap& sens, const Model& model);
SensitivityMap sensitivity_from_json(const Json& doc);

/// Feature columns then an integer label column; a header row is required.
Dataset load_dataset_csv(const std::filesystem::path& path);
void save_dataset_csv(const std::filesystem::path& path, const Dataset& data);

/// RFC-4180 field quoting.
std::string csv_field(const std::string& s);
void write_text(const std::filesystem::path& path, const std::string& content);
Json read_json(const std::filesystem::path& path);

}  // namespace pcmstore
