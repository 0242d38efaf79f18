// SPDX-License-Identifier: Apache-2.0
#include "pcmstore/io.hpp"

#include <fstream>
#include <sstream>

#include <fmt/core.h>

#include "pcmstore/error.hpp"

namespace pcmstore {

namespace {

template <typename T>
T field(const Json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw Error(ErrorKind::ConfigError, fmt::format("{}: missing '{}'", where, key));
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::ConfigError, fmt::format("{}.{}: {}", where, key, e.what()));
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Json model_to_json(const Model& model) {
  Json doc;
  doc["format"] = "pcmstore-weights";
  doc["version"] = 1;
  doc["head"] = model.head() == Head::BinaryLogistic ? "binary_logistic" : "softmax";
  Json layers = Json::array();
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const Layer& layer = model.layers()[l];
    Json j;
    j["name"] = fmt::format("layer{}", l);
    j["activation"] = layer.activation == Activation::Relu ? "relu" : "identity";
    j["rows"] = layer.weight.rows();
    j["cols"] = layer.weight.cols();
    std::vector<double> w;
    std::vector<int> mask;
    bool any_masked = false;
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        w.push_back(layer.weight(r, c));
        mask.push_back(layer.pruned(r, c));
        any_masked = any_masked || layer.pruned(r, c) != 0;
      }
    }
    j["weight"] = w;
    j["bias"] = std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size());
    if (any_masked) j["zero_mask"] = mask;
    layers.push_back(std::move(j));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

Model model_from_json(const Json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "pcmstore-weights") {
    throw Error(ErrorKind::ConfigError, "not a pcmstore weight file");
  }
  const auto head_name = field<std::string>(doc, "head", "weights");
  if (head_name != "softmax" && head_name != "binary_logistic") {
    throw Error(ErrorKind::ConfigError, fmt::format("weights.head: unknown head '{}'", head_name));
  }
  std::vector<Layer> layers;
  const Json& arr = doc.at("layers");
  for (std::size_t l = 0; l < arr.size(); ++l) {
    const std::string where = fmt::format("weights.layers[{}]", l);
    const Json& j = arr[l];
    const auto rows = field<Eigen::Index>(j, "rows", where);
    const auto cols = field<Eigen::Index>(j, "cols", where);
    const auto w = field<std::vector<double>>(j, "weight", where);
    const auto b = field<std::vector<double>>(j, "bias", where);
    if (rows < 1 || cols < 1 || static_cast<Eigen::Index>(w.size()) != rows * cols ||
        static_cast<Eigen::Index>(b.size()) != rows) {
      throw Error(ErrorKind::ShapeMismatch, fmt::format("{}: inconsistent sizes", where));
    }
    Layer layer;
    layer.weight.resize(rows, cols);
    layer.pruned.setZero(rows, cols);
    std::vector<int> mask;
    if (j.contains("zero_mask")) {
      mask = field<std::vector<int>>(j, "zero_mask", where);
      if (mask.size() != w.size()) throw Error(ErrorKind::ShapeMismatch, fmt::format("{}: mask size", where));
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        const auto k = static_cast<std::size_t>(r * cols + c);
        layer.weight(r, c) = w[k];
        if (!mask.empty()) layer.pruned(r, c) = mask[k] != 0 ? 1 : 0;
      }
    }
    layer.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
    const auto act = field<std::string>(j, "activation", where);
    if (act != "relu" && act != "identity") {
      throw Error(ErrorKind::ConfigError, fmt::format("{}.activation: unknown '{}'", where, act));
    }
    layer.activation = act == "relu" ? Activation::Relu : Activation::Identity;
    layers.push_back(std::move(layer));
  }
  return Model(std::move(layers), head_name == "softmax" ? Head::Softmax : Head::BinaryLogistic);
}

void save_model(const std::filesystem::path& path, const Model& model) {
  write_text(path, model_to_json(model).dump(1) + "\n");
}

Model load_model(const std::filesystem::path& path) { return model_from_json(read_json(path)); }

std::vector<WeightTensor> model_tensors(const Model& model) {
  std::vector<WeightTensor> out;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const Layer& layer = model.layers()[l];
    WeightTensor t;
    t.name = fmt::format("layer{}", l);
    t.shape = {static_cast<std::size_t>(layer.weight.rows()), static_cast<std::size_t>(layer.weight.cols() + 1)};
    bool any_masked = false;
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        t.values.push_back(layer.weight(r, c));
        t.zero_mask.push_back(layer.pruned(r, c));
        any_masked = any_masked || layer.pruned(r, c) != 0;
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      t.values.push_back(layer.bias(r));
      t.zero_mask.push_back(0);
    }
    if (!any_masked) t.zero_mask.clear();
    out.push_back(std::move(t));
  }
  return out;
}

Model with_tensors(Model model, const std::vector<WeightTensor>& tensors) {
  if (tensors.size() != model.layers().size()) {
    throw Error(ErrorKind::ShapeMismatch, "tensor count differs from layer count");
  }
  for (std::size_t l = 0; l < tensors.size(); ++l) {
    Layer& layer = model.layers()[l];
    const auto& v = tensors[l].values;
    if (static_cast<Eigen::Index>(v.size()) != layer.weight.size() + layer.bias.size()) {
      throw Error(ErrorKind::ShapeMismatch, fmt::format("tensor {} size mismatch", l));
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = v[k++];
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = v[k++];
  }
  model.apply_mask();
  return model;
}

Json encoded_to_json(const std::vector<EncodedWeights>& layers) {
  Json doc;
  doc["format"] = "pcmstore-encoded";
  doc["version"] = 1;
  Json arr = Json::array();
  for (const auto& e : layers) {
    Json j;
    j["name"] = e.name;
    j["shape"] = e.shape;
    j["strategy"] = strategy_label(e.config);
    j["target_interval"] = {e.config.target.lo, e.config.target.hi};
    j["mapping"] = {{"small", {{"alpha", e.mapping.small.alpha}, {"beta", e.mapping.small.beta}}},
                    {"large", {{"alpha", e.mapping.large.alpha}, {"beta", e.mapping.large.beta}}},
                    {"tau", e.mapping.tau},
                    {"two_groups", e.mapping.two_groups}};
    j["target"] = e.target;
    j["cells"] = e.cells;
    if (!e.sign_bit.empty()) j["sign_bit"] = e.sign_bit;
    if (!e.group_bit.empty()) j["group_bit"] = e.group_bit;
    if (!e.sensitivity_bit.empty()) j["sensitivity_bit"] = e.sensitivity_bit;
    if (!e.zero_mask.empty()) j["zero_mask"] = e.zero_mask;
    arr.push_back(std::move(j));
  }
  doc["layers"] = std::move(arr);
  return doc;
}

Json sensitivity_to_json(const SensitivityMap& sens, const Model& model) {
  if (sens.s.size() != model.num_parameters()) {
    throw Error(ErrorKind::ShapeMismatch, "sensitivity map does not match the model");
  }
  Json doc;
  doc["format"] = "pcmstore-sensitivity";
  doc["version"] = 1;
  doc["samples"] = sens.samples;
  Json arr = Json::array();
  const auto offsets = model.layer_offsets();
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const auto begin = sens.s.begin() + static_cast<std::ptrdiff_t>(offsets[l]);
    const auto end = begin + static_cast<std::ptrdiff_t>(model.layers()[l].num_parameters());
    arr.push_back({{"name", fmt::format("layer{}", l)}, {"s", std::vector<double>(begin, end)}});
  }
  doc["layers"] = std::move(arr);
  return doc;
}

SensitivityMap sensitivity_from_json(const Json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "pcmstore-sensitivity") {
    throw Error(ErrorKind::ConfigError, "not a pcmstore sensitivity file");
  }
  SensitivityMap m;
  m.samples = field<std::size_t>(doc, "samples", "sensitivity");
  for (const auto& layer : doc.at("layers")) {
    const auto s = field<std::vector<double>>(layer, "s", "sensitivity.layers[]");
    m.s.insert(m.s.end(), s.begin(), s.end());
  }
  return m;
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, fmt::format("cannot open '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::EmptyDataset, fmt::format("'{}' is empty", path.string()));
  const std::size_t cols = split_csv_line(line).size();
  if (cols < 2) throw Error(ErrorKind::ShapeMismatch, "dataset needs at least one feature and a label");

  std::vector<double> feats;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != cols) {
      throw Error(ErrorKind::ShapeMismatch, fmt::format("line {}: expected {} fields", line_no, cols));
    }
    try {
      for (std::size_t c = 0; c + 1 < cols; ++c) feats.push_back(std::stod(cells[c]));
      std::size_t used = 0;
      labels.push_back(std::stoi(cells.back(), &used));
    } catch (const std::exception&) {
      throw Error(ErrorKind::ShapeMismatch, fmt::format("line {}: unparsable field", line_no));
    }
  }
  Dataset d;
  const auto nf = static_cast<Eigen::Index>(cols - 1);
  d.x.resize(nf, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (Eigen::Index f = 0; f < nf; ++f) {
      d.x(f, static_cast<Eigen::Index>(i)) = feats[i * static_cast<std::size_t>(nf) + static_cast<std::size_t>(f)];
    }
  }
  d.y = std::move(labels);
  return d;
}

void save_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::string out;
  for (int f = 0; f < data.num_features(); ++f) out += fmt::format("x{},", f);
  out += "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int f = 0; f < data.num_features(); ++f) out += fmt::format("{},", data.x(f, static_cast<Eigen::Index>(i)));
    out += fmt::format("{}\n", data.y[i]);
  }
  write_text(path, out);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, fmt::format("cannot write '{}'", path.string()));
  out << content;
  if (!out) throw Error(ErrorKind::IoError, fmt::format("write failed for '{}'", path.string()));
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, fmt::format("cannot open '{}'", path.string()));
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::ConfigError, fmt::format("'{}': {}", path.string(), e.what()));
  }
}

}  // namespace pcmstore
