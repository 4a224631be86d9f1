#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bases/dataset.hpp"
#include "bases/network.hpp"

namespace bases {

using Model = Network<float>;

void to_json(nlohmann::json& j, const LayerSpec& s);
void from_json(const nlohmann::json& j, LayerSpec& s);
void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);

/// Parameters drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)], one
/// SplitMix64 stream per (seed, "init").
Model build_model(const Architecture& arch, std::uint64_t seed);

struct TrainConfig {
  int epochs = 20;
  double learning_rate = 0.05;
  int batch_size = 16;
  std::uint64_t seed = 1;
  double weight_decay = 1e-4;
};

/// Mean cross-entropy per epoch, filled by `train` when requested.
struct TrainReport {
  std::vector<double> epoch_loss;
};

/// Minibatch SGD on mean cross-entropy plus L2 weight decay on weights.
/// Batch order is a per-epoch shuffle from the (seed, "batch-order") stream.
Model train(Model model, const LabeledDataset& data, const TrainConfig& cfg, TrainReport* report = nullptr);

/// Fraction of samples whose argmax logit (ties to the lowest index) equals the label.
double accuracy(const Model& model, const LabeledDataset& data);

std::string encode_model(const Model& model, const std::string& id);
std::pair<std::string, Model> decode_model(std::string_view bytes);
void save_model(const Model& model, const std::string& id, const std::string& path);

struct LoadedModel {
  std::string id;
  Model model;
};
LoadedModel load_model(const std::string& path);

struct ZooEntry {
  std::string id;
  Architecture arch;
  std::string weights;  // relative to the manifest directory
  double accuracy = 0.0;
};

struct ZooManifest {
  std::vector<ZooEntry> entries;  // sorted by id
  std::string directory;          // where relative weight paths resolve

  const ZooEntry& find(const std::string& id) const;
  std::string weights_path(const ZooEntry& e) const;
  Model load(const std::string& id) const;
  std::vector<Model> load(const std::vector<std::string>& ids) const;

  void save(const std::string& path) const;
  static ZooManifest read(const std::string& path);
};

/// Architectures for the default desk zoo: MLPs and CNNs of several depths.
std::vector<std::pair<std::string, Architecture>> default_architectures(int side, int num_classes);

struct ZooBuildOptions {
  int num_classes = 10;
  int per_class = 60;
  int side = 12;
  std::uint64_t seed = 2024;
  SyntheticOptions data{};
  TrainConfig train{.epochs = 150};
};

/// Generates the synthetic dataset, trains every default architecture and
/// writes dataset.bds, one .bem file per model and manifest.json into `dir`.
ZooManifest build_default_zoo(const std::string& dir, const ZooBuildOptions& options, bool verbose = false);

}  // namespace bases
