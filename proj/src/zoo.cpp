#include "bases/zoo.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <set>

#include "bases/binary_io.hpp"
#include "bases/rng.hpp"

namespace bases {

using nlohmann::json;

void to_json(json& j, const LayerSpec& s) {
  j = json{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case LayerKind::dense:
      j["in_features"] = s.in_features;
      j["out_features"] = s.out_features;
      break;
    case LayerKind::conv2d:
      j["in_channels"] = s.in_channels;
      j["out_channels"] = s.out_channels;
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      break;
    default:
      break;
  }
}

void from_json(const json& j, LayerSpec& s) {
  s = LayerSpec{};
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  switch (s.kind) {
    case LayerKind::dense:
      s.in_features = j.at("in_features").get<int>();
      s.out_features = j.at("out_features").get<int>();
      break;
    case LayerKind::conv2d:
      s.in_channels = j.at("in_channels").get<int>();
      s.out_channels = j.at("out_channels").get<int>();
      s.kernel = j.at("kernel").get<int>();
      s.stride = j.value("stride", 1);
      break;
    default:
      break;
  }
}

void to_json(json& j, const Architecture& a) { j = json{{"input_shape", a.input_shape}, {"layers", a.layers}}; }

void from_json(const json& j, Architecture& a) {
  a.input_shape = j.at("input_shape").get<Shape>();
  a.layers = j.at("layers").get<std::vector<LayerSpec>>();
}

Model build_model(const Architecture& arch, std::uint64_t seed) {
  infer_shapes(arch);
  SplitMix64 rng(seed, "init");
  std::vector<LayerParams<float>> params;
  for (const auto& layer : arch.layers) {
    const auto [rows, cols] = Model::weight_shape(layer);
    LayerParams<float> p{RowMatrix<float>(rows, cols), Vector<float>(rows)};
    if (layer.has_params()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
      for (Eigen::Index i = 0; i < p.weight.size(); ++i) {
        p.weight.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
      }
      for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias[i] = static_cast<float>(rng.uniform(-bound, bound));
    }
    params.push_back(std::move(p));
  }
  return Model(arch, std::move(params));
}

Model train(Model model, const LabeledDataset& data, const TrainConfig& cfg, TrainReport* report) {
  if (data.empty()) throw Error("cannot train on an empty dataset");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.learning_rate < 0 || cfg.weight_decay < 0) {
    throw ConfigError("invalid training configuration");
  }
  const auto lr = static_cast<float>(cfg.learning_rate);
  const auto decay = static_cast<float>(cfg.weight_decay);
  SplitMix64 order_rng(cfg.seed, "batch-order");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<LayerParams<float>> grads;
  for (const auto& p : model.params()) {
    grads.push_back({RowMatrix<float>::Zero(p.weight.rows(), p.weight.cols()), Vector<float>::Zero(p.bias.size())});
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      for (auto& g : grads) {
        g.weight.setZero();
        g.bias.setZero();
      }
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const auto trace = detail::forward_trace(model, data.images[i].data);
        const Vector<float>& z = trace.back();
        const int y = data.labels[i];
        epoch_loss += static_cast<double>(log_sum_exp(z) - z[y]);
        Vector<float> upstream = softmax(z);
        upstream[y] -= 1.0f;
        detail::backward(model, trace, upstream, &grads);
      }
      if (!std::isfinite(epoch_loss)) {
        throw TrainingDiverged("training loss became non-finite in epoch " + std::to_string(epoch));
      }
      const float scale = 1.0f / static_cast<float>(end - start);
      for (std::size_t l = 0; l < grads.size(); ++l) {
        auto& p = model.params()[l];
        p.weight -= lr * (scale * grads[l].weight + decay * p.weight);
        p.bias -= lr * (scale * grads[l].bias);
      }
    }
    if (report) report->epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  for (const auto& p : model.params()) {
    if (!p.weight.allFinite() || !p.bias.allFinite()) throw TrainingDiverged("parameters became non-finite");
  }
  return model;
}

double accuracy(const Model& model, const LabeledDataset& data) {
  if (data.empty()) throw Error("accuracy of an empty dataset is undefined");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (argmax(forward(model, data.images[i]).data) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string encode_model(const Model& model, const std::string& id) {
  const json header{{"spec", model.architecture()}, {"num_classes", model.num_classes()}, {"id", id}};
  const std::string text = header.dump();
  io::Writer w;
  w.bytes("BEM1");
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  for (const auto& p : model.params()) {
    w.f32_range(p.weight.data(), p.weight.data() + p.weight.size());
    w.f32_range(p.bias.data(), p.bias.data() + p.bias.size());
  }
  return w.buffer();
}

std::pair<std::string, Model> decode_model(std::string_view bytes) {
  io::Reader r(bytes);
  if (r.bytes(4, "magic") != "BEM1") throw FormatError("bad model magic", 0);
  const std::size_t length_offset = r.offset();
  const auto header_len = r.u32("header length");
  if (header_len > r.remaining()) throw FormatError("header length exceeds file size", length_offset);
  const std::size_t header_offset = r.offset();
  const auto text = r.bytes(header_len, "header");

  Architecture arch;
  std::string id;
  int classes = 0;
  try {
    const json header = json::parse(text);
    arch = header.at("spec").get<Architecture>();
    classes = header.at("num_classes").get<int>();
    id = header.at("id").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model header: ") + e.what(), header_offset);
  } catch (const SpecError& e) {
    throw FormatError(std::string("invalid architecture in header: ") + e.what(), header_offset);
  }

  std::vector<Shape> shapes;
  try {
    shapes = infer_shapes(arch);
  } catch (const SpecError& e) {
    throw FormatError(std::string("invalid architecture in header: ") + e.what(), header_offset);
  }
  if (shapes.back()[0] != classes) throw FormatError("num_classes disagrees with architecture", header_offset);

  std::size_t expected = 0;
  for (const auto& layer : arch.layers) {
    const auto [rows, cols] = Model::weight_shape(layer);
    expected += static_cast<std::size_t>(rows * cols + (layer.has_params() ? rows : 0));
  }
  if (r.remaining() != 4 * expected) {
    throw FormatError("parameter payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(4 * expected),
                      r.offset());
  }
  std::vector<LayerParams<float>> params;
  for (const auto& layer : arch.layers) {
    const auto [rows, cols] = Model::weight_shape(layer);
    LayerParams<float> p{RowMatrix<float>(rows, cols), Vector<float>(layer.has_params() ? rows : 0)};
    for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight.data()[i] = r.f32("weight");
    for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias[i] = r.f32("bias");
    params.push_back(std::move(p));
  }
  return {id, Model(std::move(arch), std::move(params))};
}

void save_model(const Model& model, const std::string& id, const std::string& path) {
  io::write_file(path, encode_model(model, id));
}

LoadedModel load_model(const std::string& path) {
  auto [id, model] = decode_model(io::read_file(path));
  return {std::move(id), std::move(model)};
}

const ZooEntry& ZooManifest::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return e;
  }
  throw ConfigError("model id '" + id + "' is not in the manifest");
}

std::string ZooManifest::weights_path(const ZooEntry& e) const {
  return (std::filesystem::path(directory) / e.weights).string();
}

Model ZooManifest::load(const std::string& id) const {
  const auto& e = find(id);
  auto loaded = load_model(weights_path(e));
  if (loaded.id != id || loaded.model.architecture() != e.arch) {
    throw ConfigError("weights file for '" + id + "' does not match its manifest entry");
  }
  return std::move(loaded.model);
}

std::vector<Model> ZooManifest::load(const std::vector<std::string>& ids) const {
  std::vector<Model> out;
  for (const auto& id : ids) out.push_back(load(id));
  return out;
}

void ZooManifest::save(const std::string& path) const {
  json models = json::array();
  for (const auto& e : entries) {
    models.push_back({{"id", e.id}, {"spec", e.arch}, {"weights", e.weights}, {"accuracy", e.accuracy}});
  }
  io::write_file(path, json{{"models", models}}.dump(2) + "\n");
}

ZooManifest ZooManifest::read(const std::string& path) {
  ZooManifest m;
  m.directory = std::filesystem::path(path).parent_path().string();
  try {
    const json j = json::parse(io::read_file(path));
    for (const auto& item : j.at("models")) {
      m.entries.push_back({item.at("id").get<std::string>(), item.at("spec").get<Architecture>(),
                           item.at("weights").get<std::string>(), item.value("accuracy", 0.0)});
    }
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest '" + path + "': " + e.what());
  }
  std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < m.entries.size(); ++i) {
    if (m.entries[i].id == m.entries[i - 1].id) throw ConfigError("duplicate model id '" + m.entries[i].id + "'");
  }
  return m;
}

std::vector<std::pair<std::string, Architecture>> default_architectures(int side, int num_classes) {
  const Shape input{1, side, side};
  const int flat = side * side;
  auto conv_out = [](int n, int k, int s) { return (n - k) / s + 1; };
  using L = LayerSpec;

  std::vector<std::pair<std::string, Architecture>> zoo;
  {
    const int o = conv_out(side, 3, 1);
    zoo.push_back({"cnn-a", {input, {L::conv2d(1, 4, 3), L::relu(), L::flatten(), L::dense(4 * o * o, num_classes)}}});
  }
  {
    const int o = conv_out(side, 5, 1);
    zoo.push_back({"cnn-b",
                   {input,
                    {L::conv2d(1, 6, 5), L::relu(), L::flatten(), L::dense(6 * o * o, 32), L::relu(),
                     L::dense(32, num_classes)}}});
  }
  {
    const int o1 = conv_out(side, 3, 2);
    const int o2 = conv_out(o1, 3, 1);
    zoo.push_back({"cnn-c",
                   {input,
                    {L::conv2d(1, 8, 3, 2), L::relu(), L::conv2d(8, 8, 3), L::relu(), L::flatten(),
                     L::dense(8 * o2 * o2, num_classes)}}});
  }
  {
    const int o1 = conv_out(side, 3, 1);
    const int o2 = conv_out(o1, 3, 1);
    zoo.push_back({"cnn-d",
                   {input,
                    {L::conv2d(1, 4, 3), L::relu(), L::conv2d(4, 6, 3), L::relu(), L::flatten(),
                     L::dense(6 * o2 * o2, num_classes)}}});
  }
  zoo.push_back({"mlp-a", {input, {L::flatten(), L::dense(flat, 32), L::relu(), L::dense(32, num_classes)}}});
  zoo.push_back({"mlp-b",
                 {input,
                  {L::flatten(), L::dense(flat, 64), L::relu(), L::dense(64, 32), L::relu(),
                   L::dense(32, num_classes)}}});
  zoo.push_back({"mlp-c", {input, {L::flatten(), L::dense(flat, 16), L::relu(), L::dense(16, num_classes)}}});
  zoo.push_back({"mlp-d",
                 {input,
                  {L::flatten(), L::dense(flat, 48), L::relu(), L::dense(48, 24), L::relu(),
                   L::dense(24, num_classes)}}});
  return zoo;
}

ZooManifest build_default_zoo(const std::string& dir, const ZooBuildOptions& options, bool verbose) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto data = make_synthetic_dataset(options.num_classes, options.per_class, options.side, options.seed, options.data);
  save_dataset(data, (fs::path(dir) / "dataset.bds").string());
  const auto train_set = data.train_split();
  const auto test_set = data.test_split();

  ZooManifest manifest;
  manifest.directory = dir;
  std::uint64_t model_seed = options.seed;
  for (const auto& [id, arch] : default_architectures(options.side, options.num_classes)) {
    TrainConfig cfg = options.train;
    cfg.seed = ++model_seed;
    auto model = train(build_model(arch, model_seed), train_set, cfg);
    const double acc = accuracy(model, test_set);
    const std::string file = id + ".bem";
    save_model(model, id, (fs::path(dir) / file).string());
    manifest.entries.push_back({id, arch, file, acc});
    if (verbose) std::cerr << "trained " << id << ": test accuracy " << acc << "\n";
  }
  manifest.save((fs::path(dir) / "manifest.json").string());
  return manifest;
}

}  // namespace bases
