#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bases/rng.hpp"
#include "bases/zoo.hpp"

namespace bases::testing {

inline ImageTensor random_image(const Shape& shape, SplitMix64& rng, double lo = 0.0, double hi = 1.0) {
  ImageTensor x(shape);
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform(lo, hi));
  return x;
}

inline Architecture tiny_mlp(int side, int classes, int hidden = 8) {
  return {{1, side, side},
          {LayerSpec::flatten(), LayerSpec::dense(side * side, hidden), LayerSpec::relu(),
           LayerSpec::dense(hidden, classes)}};
}

inline Architecture tiny_cnn(int side, int classes) {
  const int o = side - 2;
  return {{1, side, side},
          {LayerSpec::conv2d(1, 3, 3), LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(3 * o * o, classes)}};
}

/// A mix of untrained MLPs and CNNs; logits are far from degenerate for random inputs.
inline std::vector<Model> random_models(int count, int side, int classes, std::uint64_t seed) {
  std::vector<Model> models;
  for (int i = 0; i < count; ++i) {
    const auto arch = i % 2 == 0 ? tiny_mlp(side, classes, 6 + i) : tiny_cnn(side, classes);
    models.push_back(build_model(arch, seed * 131 + static_cast<std::uint64_t>(i)));
  }
  return models;
}

/// Fresh scratch directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("bases-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

/// The default desk zoo, built once per test process.
inline const std::string& fixture_zoo_dir() {
  static const std::string dir = [] {
    const auto d = scratch_dir("fixture-zoo");
    build_default_zoo(d, ZooBuildOptions{});
    return d;
  }();
  return dir;
}

}  // namespace bases::testing
