#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bases/tensor.hpp"

namespace bases {

/// Single-channel images in [0,1] with class labels in [0, num_classes).
struct LabeledDataset {
  std::vector<ImageTensor> images;
  std::vector<int> labels;
  int num_classes = 0;
  int side = 0;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }

  /// Even indices.
  LabeledDataset train_split() const;
  /// Odd indices.
  LabeledDataset test_split() const;

  /// Throws Error if lengths differ, a label is out of range, or a class is absent.
  void validate() const;
};

struct SyntheticOptions {
  int blobs_per_class = 4;
  /// Template intensity range, centred on 0.5.
  double contrast = 0.2;
  /// Std-dev of the per-pixel noise before smoothing.
  double noise = 0.12;
  /// Per-sample brightness jitter (uniform half-width).
  double brightness = 0.08;
};

/// Class templates are sums of Gaussian blobs drawn from the "template" stream;
/// each sample adds box-smoothed Gaussian noise and a brightness offset drawn
/// from the "sample" stream, then clips to [0,1]. Samples are stored class-major
/// so that the parity split keeps every class in both halves.
LabeledDataset make_synthetic_dataset(int num_classes, int per_class, int side, std::uint64_t seed,
                                      const SyntheticOptions& options = {});

/// "BDS1" file: magic, u32 count, u32 C, u32 side, then per sample a u16 label
/// followed by side*side little-endian f32 pixels.
std::string encode_dataset(const LabeledDataset& ds);
LabeledDataset decode_dataset(std::string_view bytes);
void save_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_dataset(const std::string& path);

}  // namespace bases
