#include "bases/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "bases/binary_io.hpp"
#include "bases/rng.hpp"

namespace bases {

namespace {

LabeledDataset subset_by_parity(const LabeledDataset& ds, std::size_t parity) {
  LabeledDataset out;
  out.num_classes = ds.num_classes;
  out.side = ds.side;
  for (std::size_t i = parity; i < ds.size(); i += 2) {
    out.images.push_back(ds.images[i]);
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

Vector<double> box_blur(const Vector<double>& img, int side) {
  Vector<double> out(img.size());
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      double acc = 0.0;
      int n = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= side || cc < 0 || cc >= side) continue;
          acc += img[rr * side + cc];
          ++n;
        }
      }
      out[r * side + c] = acc / n;
    }
  }
  return out;
}

}  // namespace

LabeledDataset LabeledDataset::train_split() const { return subset_by_parity(*this, 0); }
LabeledDataset LabeledDataset::test_split() const { return subset_by_parity(*this, 1); }

void LabeledDataset::validate() const {
  if (images.size() != labels.size()) throw Error("dataset image/label counts differ");
  if (num_classes < 2) throw Error("dataset needs at least 2 classes");
  std::vector<int> seen(num_classes, 0);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw Error("label " + std::to_string(labels[i]) + " out of range at sample " + std::to_string(i));
    }
    if (images[i].shape != Shape{1, side, side}) throw ShapeError("sample " + std::to_string(i) + " has wrong shape");
    ++seen[labels[i]];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (seen[c] == 0) throw Error("class " + std::to_string(c) + " has no samples");
  }
}

LabeledDataset make_synthetic_dataset(int num_classes, int per_class, int side, std::uint64_t seed,
                                      const SyntheticOptions& options) {
  if (num_classes < 2) throw Error("need at least 2 classes");
  if (side < 4) throw Error("image side must be at least 4");
  if (per_class < 1) throw Error("need at least one sample per class");
  if (!(options.contrast > 0.0 && options.contrast <= 1.0)) throw Error("template contrast must be in (0, 1]");

  const int pixels = side * side;
  SplitMix64 template_rng(seed, "template");
  std::vector<Vector<double>> templates;
  for (int c = 0; c < num_classes; ++c) {
    Vector<double> t = Vector<double>::Zero(pixels);
    for (int b = 0; b < options.blobs_per_class; ++b) {
      const double cy = template_rng.uniform(0.0, side - 1.0);
      const double cx = template_rng.uniform(0.0, side - 1.0);
      const double width = template_rng.uniform(0.12, 0.3) * side;
      const double amp = template_rng.uniform() < 0.5 ? -1.0 : 1.0;
      for (int r = 0; r < side; ++r) {
        for (int col = 0; col < side; ++col) {
          const double d2 = (r - cy) * (r - cy) + (col - cx) * (col - cx);
          t[r * side + col] += amp * std::exp(-d2 / (2.0 * width * width));
        }
      }
    }
    // Rescale into 0.5 +/- contrast/2 so noise has room on both sides.
    const double lo = t.minCoeff(), hi = t.maxCoeff();
    t = ((t.array() - lo) / std::max(hi - lo, 1e-12) * options.contrast + 0.5 - options.contrast / 2).matrix();
    templates.push_back(std::move(t));
  }

  SplitMix64 sample_rng(seed, "sample");
  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.side = side;
  for (int c = 0; c < num_classes; ++c) {
    for (int s = 0; s < per_class; ++s) {
      Vector<double> noise(pixels);
      for (int i = 0; i < pixels; ++i) noise[i] = options.noise * sample_rng.normal();
      const double shift = sample_rng.uniform(-options.brightness, options.brightness);
      const Vector<double> img = (templates[c] + box_blur(noise, side)).array() + shift;
      ds.images.emplace_back(Shape{1, side, side}, img.cwiseMax(0.0).cwiseMin(1.0).cast<float>());
      ds.labels.push_back(c);
    }
  }
  return ds;
}

std::string encode_dataset(const LabeledDataset& ds) {
  io::Writer w;
  w.bytes("BDS1");
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  w.u32(static_cast<std::uint32_t>(ds.side));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.u16(static_cast<std::uint16_t>(ds.labels[i]));
    w.f32_range(ds.images[i].data.begin(), ds.images[i].data.end());
  }
  return w.buffer();
}

LabeledDataset decode_dataset(std::string_view bytes) {
  io::Reader r(bytes);
  if (r.bytes(4, "magic") != "BDS1") throw FormatError("bad dataset magic", 0);
  const auto count = r.u32("count");
  const auto classes = r.u32("class count");
  const std::size_t side_offset = r.offset();
  const auto side = r.u32("side");
  if (side == 0 || side > 4096) throw FormatError("implausible image side", side_offset);
  const std::size_t record = 2 + 4 * static_cast<std::size_t>(side) * side;
  if (r.remaining() != record * count) {
    throw FormatError("payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(record * count),
                      r.offset());
  }
  LabeledDataset ds;
  ds.num_classes = static_cast<int>(classes);
  ds.side = static_cast<int>(side);
  const int pixels = static_cast<int>(side * side);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const int label = r.u16("label");
    if (label >= ds.num_classes) throw FormatError("label out of range", at);
    Vector<float> px(pixels);
    for (int p = 0; p < pixels; ++p) px[p] = r.f32("pixel");
    ds.images.emplace_back(Shape{1, ds.side, ds.side}, std::move(px));
    ds.labels.push_back(label);
  }
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::string& path) {
  io::write_file(path, encode_dataset(ds));
}

LabeledDataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

}  // namespace bases
