#include "bases/network.hpp"

namespace bases {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense:
      return "dense";
    case LayerKind::conv2d:
      return "conv2d";
    case LayerKind::relu:
      return "relu";
    case LayerKind::flatten:
      return "flatten";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "dense") return LayerKind::dense;
  if (name == "conv2d") return LayerKind::conv2d;
  if (name == "relu") return LayerKind::relu;
  if (name == "flatten") return LayerKind::flatten;
  throw SpecError("unknown layer kind '" + name + "'");
}

std::vector<Shape> infer_shapes(const Architecture& arch) {
  if (arch.input_shape.empty()) throw SpecError("empty input shape");
  for (int d : arch.input_shape) {
    if (d <= 0) throw SpecError("non-positive input dimension in " + shape_string(arch.input_shape));
  }
  if (arch.layers.empty()) throw SpecError("architecture has no layers");

  std::vector<Shape> shapes{arch.input_shape};
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& s = arch.layers[l];
    const Shape& in = shapes.back();
    const std::string where = "layer " + std::to_string(l) + " (" + to_string(s.kind) + ")";
    switch (s.kind) {
      case LayerKind::dense:
        if (in.size() != 1) throw SpecError(where + " expects a flat input, got " + shape_string(in));
        if (s.in_features != in[0] || s.out_features <= 0) {
          throw SpecError(where + " declares " + std::to_string(s.in_features) + " -> " +
                          std::to_string(s.out_features) + " but receives " + shape_string(in));
        }
        shapes.push_back({s.out_features});
        break;
      case LayerKind::conv2d: {
        if (in.size() != 3) throw SpecError(where + " expects [c,h,w], got " + shape_string(in));
        if (s.in_channels != in[0] || s.out_channels <= 0 || s.kernel <= 0 || s.stride <= 0) {
          throw SpecError(where + " channel/kernel configuration does not match " + shape_string(in));
        }
        if (s.kernel > in[1] || s.kernel > in[2]) throw SpecError(where + " kernel larger than input");
        shapes.push_back({s.out_channels, (in[1] - s.kernel) / s.stride + 1,
                          (in[2] - s.kernel) / s.stride + 1});
        break;
      }
      case LayerKind::relu:
        shapes.push_back(in);
        break;
      case LayerKind::flatten:
        shapes.push_back({static_cast<int>(shape_size(in))});
        break;
    }
  }
  const Shape& out = shapes.back();
  if (out.size() != 1) throw SpecError("final layer does not emit a logit vector");
  if (out[0] < 2) throw SpecError("classifier needs at least 2 classes");
  return shapes;
}

}  // namespace bases
