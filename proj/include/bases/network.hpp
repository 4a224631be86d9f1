#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "bases/errors.hpp"
#include "bases/tensor.hpp"

namespace bases {

enum class LayerKind { dense, conv2d, relu, flatten };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  // dense
  int in_features = 0;
  int out_features = 0;
  // conv2d, valid padding
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;

  static LayerSpec dense(int in, int out) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.in_features = in;
    s.out_features = out;
    return s;
  }
  static LayerSpec conv2d(int in_ch, int out_ch, int kernel, int stride = 1) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = kernel;
    s.stride = stride;
    return s;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec flatten() {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    return s;
  }

  bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Input shape plus the ordered layer list. Inputs are [channels, height, width].
struct Architecture {
  Shape input_shape;
  std::vector<LayerSpec> layers;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Output shape after each layer; element 0 is the input shape.
/// Throws SpecError if the layers do not compose into a logit vector.
std::vector<Shape> infer_shapes(const Architecture& arch);

/// Weight and bias of one parametrised layer. Dense weights are [out, in];
/// conv weights are [out_channels, in_channels * kernel * kernel], i.e. the
/// row-major flattening of [out, in, k, k].
template <typename Scalar>
struct LayerParams {
  RowMatrix<Scalar> weight;
  Vector<Scalar> bias;

  template <typename Other>
  LayerParams<Other> cast() const {
    return {weight.template cast<Other>(), bias.template cast<Other>()};
  }
};

template <typename Scalar>
class Network {
 public:
  Network() = default;

  /// `params` holds one entry per layer; entries for relu/flatten are empty.
  Network(Architecture arch, std::vector<LayerParams<Scalar>> params)
      : arch_(std::move(arch)), shapes_(infer_shapes(arch_)), params_(std::move(params)) {
    if (params_.size() != arch_.layers.size()) {
      throw SpecError("parameter list has " + std::to_string(params_.size()) +
                      " entries for " + std::to_string(arch_.layers.size()) + " layers");
    }
    for (std::size_t l = 0; l < arch_.layers.size(); ++l) {
      const auto [rows, cols] = weight_shape(arch_.layers[l]);
      const auto& p = params_[l];
      if (p.weight.rows() != rows || p.weight.cols() != cols || p.bias.size() != rows) {
        throw SpecError("parameter shape mismatch at layer " + std::to_string(l));
      }
    }
  }

  const Architecture& architecture() const { return arch_; }
  const Shape& input_shape() const { return arch_.input_shape; }
  const std::vector<Shape>& shapes() const { return shapes_; }
  int num_classes() const { return shapes_.back()[0]; }

  const std::vector<LayerParams<Scalar>>& params() const { return params_; }
  std::vector<LayerParams<Scalar>>& params() { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.weight.size() + p.bias.size();
    return n;
  }

  template <typename Other>
  Network<Other> cast() const {
    std::vector<LayerParams<Other>> ps;
    ps.reserve(params_.size());
    for (const auto& p : params_) ps.push_back(p.template cast<Other>());
    return Network<Other>(arch_, std::move(ps));
  }

  /// (rows, cols) of the weight matrix for a layer; (0, 0) for parameter-free layers.
  static std::pair<Eigen::Index, Eigen::Index> weight_shape(const LayerSpec& s) {
    switch (s.kind) {
      case LayerKind::dense:
        return {s.out_features, s.in_features};
      case LayerKind::conv2d:
        return {s.out_channels, static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel};
      default:
        return {0, 0};
    }
  }

 private:
  Architecture arch_;
  std::vector<Shape> shapes_;
  std::vector<LayerParams<Scalar>> params_;
};

namespace detail {

template <typename Scalar>
RowMatrix<Scalar> im2col(const Vector<Scalar>& in, const Shape& in_shape, const LayerSpec& s,
                         const Shape& out_shape) {
  const int channels = in_shape[0], height = in_shape[1], width = in_shape[2];
  const int k = s.kernel, stride = s.stride;
  const int out_h = out_shape[1], out_w = out_shape[2];
  RowMatrix<Scalar> cols(channels * k * k, out_h * out_w);
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const int row = (c * k + ki) * k + kj;
        for (int oh = 0; oh < out_h; ++oh) {
          const Scalar* src = in.data() + (c * height + oh * stride + ki) * width + kj;
          for (int ow = 0; ow < out_w; ++ow) cols(row, oh * out_w + ow) = src[ow * stride];
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
Vector<Scalar> col2im(const RowMatrix<Scalar>& cols, const Shape& in_shape, const LayerSpec& s,
                      const Shape& out_shape) {
  const int channels = in_shape[0], height = in_shape[1], width = in_shape[2];
  const int k = s.kernel, stride = s.stride;
  const int out_h = out_shape[1], out_w = out_shape[2];
  Vector<Scalar> out = Vector<Scalar>::Zero(static_cast<Eigen::Index>(channels) * height * width);
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const int row = (c * k + ki) * k + kj;
        for (int oh = 0; oh < out_h; ++oh) {
          Scalar* dst = out.data() + (c * height + oh * stride + ki) * width + kj;
          for (int ow = 0; ow < out_w; ++ow) dst[ow * stride] += cols(row, oh * out_w + ow);
        }
      }
    }
  }
  return out;
}

/// Activations at every layer boundary: trace[0] is the input, trace.back() the logits.
template <typename Scalar>
using ForwardTrace = std::vector<Vector<Scalar>>;

template <typename Scalar>
ForwardTrace<Scalar> forward_trace(const Network<Scalar>& net, const Vector<Scalar>& x) {
  const auto& layers = net.architecture().layers;
  const auto& shapes = net.shapes();
  ForwardTrace<Scalar> trace;
  trace.reserve(layers.size() + 1);
  trace.push_back(x);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& s = layers[l];
    const Vector<Scalar>& in = trace.back();
    const auto& p = net.params()[l];
    switch (s.kind) {
      case LayerKind::dense:
        trace.push_back(p.weight * in + p.bias);
        break;
      case LayerKind::conv2d: {
        const RowMatrix<Scalar> cols = im2col(in, shapes[l], s, shapes[l + 1]);
        RowMatrix<Scalar> out = p.weight * cols;
        out.colwise() += p.bias;
        trace.push_back(Eigen::Map<const Vector<Scalar>>(out.data(), out.size()));
        break;
      }
      case LayerKind::relu:
        trace.push_back(in.cwiseMax(Scalar(0)));
        break;
      case LayerKind::flatten:
        trace.push_back(in);
        break;
    }
  }
  return trace;
}

/// Reverse-mode sweep. Returns the gradient at the input; when `grads` is
/// non-null, parameter gradients are accumulated into it (one entry per layer).
template <typename Scalar>
Vector<Scalar> backward(const Network<Scalar>& net, const ForwardTrace<Scalar>& trace,
                        const Vector<Scalar>& upstream,
                        std::vector<LayerParams<Scalar>>* grads = nullptr) {
  const auto& layers = net.architecture().layers;
  const auto& shapes = net.shapes();
  Vector<Scalar> g = upstream;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const LayerSpec& s = layers[l];
    const Vector<Scalar>& in = trace[l];
    const auto& p = net.params()[l];
    switch (s.kind) {
      case LayerKind::dense:
        if (grads) {
          (*grads)[l].weight.noalias() += g * in.transpose();
          (*grads)[l].bias += g;
        }
        g = p.weight.transpose() * g;
        break;
      case LayerKind::conv2d: {
        const Shape& out_shape = shapes[l + 1];
        Eigen::Map<const RowMatrix<Scalar>> g_out(g.data(), out_shape[0],
                                                  static_cast<Eigen::Index>(out_shape[1]) * out_shape[2]);
        if (grads) {
          const RowMatrix<Scalar> cols = im2col(in, shapes[l], s, out_shape);
          (*grads)[l].weight.noalias() += g_out * cols.transpose();
          (*grads)[l].bias += g_out.rowwise().sum();
        }
        const RowMatrix<Scalar> g_cols = p.weight.transpose() * g_out;
        g = col2im(g_cols, shapes[l], s, out_shape);
        break;
      }
      case LayerKind::relu:
        // Subgradient at exactly zero is taken as zero.
        g = (in.array() > Scalar(0)).select(g, Scalar(0));
        break;
      case LayerKind::flatten:
        break;
    }
  }
  return g;
}

template <typename Scalar>
void check_input(const Network<Scalar>& net, const Tensor<Scalar>& x) {
  if (x.shape != net.input_shape()) {
    throw ShapeError("input shape " + shape_string(x.shape) + " does not match model input " +
                     shape_string(net.input_shape()));
  }
}

}  // namespace detail

/// Logit vector of length C.
template <typename Scalar>
Tensor<Scalar> forward(const Network<Scalar>& net, const Tensor<Scalar>& x) {
  detail::check_input(net, x);
  auto trace = detail::forward_trace(net, x.data);
  return Tensor<Scalar>({net.num_classes()}, std::move(trace.back()));
}

/// Gradient w.r.t. the input of upstream . logits(x).
template <typename Scalar>
Tensor<Scalar> input_gradient(const Network<Scalar>& net, const Tensor<Scalar>& x,
                              const Tensor<Scalar>& upstream) {
  detail::check_input(net, x);
  if (upstream.size() != net.num_classes()) {
    throw ShapeError("upstream gradient has length " + std::to_string(upstream.size()) +
                     ", expected " + std::to_string(net.num_classes()));
  }
  const auto trace = detail::forward_trace(net, x.data);
  return Tensor<Scalar>(x.shape, detail::backward(net, trace, upstream.data));
}

/// Max-subtracted softmax.
template <typename Derived>
auto softmax(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  const Vector<Scalar> e = (z.array() - z.maxCoeff()).exp();
  return Vector<Scalar>(e / e.sum());
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& z) {
  return Tensor<Scalar>(z.shape, softmax(z.data));
}

/// log(sum(exp(z))) with the maximum factored out.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& z) {
  const auto m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

/// Central finite differences of a scalar function, one coordinate at a time.
template <typename Scalar, typename Fn>
Tensor<Scalar> fd_gradient(Fn&& fn, const Tensor<Scalar>& x, Scalar h) {
  Tensor<Scalar> grad(x.shape);
  Tensor<Scalar> probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const auto up = fn(static_cast<const Tensor<Scalar>&>(probe));
    probe[i] = x[i] - h;
    const auto down = fn(static_cast<const Tensor<Scalar>&>(probe));
    probe[i] = x[i];
    grad[i] = static_cast<Scalar>((up - down) / (Scalar(2) * h));
  }
  return grad;
}

}  // namespace bases
