#pragma once

#include "wcell/graph.hpp"
#include "wcell/ops.hpp"

#include <cmath>
#include <random>
#include <string>

namespace wcell {

enum class UpsampleMode { kTransposed, kNearest };

/// Fan-in scaled normal initialization for kernels followed by ReLU.
template <typename Scalar, typename Rng>
Tensor<Scalar> he_normal(Shape shape, Index fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  return Tensor<Scalar>::normal(std::move(shape), rng, static_cast<Scalar>(stddev));
}

/// Glorot uniform initialization for kernels followed by Tanh or no activation.
template <typename Scalar, typename Rng>
Tensor<Scalar> glorot_uniform(Shape shape, Index fan_in, Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor<Scalar>::uniform(std::move(shape), rng, static_cast<Scalar>(-limit), static_cast<Scalar>(limit));
}

enum class Init { kHe, kGlorot };

/// Weight and bias of a square-kernel convolution. `transposed` kernels are laid out
/// [c_in, c_out, K, K], ordinary ones [c_out, c_in, K, K].
template <typename Scalar>
struct ConvLayer {
  Parameter<Scalar>* weight = nullptr;
  Parameter<Scalar>* bias = nullptr;
  bool transposed = false;

  template <typename Rng>
  static ConvLayer make(ParamStore<Scalar>& store, const std::string& name, Index c_in, Index c_out, Index kernel,
                        bool transposed, Init init, Rng& rng) {
    const Index taps = kernel * kernel;
    Shape shape = transposed ? Shape{c_in, c_out, kernel, kernel} : Shape{c_out, c_in, kernel, kernel};
    Tensor<Scalar> w = init == Init::kHe ? he_normal<Scalar>(shape, c_in * taps, rng)
                                         : glorot_uniform<Scalar>(shape, c_in * taps, c_out * taps, rng);
    ConvLayer layer;
    layer.weight = &store.add(name + ".weight", std::move(w), true, true);
    layer.bias = &store.add(name + ".bias", Tensor<Scalar>({c_out}), true, false);
    layer.transposed = transposed;
    return layer;
  }

  Var<Scalar> operator()(Graph<Scalar>& g, Var<Scalar> x) const {
    return transposed ? conv_transpose2d(x, g.param(*weight), g.param(*bias))
                      : conv2d(x, g.param(*weight), g.param(*bias));
  }
};

/// Affine batch normalization with running statistics stored as non-trainable parameters.
template <typename Scalar>
struct BatchNormLayer {
  Parameter<Scalar>* gamma = nullptr;
  Parameter<Scalar>* beta = nullptr;
  Parameter<Scalar>* running_mean = nullptr;
  Parameter<Scalar>* running_var = nullptr;
  double momentum = 0.99;
  double eps = 1e-5;

  static BatchNormLayer make(ParamStore<Scalar>& store, const std::string& name, Index channels) {
    BatchNormLayer bn;
    bn.gamma = &store.add(name + ".gamma", Tensor<Scalar>({channels}, Scalar(1)), true, false);
    bn.beta = &store.add(name + ".beta", Tensor<Scalar>({channels}), true, false);
    bn.running_mean = &store.add(name + ".running_mean", Tensor<Scalar>({channels}), false, false);
    bn.running_var = &store.add(name + ".running_var", Tensor<Scalar>({channels}, Scalar(1)), false, false);
    return bn;
  }

  Var<Scalar> operator()(Graph<Scalar>& g, Var<Scalar> x, Mode mode) const {
    BatchNormState<Scalar> state{&running_mean->value, &running_var->value, momentum, eps};
    return batch_norm(x, g.param(*gamma), g.param(*beta), state, mode);
  }
};

/// Encoder block: (3x3 conv -> BN -> ReLU) twice. Preserves h and w.
template <typename Scalar>
class ConvBlock {
 public:
  ConvBlock() = default;

  template <typename Rng>
  ConvBlock(ParamStore<Scalar>& store, const std::string& name, Index c_in, Index c_out, Rng& rng)
      : c_in_(c_in), c_out_(c_out) {
    conv1_ = ConvLayer<Scalar>::make(store, name + ".conv1", c_in, c_out, 3, false, Init::kHe, rng);
    bn1_ = BatchNormLayer<Scalar>::make(store, name + ".bn1", c_out);
    conv2_ = ConvLayer<Scalar>::make(store, name + ".conv2", c_out, c_out, 3, false, Init::kHe, rng);
    bn2_ = BatchNormLayer<Scalar>::make(store, name + ".bn2", c_out);
  }

  Var<Scalar> forward(Graph<Scalar>& g, Var<Scalar> x, Mode mode) const {
    if (x.shape().size() != 4 || x.dim(1) != c_in_) {
      throw ShapeError("ConvBlock expects " + std::to_string(c_in_) + " input channels, got " + to_string(x.shape()));
    }
    Var<Scalar> y = relu(bn1_(g, conv1_(g, x), mode));
    return relu(bn2_(g, conv2_(g, y), mode));
  }

  Index in_channels() const { return c_in_; }
  Index out_channels() const { return c_out_; }

  /// Trainable scalar count: two 3x3 convs with bias plus gamma/beta of both BN layers.
  static Index parameter_count(Index c_in, Index c_out) {
    return 9 * c_in * c_out + c_out + 9 * c_out * c_out + c_out + 4 * c_out;
  }

 private:
  Index c_in_ = 0;
  Index c_out_ = 0;
  ConvLayer<Scalar> conv1_, conv2_;
  BatchNormLayer<Scalar> bn1_, bn2_;
};

/// Decoder block: 2x upsampling (transposed conv, or nearest + 3x3 conv) followed by
/// a 3x3 conv and Tanh. Doubles h and w.
template <typename Scalar>
class UpConvBlock {
 public:
  UpConvBlock() = default;

  template <typename Rng>
  UpConvBlock(ParamStore<Scalar>& store, const std::string& name, Index c_in, Index c_out, UpsampleMode mode,
              Rng& rng)
      : c_in_(c_in), c_out_(c_out), mode_(mode) {
    if (mode == UpsampleMode::kTransposed) {
      up_ = ConvLayer<Scalar>::make(store, name + ".up", c_in, c_out, 2, true, Init::kGlorot, rng);
    } else {
      up_ = ConvLayer<Scalar>::make(store, name + ".up", c_in, c_out, 3, false, Init::kGlorot, rng);
    }
    conv_ = ConvLayer<Scalar>::make(store, name + ".conv", c_out, c_out, 3, false, Init::kGlorot, rng);
  }

  Var<Scalar> forward(Graph<Scalar>& g, Var<Scalar> x) const {
    if (x.shape().size() != 4 || x.dim(1) != c_in_) {
      throw ShapeError("UpConvBlock expects " + std::to_string(c_in_) + " input channels, got " +
                       to_string(x.shape()));
    }
    Var<Scalar> up = mode_ == UpsampleMode::kTransposed ? up_(g, x) : up_(g, upsample_nearest2x(x));
    return tanh(conv_(g, up));
  }

  Index in_channels() const { return c_in_; }
  Index out_channels() const { return c_out_; }

  static Index parameter_count(Index c_in, Index c_out, UpsampleMode mode) {
    const Index up = mode == UpsampleMode::kTransposed ? 4 * c_in * c_out : 9 * c_in * c_out;
    return up + c_out + 9 * c_out * c_out + c_out;
  }

 private:
  Index c_in_ = 0;
  Index c_out_ = 0;
  UpsampleMode mode_ = UpsampleMode::kTransposed;
  ConvLayer<Scalar> up_, conv_;
};

}  // namespace wcell
