#pragma once

#include "wcell/layers.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace wcell {

/// Architecture hyperparameters. Fully determines the parameter set.
struct ModelConfig {
  Index k = 16;            ///< channels of the first encoder block; doubles per level
  Index frames = 3;        ///< number of intermediate frames produced (IF)
  Index blocks = 4;        ///< encoder/decoder depth (B)
  Index input_h = 64;
  Index input_w = 64;
  UpsampleMode upsample = UpsampleMode::kTransposed;
  Index head_kernel = 3;   ///< 3 or 1

  Index spatial_divisor() const { return Index{1} << blocks; }

  void validate() const {
    if (k < 1) throw std::invalid_argument("model k must be >= 1");
    if (frames < 1 || frames > 7) throw std::invalid_argument("model IF must be in [1, 7]");
    if (blocks != 4) throw std::invalid_argument("model supports B = 4 blocks only");
    if (head_kernel != 1 && head_kernel != 3) throw std::invalid_argument("head kernel must be 1 or 3");
    if (input_h <= 0 || input_w <= 0 || input_h % spatial_divisor() != 0 || input_w % spatial_divisor() != 0) {
      throw std::invalid_argument("input dims must be positive multiples of " + std::to_string(spatial_divisor()));
    }
  }

  /// Output channels of encoder block b (1-based).
  Index encoder_width(Index b) const { return k << (b - 1); }
  /// Output channels of decoder block b (1-based): 8k, 8k, 4k, 2k for B = 4.
  Index decoder_width(Index b) const { return b == 1 ? k << (blocks - 1) : k << (blocks - b + 1); }
  /// Input channels of decoder block b: the bottleneck pair, or [E1 skip, state, reversed E2 skip].
  Index decoder_input_width(Index b) const {
    return b == 1 ? 2 * encoder_width(blocks) : 2 * encoder_width(blocks - b + 1) + decoder_width(b - 1);
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Closed-form trainable parameter count, independent of any constructed network.
inline Index count_parameters(const ModelConfig& cfg) {
  Index total = 0;
  for (Index b = 1; b <= cfg.blocks; ++b) {
    const Index c_in = b == 1 ? 1 : cfg.encoder_width(b - 1);
    total += 2 * ConvBlock<float>::parameter_count(c_in, cfg.encoder_width(b));
  }
  for (Index b = 1; b <= cfg.blocks; ++b) {
    total += UpConvBlock<float>::parameter_count(cfg.decoder_input_width(b), cfg.decoder_width(b), cfg.upsample);
  }
  const Index head_taps = cfg.head_kernel * cfg.head_kernel;
  total += head_taps * cfg.decoder_width(cfg.blocks) * cfg.frames + cfg.frames;
  return total;
}

/// Intermediate tensors of one forward pass.
template <typename Scalar>
struct ForwardTrace {
  std::vector<Var<Scalar>> lookup_first;   ///< encoder-1 output after block b (index b-1), post-pooling
  std::vector<Var<Scalar>> lookup_last;    ///< encoder-2 output after block b
  std::vector<Var<Scalar>> decoder_inputs; ///< concatenated input of decoder block b
};

/// Dual-encoder, single-decoder interpolation network. Encoder 1 sees the first frame,
/// encoder 2 the last frame; encoder-2 features are channel-reversed before every
/// concatenation into the decoder.
template <typename Scalar>
class WCellNet {
 public:
  WCellNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const Index B = config_.blocks;
    for (int e = 0; e < 2; ++e) {
      auto& enc = e == 0 ? encoder_first_ : encoder_last_;
      const std::string prefix = e == 0 ? "enc1" : "enc2";
      for (Index b = 1; b <= B; ++b) {
        const Index c_in = b == 1 ? 1 : config_.encoder_width(b - 1);
        enc.emplace_back(store_, prefix + ".block" + std::to_string(b), c_in, config_.encoder_width(b), rng);
      }
    }
    for (Index b = 1; b <= B; ++b) {
      decoder_.emplace_back(store_, "dec.block" + std::to_string(b), config_.decoder_input_width(b),
                            config_.decoder_width(b), config_.upsample, rng);
    }
    head_ = ConvLayer<Scalar>::make(store_, "head", config_.decoder_width(B), config_.frames, config_.head_kernel,
                                    false, Init::kGlorot, rng);
  }

  WCellNet(WCellNet&&) noexcept = default;
  WCellNet& operator=(WCellNet&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  ParamStore<Scalar>& params() { return store_; }
  const ParamStore<Scalar>& params() const { return store_; }

  Index count_parameters() const { return store_.trainable_count(); }

  /// x_first, x_last: [m, 1, h, w] on the [-1, 1] scale. Returns [m, IF, h, w] in (-1, 1).
  Var<Scalar> forward(Graph<Scalar>& g, Var<Scalar> x_first, Var<Scalar> x_last, Mode mode,
                      ForwardTrace<Scalar>* trace = nullptr) const {
    const Shape& fs = x_first.shape();
    if (fs != x_last.shape()) {
      throw ShapeError("first/last frame shapes differ: " + to_string(fs) + " vs " + to_string(x_last.shape()));
    }
    if (fs.size() != 4 || fs[1] != 1) throw ShapeError("frames must be [m, 1, h, w], got " + to_string(fs));
    const Index div = config_.spatial_divisor();
    if (fs[2] % div != 0 || fs[3] % div != 0) {
      throw ShapeError("frame dims must be multiples of " + std::to_string(div) + ", got " + to_string(fs));
    }

    const auto B = static_cast<std::size_t>(config_.blocks);
    std::vector<Var<Scalar>> first(B), last(B);
    Var<Scalar> a = x_first, b = x_last;
    for (std::size_t i = 0; i < B; ++i) {
      a = maxpool2d(encoder_first_[i].forward(g, a, mode));
      b = maxpool2d(encoder_last_[i].forward(g, b, mode));
      first[i] = a;
      last[i] = b;
    }

    std::vector<Var<Scalar>> inputs;
    inputs.reserve(B);
    inputs.push_back(concat_channels<Scalar>({first[B - 1], reverse_channels(last[B - 1])}));
    Var<Scalar> state = decoder_[0].forward(g, inputs.back());
    for (std::size_t i = 1; i < B; ++i) {
      const std::size_t skip = B - 1 - i;
      inputs.push_back(concat_channels<Scalar>({first[skip], state, reverse_channels(last[skip])}));
      state = decoder_[i].forward(g, inputs.back());
    }
    Var<Scalar> out = tanh(head_(g, state));

    if (trace != nullptr) {
      trace->lookup_first = std::move(first);
      trace->lookup_last = std::move(last);
      trace->decoder_inputs = std::move(inputs);
    }
    return out;
  }

  /// Copies every parameter and buffer value from `other` by name.
  template <typename From>
  void copy_values_from(const WCellNet<From>& other) {
    if (!(other.config() == config_)) throw ContractError("copy_values_from: config mismatch");
    store_.for_each([&](Parameter<Scalar>& p) { p.value = other.params().at(p.name).value.template cast<Scalar>(); });
  }

  template <typename To>
  WCellNet<To> cast() const {
    WCellNet<To> out(config_, 0);
    out.copy_values_from(*this);
    return out;
  }

 private:
  ModelConfig config_;
  ParamStore<Scalar> store_;
  std::vector<ConvBlock<Scalar>> encoder_first_;
  std::vector<ConvBlock<Scalar>> encoder_last_;
  std::vector<UpConvBlock<Scalar>> decoder_;
  ConvLayer<Scalar> head_;
};

/// Deterministic parameter initialization for `config`.
template <typename Scalar = float>
WCellNet<Scalar> init_params(const ModelConfig& config, std::uint64_t seed) {
  return WCellNet<Scalar>(config, seed);
}

/// Maps 8-bit intensities to the network's [-1, 1] scale.
inline double to_network_scale(double pixel) { return pixel / 127.5 - 1.0; }
/// Maps network outputs back to the [0, 255] pixel scale.
inline double to_pixel_scale(double value) { return (value + 1.0) * 127.5; }

}  // namespace wcell
