#pragma once

#include "wcell/graph.hpp"
#include "wcell/layers.hpp"
#include "wcell/ops.hpp"
#include "wcell/records.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace wcell {

enum class Reconstruction { kL1, kL2, kDssim };
enum class SsimConvention { kPaper, kStandard };
enum class ExtractorKind { kNone, kRandomConv, kVgg16 };

struct SsimParams {
  Index window = 11;
  double sigma = 1.5;
  double c1 = 4e-4;
  double c2 = 3.6e-3;
};

/// Normalized separable Gaussian window (weights sum to 1).
template <typename Scalar>
Tensor<Scalar> gaussian_window(Index size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double center = static_cast<double>(size - 1) / 2.0;
  for (Index i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - center;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  double total = 0.0;
  for (double a : g) {
    for (double b : g) total += a * b;
  }
  Tensor<Scalar> w({size, size});
  for (Index i = 0; i < size; ++i) {
    for (Index j = 0; j < size; ++j) {
      w[i * size + j] = static_cast<Scalar>(g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)] / total);
    }
  }
  return w;
}

struct LossConfig {
  Reconstruction reconstruction = Reconstruction::kL2;
  double lambda_perceptual = 0.0;     ///< λ1
  double lambda_decay = 0.0;          ///< λ2
  ExtractorKind extractor = ExtractorKind::kNone;
  std::uint64_t extractor_seed = 7;
  Index extractor_width = 64;         ///< first-stage channels of the feature stack (VGG16: 64)
  std::string vgg_weights;
  SsimConvention ssim_convention = SsimConvention::kPaper;
  bool decay_all = false;             ///< include biases and BN parameters in weight decay

  void validate() const {
    if (lambda_perceptual < 0 || lambda_decay < 0) throw std::invalid_argument("loss weights must be non-negative");
    if (lambda_perceptual > 0 && extractor == ExtractorKind::kNone) {
      throw std::invalid_argument("perceptual weight > 0 requires a feature extractor");
    }
    if (extractor == ExtractorKind::kVgg16 && vgg_weights.empty()) {
      throw std::invalid_argument("vgg16 extractor requires a weights file");
    }
    if (extractor_width < 1) throw std::invalid_argument("extractor width must be >= 1");
  }
};

/// Half sum of |y_true - y_pred|^x over every element, x in {1, 2}.
template <typename Scalar>
Var<Scalar> pixel_loss(Var<Scalar> y_true, Var<Scalar> y_pred, int x) {
  if (y_true.shape() != y_pred.shape()) {
    throw ShapeError("pixel_loss: " + to_string(y_true.shape()) + " vs " + to_string(y_pred.shape()));
  }
  Var<Scalar> diff = sub(y_true, y_pred);
  Var<Scalar> elem;
  if (x == 1) {
    elem = abs(diff);
  } else if (x == 2) {
    elem = square(diff);
  } else {
    throw std::invalid_argument("pixel_loss exponent must be 1 or 2");
  }
  return scale(sum(elem), Scalar(0.5));
}

/// 1 - SSIM with local statistics from a Gaussian window at valid positions. The SSIM map
/// is averaged over every (sample, frame, position); SsimConvention::kPaper halves it.
template <typename Scalar>
Var<Scalar> dssim(Var<Scalar> y_true, Var<Scalar> y_pred, const SsimParams& params = {},
                  SsimConvention convention = SsimConvention::kPaper) {
  const Shape& s = y_true.shape();
  if (s != y_pred.shape()) throw ShapeError("dssim: " + to_string(s) + " vs " + to_string(y_pred.shape()));
  detail::require_rank(s, 4, "dssim");
  if (s[2] < params.window || s[3] < params.window) {
    throw ShapeError("dssim: image " + to_string(s) + " smaller than the SSIM window");
  }
  const Tensor<Scalar> window = gaussian_window<Scalar>(params.window, params.sigma);
  const auto c1 = static_cast<Scalar>(params.c1);
  const auto c2 = static_cast<Scalar>(params.c2);

  Var<Scalar> mu_t = filter2d_valid(y_true, window);
  Var<Scalar> mu_p = filter2d_valid(y_pred, window);
  Var<Scalar> mu_tt = square(mu_t);
  Var<Scalar> mu_pp = square(mu_p);
  Var<Scalar> mu_tp = mul(mu_t, mu_p);
  Var<Scalar> var_t = sub(filter2d_valid(square(y_true), window), mu_tt);
  Var<Scalar> var_p = sub(filter2d_valid(square(y_pred), window), mu_pp);
  Var<Scalar> cov = sub(filter2d_valid(mul(y_true, y_pred), window), mu_tp);

  Var<Scalar> num = mul(add_scalar(scale(mu_tp, Scalar(2)), c1), add_scalar(scale(cov, Scalar(2)), c2));
  Var<Scalar> den = mul(add_scalar(add(mu_tt, mu_pp), c1), add_scalar(add(var_t, var_p), c2));
  Var<Scalar> ssim = mean(div(num, den));
  if (convention == SsimConvention::kPaper) ssim = scale(ssim, Scalar(0.5));
  return add_scalar(scale(ssim, Scalar(-1)), Scalar(1));
}

/// Fixed VGG16-shaped convolution stack through conv5_3 (output stride 16). Weights are
/// either seed-generated or imported from a record file; never trained.
template <typename Scalar>
class FeatureExtractor {
 public:
  static constexpr std::array<int, 5> kStageDepth = {2, 2, 3, 3, 3};

  static std::vector<std::string> layer_names() {
    std::vector<std::string> names;
    for (std::size_t s = 0; s < kStageDepth.size(); ++s) {
      for (int l = 1; l <= kStageDepth[s]; ++l) {
        names.push_back("conv" + std::to_string(s + 1) + "_" + std::to_string(l));
      }
    }
    return names;
  }

  static Index stage_width(Index base, std::size_t stage) {
    static constexpr std::array<Index, 5> mult = {1, 2, 4, 8, 8};
    return base * mult[stage];
  }

  static FeatureExtractor random(std::uint64_t seed, Index base_width = 64) {
    FeatureExtractor fx;
    fx.imagenet_input_ = false;
    std::mt19937_64 rng(seed);
    Index c_in = 3;
    for (std::size_t s = 0; s < kStageDepth.size(); ++s) {
      const Index width = stage_width(base_width, s);
      for (int l = 1; l <= kStageDepth[s]; ++l) {
        const std::string name = "conv" + std::to_string(s + 1) + "_" + std::to_string(l);
        fx.add_layer(name, he_normal<Scalar>({width, c_in, 3, 3}, c_in * 9, rng), Tensor<Scalar>({width}));
        c_in = width;
      }
    }
    return fx;
  }

  /// Builds the stack from "convS_L.weight" / "convS_L.bias" records.
  static FeatureExtractor from_records(const std::vector<NamedTensor>& records) {
    FeatureExtractor fx;
    fx.imagenet_input_ = true;
    auto find = [&](const std::string& name) -> const TensorF& {
      for (const auto& r : records) {
        if (r.name == name) return r.tensor;
      }
      throw FormatError("VGG weights file is missing " + name);
    };
    Index c_in = 3;
    for (const auto& name : layer_names()) {
      const TensorF& w = find(name + ".weight");
      const TensorF& b = find(name + ".bias");
      if (w.rank() != 4 || w.dim(1) != c_in || w.dim(2) != 3 || w.dim(3) != 3 || b.shape() != Shape{w.dim(0)}) {
        throw FormatError("VGG weights: bad shape for " + name + ": " + to_string(w.shape()));
      }
      fx.add_layer(name, w.cast<Scalar>(), b.cast<Scalar>());
      c_in = w.dim(0);
    }
    return fx;
  }

  /// images: [n, 1, h, w] on the [-1, 1] scale, h and w multiples of 16.
  Var<Scalar> features(Graph<Scalar>& g, Var<Scalar> images) const {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != 1) throw ShapeError("feature extractor expects [n, 1, h, w], got " + to_string(s));
    Var<Scalar> x = concat_channels<Scalar>({images, images, images});
    if (imagenet_input_) x = imagenet_normalize(g, x);
    std::size_t layer = 0;
    for (std::size_t st = 0; st < kStageDepth.size(); ++st) {
      for (int l = 0; l < kStageDepth[st]; ++l, ++layer) {
        const auto& [w, b] = layers_[layer];
        x = conv2d(x, g.constant(w), g.constant(b));
        const bool last = st + 1 == kStageDepth.size() && l + 1 == kStageDepth[st];
        if (!last) x = relu(x);
      }
      if (st + 1 < kStageDepth.size()) x = maxpool2d(x);
    }
    return x;
  }

  Index output_channels() const { return layers_.back().second.size(); }

  template <typename To>
  FeatureExtractor<To> cast() const {
    FeatureExtractor<To> out;
    out.imagenet_input_ = imagenet_input_;
    for (const auto& [w, b] : layers_) out.layers_.emplace_back(w.template cast<To>(), b.template cast<To>());
    return out;
  }

 private:
  void add_layer(const std::string&, Tensor<Scalar> w, Tensor<Scalar> b) { layers_.emplace_back(std::move(w), std::move(b)); }

  // [-1, 1] -> [0, 255] minus the per-channel ImageNet RGB means.
  static Var<Scalar> imagenet_normalize(Graph<Scalar>& g, Var<Scalar> x) {
    const Shape& s = x.shape();
    static constexpr std::array<double, 3> kMean = {123.68, 116.779, 103.939};
    Tensor<Scalar> offset(s);
    const Index plane = s[2] * s[3];
    for (Index n = 0; n < s[0]; ++n) {
      for (Index c = 0; c < 3; ++c) {
        std::fill_n(offset.data() + (n * 3 + c) * plane, plane, static_cast<Scalar>(127.5 - kMean[c]));
      }
    }
    return add(scale(x, Scalar(127.5)), g.constant(std::move(offset)));
  }

  template <typename>
  friend class FeatureExtractor;

  std::vector<std::pair<Tensor<Scalar>, Tensor<Scalar>>> layers_;
  bool imagenet_input_ = false;
};

/// Half sum of squared feature differences. y: [M, I, h, w]; every frame is embedded separately.
template <typename Scalar>
Var<Scalar> perceptual_loss(Var<Scalar> y_true, Var<Scalar> y_pred, const FeatureExtractor<Scalar>& extractor) {
  const Shape& s = y_true.shape();
  if (s != y_pred.shape()) throw ShapeError("perceptual_loss: " + to_string(s) + " vs " + to_string(y_pred.shape()));
  detail::require_rank(s, 4, "perceptual_loss");
  Graph<Scalar>& g = *y_true.graph;
  const Shape flat = {s[0] * s[1], 1, s[2], s[3]};
  Var<Scalar> ft = extractor.features(g, reshape(y_true, flat));
  Var<Scalar> fp = extractor.features(g, reshape(y_pred, flat));
  return pixel_loss(ft, fp, 2);
}

/// Half sum of squares over decayed parameters (conv kernels; every trainable parameter
/// when `decay_all`).
template <typename Scalar>
Var<Scalar> weight_decay(Graph<Scalar>& g, ParamStore<Scalar>& params, bool decay_all = false) {
  std::optional<Var<Scalar>> total;
  params.for_each([&](Parameter<Scalar>& p) {
    if (!p.trainable || !(p.decay || decay_all)) return;
    Var<Scalar> term = sum(square(g.param(p)));
    total = total ? add(*total, term) : term;
  });
  if (!total) return g.constant(Tensor<Scalar>::scalar(Scalar(0)));
  return scale(*total, Scalar(0.5));
}

/// The weighted terms of the training objective; total = recon + perceptual + regularizer.
template <typename Scalar>
struct LossTerms {
  Var<Scalar> total;
  Var<Scalar> reconstruction;  ///< pixel loss / m, or DSSIM
  Var<Scalar> perceptual;      ///< λ1 · perceptual / m
  Var<Scalar> regularizer;     ///< (λ2 / 2) · weight decay
};

/// Training objective: pixel reconstruction and perceptual terms averaged over the batch,
/// plus λ2/2 times the weight decay. `extractor` may be null when λ1 == 0.
template <typename Scalar>
LossTerms<Scalar> combined_loss(Var<Scalar> y_true, Var<Scalar> y_pred, ParamStore<Scalar>& params,
                                const LossConfig& config, const FeatureExtractor<Scalar>* extractor = nullptr) {
  Graph<Scalar>& g = detail::graph_of(y_true);
  if (y_true.shape().empty()) throw ShapeError("combined_loss: rank-0 targets");
  const auto inv_batch = Scalar(1) / static_cast<Scalar>(y_true.dim(0));
  LossTerms<Scalar> t;
  switch (config.reconstruction) {
    case Reconstruction::kL1: t.reconstruction = scale(pixel_loss(y_true, y_pred, 1), inv_batch); break;
    case Reconstruction::kL2: t.reconstruction = scale(pixel_loss(y_true, y_pred, 2), inv_batch); break;
    case Reconstruction::kDssim: {
      SsimParams sp;
      t.reconstruction = dssim(y_true, y_pred, sp, config.ssim_convention);
      break;
    }
  }
  if (config.lambda_perceptual > 0) {
    if (extractor == nullptr) throw ContractError("combined_loss: perceptual weight set without an extractor");
    t.perceptual = scale(perceptual_loss(y_true, y_pred, *extractor),
                         static_cast<Scalar>(config.lambda_perceptual) * inv_batch);
  } else {
    t.perceptual = g.constant(Tensor<Scalar>::scalar(Scalar(0)));
  }
  if (config.lambda_decay > 0) {
    t.regularizer = scale(weight_decay(g, params, config.decay_all), static_cast<Scalar>(config.lambda_decay / 2.0));
  } else {
    t.regularizer = g.constant(Tensor<Scalar>::scalar(Scalar(0)));
  }
  t.total = add(add(t.reconstruction, t.perceptual), t.regularizer);
  return t;
}

}  // namespace wcell
