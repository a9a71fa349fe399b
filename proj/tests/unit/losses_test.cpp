#include "oracles.hpp"
#include "wcell/checkpoint.hpp"
#include "wcell/losses.hpp"
#include "wcell/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace wcell;

namespace {

TensorF rnd(const Shape& s, std::mt19937_64& rng, float lo = -1.f, float hi = 1.f) {
  return TensorF::uniform(s, rng, lo, hi);
}

double eval_pixel(const TensorF& t, const TensorF& p, int x) {
  Graph<float> g;
  return pixel_loss(g.constant(t), g.constant(p), x).value().item();
}

double eval_dssim(const TensorF& t, const TensorF& p, SsimConvention c) {
  Graph<float> g;
  return dssim(g.constant(t), g.constant(p), SsimParams{}, c).value().item();
}

}  // namespace

TEST(PixelLoss, Examples) {
  std::mt19937_64 rng(1);
  const TensorF a = rnd({2, 3, 4, 4}, rng);
  EXPECT_EQ(eval_pixel(a, a, 1), 0.0);
  EXPECT_EQ(eval_pixel(a, a, 2), 0.0);
  EXPECT_DOUBLE_EQ(eval_pixel(TensorF({1, 1, 1, 1}), TensorF({1, 1, 1, 1}, 1.f), 2), 0.5);
  EXPECT_THROW(eval_pixel(a, TensorF({2, 3, 4, 5}), 2), ShapeError);
}

TEST(PixelLoss, MatchesLoopOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const TensorF a = rnd({2, 3, 4, 4}, rng), b = rnd({2, 3, 4, 4}, rng);
    for (int x : {1, 2}) {
      const double ref = oracle::pixel_loss(a, b, x);
      EXPECT_NEAR(eval_pixel(a, b, x), ref, 1e-5);
    }
  }
}

TEST(GaussianWindow, SymmetricPositiveNormalized) {
  const TensorD w = gaussian_window<double>(11, 1.5);
  double total = 0;
  for (Index i = 0; i < 11; ++i)
    for (Index j = 0; j < 11; ++j) {
      EXPECT_GT(w[i * 11 + j], 0.0);
      EXPECT_DOUBLE_EQ(w[i * 11 + j], w[j * 11 + i]);
      EXPECT_DOUBLE_EQ(w[i * 11 + j], w[(10 - i) * 11 + (10 - j)]);
      total += w[i * 11 + j];
    }
  EXPECT_NEAR(total, 1.0, 1e-7);
  const TensorF wf = gaussian_window<float>(11, 1.5);
  double total_f = 0;
  for (Index i = 0; i < wf.size(); ++i) total_f += wf[i];
  EXPECT_NEAR(total_f, 1.0, 1e-7);
}

TEST(Dssim, IdenticalImagesUnderBothConventions) {
  std::mt19937_64 rng(3);
  const TensorF a = rnd({2, 3, 16, 16}, rng);
  EXPECT_NEAR(eval_dssim(a, a, SsimConvention::kPaper), 0.5, 1e-6);
  EXPECT_NEAR(eval_dssim(a, a, SsimConvention::kStandard), 0.0, 1e-6);
}

TEST(Dssim, MatchesIndependentImplementation) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const TensorF a = rnd({2, 2, 14, 13}, rng), b = rnd({2, 2, 14, 13}, rng);
    const double standard = eval_dssim(a, b, SsimConvention::kStandard);
    EXPECT_GE(standard, 0.0);
    EXPECT_LE(standard, 2.0);
    EXPECT_NEAR(standard, 1.0 - oracle::ssim_mean(a, b), 1e-5);
    EXPECT_NEAR(eval_dssim(a, b, SsimConvention::kPaper), 1.0 - 0.5 * oracle::ssim_mean(a, b), 1e-5);
  }
}

TEST(Dssim, ImageSmallerThanWindowThrows) {
  EXPECT_THROW(eval_dssim(TensorF({1, 1, 10, 16}), TensorF({1, 1, 10, 16}), SsimConvention::kPaper), ShapeError);
}

TEST(Perceptual, ZeroForIdenticalDeterministicAndSensitive) {
  std::mt19937_64 rng(5);
  const auto fx = FeatureExtractor<float>::random(7, 4);
  const TensorF a = rnd({2, 1, 32, 32}, rng);
  TensorF shifted = a;
  for (Index i = 0; i < shifted.size(); ++i) shifted[i] += 0.5f;
  Graph<float> g;
  EXPECT_EQ(perceptual_loss(g.constant(a), g.constant(a), fx).value().item(), 0.f);
  const float l1 = perceptual_loss(g.constant(a), g.constant(shifted), fx).value().item();
  const float l2 = perceptual_loss(g.constant(a), g.constant(shifted), FeatureExtractor<float>::random(7, 4))
                       .value()
                       .item();
  EXPECT_GT(l1, 0.f);
  EXPECT_EQ(l1, l2);
}

TEST(Perceptual, ExtractorMimicsVggShapes) {
  const auto fx = FeatureExtractor<float>::random(1, 64);
  EXPECT_EQ(fx.output_channels(), 512);
  EXPECT_EQ(FeatureExtractor<float>::layer_names().size(), 13u);
  Graph<float> g;
  Var<float> f = FeatureExtractor<float>::random(1, 2).features(g, g.constant(TensorF({3, 1, 32, 32})));
  EXPECT_EQ(f.shape(), (Shape{3, 16, 2, 2}));  // output stride 16
}

TEST(Perceptual, GradientOnlyThroughPrediction) {
  std::mt19937_64 rng(6);
  const auto fx = FeatureExtractor<float>::random(3, 2);
  Graph<float> g;
  Var<float> t = g.leaf(rnd({1, 1, 16, 16}, rng));
  Var<float> p = g.leaf(rnd({1, 1, 16, 16}, rng));
  // Targets enter as constants in training; here both are leaves so both receive grads.
  g.backward(perceptual_loss(g.constant(t.value()), p, fx));
  double mass = 0;
  for (Index i = 0; i < g.grad(p).size(); ++i) mass += std::abs(g.grad(p)[i]);
  EXPECT_GT(mass, 0.0);
  EXPECT_EQ(g.grad(t), TensorF(t.shape()));
}

TEST(Perceptual, Vgg16WeightsFileRoundTrip) {
  const auto ref = FeatureExtractor<float>::random(11, 2);
  RecordFile file;
  std::mt19937_64 rng(12);
  Index c_in = 3;
  for (std::size_t s = 0, l = 0; s < 5; ++s) {
    for (int d = 0; d < FeatureExtractor<float>::kStageDepth[s]; ++d, ++l) {
      const Index width = FeatureExtractor<float>::stage_width(2, s);
      const std::string name = FeatureExtractor<float>::layer_names()[l];
      file.records.push_back({name + ".weight", TensorF::normal({width, c_in, 3, 3}, rng, 0.1f)});
      file.records.push_back({name + ".bias", TensorF({width}, 0.01f)});
      c_in = width;
    }
  }
  const auto path = std::filesystem::temp_directory_path() / "wcell_vgg_test.wcnc";
  write_record_file(path, file);
  const auto fx = load_vgg16_extractor(path);
  EXPECT_EQ(fx.output_channels(), 16);
  file.records.pop_back();
  write_record_file(path, file);
  EXPECT_THROW(load_vgg16_extractor(path), FormatError);
}

TEST(WeightDecay, Examples) {
  ParamStore<float> store;
  store.add("w", TensorF({3}), true, true);
  Graph<float> g;
  EXPECT_EQ(weight_decay(g, store).value().item(), 0.f);
  ParamStore<float> one;
  one.add("w", TensorF({1}, 2.f), true, true);
  one.add("b", TensorF({1}, 5.f), true, false);
  Graph<float> g2;
  EXPECT_EQ(weight_decay(g2, one).value().item(), 2.f);
  EXPECT_EQ(weight_decay(g2, one, true).value().item(), 2.f + 12.5f);
}

TEST(WeightDecay, MatchesLoopOracleOverNetwork) {
  ModelConfig cfg;
  cfg.k = 4;
  cfg.input_h = cfg.input_w = 16;
  WCellNet<float> net(cfg, 3);
  double ref = 0.0;
  net.params().for_each([&](const Parameter<float>& p) {
    const bool kernel = p.name.size() > 7 && p.name.compare(p.name.size() - 7, 7, ".weight") == 0;
    if (!kernel) return;
    for (Index i = 0; i < p.value.size(); ++i) ref += 0.5 * p.value[i] * p.value[i];
  });
  Graph<float> g;
  EXPECT_NEAR(weight_decay(g, net.params()).value().item(), ref, 1e-5 * std::max(1.0, ref));
}

namespace {

struct SmallProblem {
  WCellNet<float> net;
  TensorF xf, xl, truth;
  FeatureExtractor<float> fx;

  SmallProblem()
      : net(
            [] {
              ModelConfig cfg;
              cfg.k = 4;
              cfg.input_h = cfg.input_w = 16;
              return cfg;
            }(),
            5),
        fx(FeatureExtractor<float>::random(9, 2)) {
    std::mt19937_64 rng(13);
    xf = rnd({2, 1, 16, 16}, rng);
    xl = rnd({2, 1, 16, 16}, rng);
    truth = rnd({2, 3, 16, 16}, rng, -0.9f, 0.9f);
  }

  LossTerms<float> terms(Graph<float>& g, const LossConfig& cfg) {
    Var<float> pred = net.forward(g, g.constant(xf), g.constant(xl), Mode::kEval);
    return combined_loss(g.constant(truth), pred, net.params(), cfg, &fx);
  }
};

}  // namespace

TEST(CombinedLoss, DegenerateWeights) {
  SmallProblem prob;
  Graph<float> g;
  Var<float> pred = prob.net.forward(g, g.constant(prob.xf), g.constant(prob.xl), Mode::kEval);
  LossConfig cfg;
  const auto same = combined_loss(pred, pred, prob.net.params(), cfg);
  EXPECT_EQ(same.total.value().item(), 0.f);
  const auto t = combined_loss(g.constant(prob.truth), pred, prob.net.params(), cfg);
  EXPECT_FLOAT_EQ(t.total.value().item(), pixel_loss(g.constant(prob.truth), pred, 2).value().item() / 2.f);
}

TEST(CombinedLoss, EqualsSumOfSeparatelyComputedTerms) {
  SmallProblem prob;
  LossConfig cfg;
  cfg.lambda_perceptual = 1e-4;
  cfg.lambda_decay = 1e-5;
  cfg.extractor = ExtractorKind::kRandomConv;
  Graph<float> g;
  const auto terms = prob.terms(g, cfg);
  Var<float> pred = prob.net.forward(g, g.constant(prob.xf), g.constant(prob.xl), Mode::kEval);
  Var<float> truth = g.constant(prob.truth);
  const double m = 2.0;
  const double manual = pixel_loss(truth, pred, 2).value().item() / m +
                        1e-4 * perceptual_loss(truth, pred, prob.fx).value().item() / m +
                        1e-5 / 2.0 * weight_decay(g, prob.net.params()).value().item();
  EXPECT_NEAR(terms.total.value().item(), manual, 1e-6 * std::max(1.0, manual));
}

TEST(CombinedLoss, MonotoneInWeights) {
  SmallProblem prob;
  LossConfig cfg;
  cfg.extractor = ExtractorKind::kRandomConv;
  double previous = -1.0;
  for (double l1 : {0.0, 1e-4, 1e-2, 1.0}) {
    cfg.lambda_perceptual = l1;
    Graph<float> g;
    const double total = prob.terms(g, cfg).total.value().item();
    EXPECT_GE(total, previous);
    previous = total;
  }
  previous = -1.0;
  cfg.lambda_perceptual = 0;
  for (double l2 : {0.0, 1e-5, 1e-3, 1e-1}) {
    cfg.lambda_decay = l2;
    Graph<float> g;
    const double total = prob.terms(g, cfg).total.value().item();
    EXPECT_GE(total, previous);
    previous = total;
  }
}

TEST(CombinedLoss, DssimReconstructionAndConfigValidation) {
  SmallProblem prob;
  LossConfig cfg;
  cfg.reconstruction = Reconstruction::kDssim;
  Graph<float> g;
  const auto t = prob.terms(g, cfg);
  EXPECT_GT(t.reconstruction.value().item(), 0.f);

  LossConfig bad;
  bad.lambda_perceptual = 1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad.extractor = ExtractorKind::kVgg16;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad.lambda_perceptual = -1;
  bad.extractor = ExtractorKind::kRandomConv;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}
