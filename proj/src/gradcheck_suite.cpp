#include "wcell/gradcheck.hpp"

#include "wcell/losses.hpp"
#include "wcell/model.hpp"

#include <numeric>

namespace wcell {

namespace {

// Doubles that are exactly representable in f32, so both engines see the same point.
TensorD f32_exact(TensorD t) {
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<double>(static_cast<float>(t[i]));
  return t;
}

TensorD uniform(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return f32_exact(TensorD::uniform(s, rng, lo, hi));
}

// Values bounded away from zero so relu/abs kinks are never straddled by a probe.
TensorD away_from_zero(const Shape& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  TensorD t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = sign(rng) ? mag(rng) : -mag(rng);
  return f32_exact(std::move(t));
}

// Distinct values spaced 0.05 apart in random order: no pooling window is near a tie.
TensorD well_separated(const Shape& s, std::mt19937_64& rng) {
  TensorD t(s);
  std::vector<Index> order(static_cast<std::size_t>(t.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  for (Index i = 0; i < t.size(); ++i) t[i] = 0.05 * static_cast<double>(order[static_cast<std::size_t>(i)]) - 1.0;
  return f32_exact(std::move(t));
}

template <typename S>
BatchNormState<S> scratch_bn(Tensor<S>& mean, Tensor<S>& var) {
  BatchNormState<S> st;
  st.running_mean = &mean;
  st.running_var = &var;
  return st;
}

std::vector<GradCheckResult> op_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCheckOptions opt;
  opt.seed = seed;
  std::vector<GradCheckResult> out;
  const std::uint64_t proj = seed ^ 0x5EEDULL;

  out.push_back(check_gradients(
      "conv2d",
      [&](auto&, const auto& v) { return random_projection(conv2d(v[0], v[1], v[2]), proj); },
      {uniform({2, 3, 5, 6}, rng), uniform({4, 3, 3, 3}, rng), uniform({4}, rng)}, opt));
  out.push_back(check_gradients(
      "conv2d_1x1",
      [&](auto&, const auto& v) { return random_projection(conv2d(v[0], v[1], v[2]), proj); },
      {uniform({2, 3, 4, 4}, rng), uniform({2, 3, 1, 1}, rng), uniform({2}, rng)}, opt));
  out.push_back(check_gradients(
      "conv_transpose2d",
      [&](auto&, const auto& v) { return random_projection(conv_transpose2d(v[0], v[1], v[2]), proj); },
      {uniform({2, 3, 3, 4}, rng), uniform({3, 2, 2, 2}, rng), uniform({2}, rng)}, opt));
  out.push_back(check_gradients(
      "maxpool2d", [&](auto&, const auto& v) { return random_projection(maxpool2d(v[0]), proj); },
      {well_separated({2, 2, 4, 6}, rng)}, opt));
  out.push_back(check_gradients(
      "upsample_nearest2x",
      [&](auto&, const auto& v) { return random_projection(upsample_nearest2x(v[0]), proj); },
      {uniform({1, 2, 3, 3}, rng)}, opt));
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    out.push_back(check_gradients(
        mode == Mode::kTrain ? "batch_norm_train" : "batch_norm_eval",
        [&, mode](auto& g, const auto& v) {
          using S = typename std::remove_reference_t<decltype(g)>::ScalarType;
          Tensor<S> rm({3}, S(0.2)), rv({3}, S(1.5));
          return random_projection(batch_norm(v[0], v[1], v[2], scratch_bn(rm, rv), mode), proj);
        },
        {uniform({2, 3, 3, 3}, rng), uniform({3}, rng, 0.5, 1.5), uniform({3}, rng)}, opt));
  }
  out.push_back(check_gradients(
      "relu", [&](auto&, const auto& v) { return random_projection(relu(v[0]), proj); },
      {away_from_zero({2, 3, 4, 4}, rng)}, opt));
  out.push_back(check_gradients(
      "tanh", [&](auto&, const auto& v) { return random_projection(tanh(v[0]), proj); },
      {uniform({2, 3, 4, 4}, rng, -2.0, 2.0)}, opt));
  out.push_back(check_gradients(
      "abs", [&](auto&, const auto& v) { return random_projection(abs(v[0]), proj); },
      {away_from_zero({3, 5}, rng)}, opt));
  out.push_back(check_gradients(
      "square", [&](auto&, const auto& v) { return random_projection(square(v[0]), proj); },
      {uniform({3, 5}, rng)}, opt));
  out.push_back(check_gradients(
      "scale_add_scalar",
      [&](auto& g, const auto& v) {
        using S = typename std::remove_reference_t<decltype(g)>::ScalarType;
        return random_projection(add_scalar(scale(v[0], S(-1.75)), S(0.3)), proj);
      },
      {uniform({4, 4}, rng)}, opt));
  out.push_back(check_gradients(
      "add_sub_mul",
      [&](auto&, const auto& v) { return random_projection(mul(add(v[0], v[1]), sub(v[0], v[2])), proj); },
      {uniform({2, 3, 4}, rng), uniform({2, 3, 4}, rng), uniform({2, 3, 4}, rng)}, opt));
  out.push_back(check_gradients(
      "div", [&](auto&, const auto& v) { return random_projection(div(v[0], v[1]), proj); },
      {uniform({2, 6}, rng), uniform({2, 6}, rng, 0.5, 1.5)}, opt));
  out.push_back(check_gradients(
      "concat_slice_reverse",
      [&](auto& g, const auto& v) {
        auto cat = concat_channels<typename std::remove_reference_t<decltype(g)>::ScalarType>(
            {v[0], reverse_channels(v[1]), v[2]});
        return random_projection(add(slice_channels(cat, 1, 3), slice_channels(cat, 0, 3)), proj);
      },
      {uniform({2, 1, 3, 3}, rng), uniform({2, 3, 3, 3}, rng), uniform({2, 2, 3, 3}, rng)}, opt));
  out.push_back(check_gradients(
      "reshape_sum_mean",
      [&](auto& g, const auto& v) {
        using S = typename std::remove_reference_t<decltype(g)>::ScalarType;
        auto r = reshape(v[0], Shape{4, 6});
        return add(scale(sum(square(r)), S(0.5)), mean(mul(r, r)));
      },
      {uniform({2, 3, 2, 2}, rng)}, opt));
  out.push_back(check_gradients(
      "filter2d_valid",
      [&](auto& g, const auto& v) {
        using S = typename std::remove_reference_t<decltype(g)>::ScalarType;
        return random_projection(filter2d_valid(v[0], gaussian_window<S>(3, 0.8)), proj);
      },
      {uniform({2, 2, 6, 5}, rng)}, opt));
  for (int x : {1, 2}) {
    // |d| is kinked at d = 0, so the prediction is offset from the target by at least 0.1.
    TensorD truth = uniform({2, 3, 4, 4}, rng);
    TensorD pred = away_from_zero(truth.shape(), rng);
    for (Index i = 0; i < pred.size(); ++i) pred[i] += truth[i];
    out.push_back(check_gradients(
        x == 1 ? "pixel_loss_l1" : "pixel_loss_l2",
        [&, x](auto&, const auto& v) { return pixel_loss(v[0], v[1], x); }, {truth, pred}, opt));
  }
  for (SsimConvention conv : {SsimConvention::kPaper, SsimConvention::kStandard}) {
    SsimParams sp;
    sp.window = 5;
    sp.sigma = 1.0;
    out.push_back(check_gradients(
        conv == SsimConvention::kPaper ? "dssim_paper" : "dssim_standard",
        [&, sp, conv](auto&, const auto& v) { return dssim(v[0], v[1], sp, conv); },
        {uniform({2, 1, 7, 8}, rng), uniform({2, 1, 7, 8}, rng)}, opt));
  }
  {
    const auto fx_f = FeatureExtractor<float>::random(seed + 11, 2);
    const auto fx_d = fx_f.cast<double>();
    out.push_back(check_gradients(
        "perceptual_loss",
        [&](auto& g, const auto& v) {
          using S = typename std::remove_reference_t<decltype(g)>::ScalarType;
          if constexpr (std::is_same_v<S, float>) {
            return perceptual_loss(v[0], v[1], fx_f);
          } else {
            return perceptual_loss(v[0], v[1], fx_d);
          }
        },
        {uniform({1, 2, 16, 16}, rng), uniform({1, 2, 16, 16}, rng)},
        GradCheckOptions{1e-4, 1e-3, 1e-4, 24, seed}));
  }
  return out;
}

// Full network plus combined loss: float analytic parameter gradients against f64 central
// differences on a cast copy of the same network.
GradCheckResult network_case(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.k = 4;
  cfg.frames = 3;
  cfg.input_h = 16;
  cfg.input_w = 16;
  LossConfig loss;
  loss.reconstruction = Reconstruction::kL2;
  loss.lambda_perceptual = 0.1;
  loss.lambda_decay = 0.01;
  loss.extractor = ExtractorKind::kRandomConv;
  loss.extractor_width = 2;

  std::mt19937_64 rng(seed + 101);
  const TensorD first = uniform({2, 1, 16, 16}, rng);
  const TensorD last = uniform({2, 1, 16, 16}, rng);
  const TensorD truth = uniform({2, 3, 16, 16}, rng, -0.9, 0.9);

  WCellNet<float> net_f(cfg, seed);
  WCellNet<double> net_d = net_f.cast<double>();
  const auto fx_f = FeatureExtractor<float>::random(seed + 13, loss.extractor_width);
  const auto fx_d = fx_f.cast<double>();

  Graph<float> gf;
  Var<float> pred = net_f.forward(gf, gf.constant(first.cast<float>()), gf.constant(last.cast<float>()), Mode::kTrain);
  gf.backward(combined_loss(gf.constant(truth.cast<float>()), pred, net_f.params(), loss, &fx_f).total);

  GradCheckOptions opt;
  // A small step keeps probes on one side of relu and max-pool switching points.
  opt.delta = 1e-5;
  opt.seed = seed;
  std::mt19937_64 pick(seed);
  std::vector<double*> slots;
  std::vector<double> analytic;
  net_d.params().for_each([&](Parameter<double>& p) {
    if (!p.trainable) return;
    const TensorF& grad = net_f.params().at(p.name).grad;
    for (Index i : probe_indices(p.value.size(), 3, pick)) {
      slots.push_back(p.value.data() + i);
      analytic.push_back(static_cast<double>(grad[i]));
    }
  });
  auto evaluate = [&]() {
    Graph<double> gd;
    Var<double> p = net_d.forward(gd, gd.constant(first), gd.constant(last), Mode::kTrain);
    return combined_loss(gd.constant(truth), p, net_d.params(), loss, &fx_d).total.value().item();
  };
  return compare_with_central_differences("wcellnet4_combined_loss", slots, analytic, evaluate, opt);
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheckResult> out = op_cases(seed);
  out.push_back(network_case(seed));
  return out;
}

}  // namespace wcell
