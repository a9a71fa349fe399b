#include "wcell/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace wcell {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch, std::uint64_t seed, bool with_replacement)
    : n_(dataset_size), batch_(batch), seed_(seed), with_replacement_(with_replacement), rng_(mix(seed, ~0ULL)) {
  if (n_ == 0) throw std::invalid_argument("training set is empty");
  if (batch_ == 0) throw std::invalid_argument("batch size must be >= 1");
  if (!with_replacement_ && batch_ > n_) {
    throw std::invalid_argument("batch size " + std::to_string(batch_) + " exceeds training split size " +
                                std::to_string(n_));
  }
  if (!with_replacement_) order_ = epoch_order(n_, seed_, 0);
}

std::vector<std::size_t> BatchSampler::epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix(seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> out(batch_);
  if (with_replacement_) {
    std::uniform_int_distribution<std::size_t> pick(0, n_ - 1);
    for (auto& i : out) i = pick(rng_);
    return out;
  }
  if (cursor_ + batch_ > n_) {
    ++epoch_;
    cursor_ = 0;
    order_ = epoch_order(n_, seed_, epoch_);
  }
  std::copy(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
            order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_), out.begin());
  cursor_ += batch_;
  return out;
}

Batch make_batch(const std::vector<FrameSample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  const FrameSample& ref = samples.at(indices.front());
  const Index m = static_cast<Index>(indices.size());
  const Index n_if = ref.intermediate_count(), h = ref.height(), w = ref.width(), plane = h * w;
  Batch b{TensorF({m, 1, h, w}), TensorF({m, 1, h, w}), TensorF({m, n_if, h, w})};
  for (Index i = 0; i < m; ++i) {
    const FrameSample& s = samples.at(indices[static_cast<std::size_t>(i)]);
    if (s.frames.shape() != ref.frames.shape()) {
      throw ShapeError("batch samples disagree in shape: " + to_string(s.frames.shape()) + " vs " +
                       to_string(ref.frames.shape()));
    }
    const float* src = s.frames.data();
    auto scale = [](float v) { return static_cast<float>(to_network_scale(v)); };
    std::transform(src, src + plane, b.first.data() + i * plane, scale);
    std::transform(src + (n_if + 1) * plane, src + (n_if + 2) * plane, b.last.data() + i * plane, scale);
    std::transform(src + plane, src + (n_if + 1) * plane, b.targets.data() + i * n_if * plane, scale);
  }
  return b;
}

void write_train_log(std::ostream& out, const std::vector<TrainLogRow>& rows) {
  out << "iter,loss_total,loss_recon,loss_percep,loss_reg\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(r.iter), r.total, r.recon,
                  r.percep, r.reg);
    out << line;
  }
}

std::optional<FeatureExtractor<float>> make_extractor(const LossConfig& loss) {
  if (loss.lambda_perceptual <= 0) return std::nullopt;
  switch (loss.extractor) {
    case ExtractorKind::kNone: return std::nullopt;
    case ExtractorKind::kRandomConv: return FeatureExtractor<float>::random(loss.extractor_seed, loss.extractor_width);
    case ExtractorKind::kVgg16: return load_vgg16_extractor(loss.vgg_weights);
  }
  return std::nullopt;
}

std::string checkpoint_name(std::int64_t iter) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "ckpt_%06lld.wcnc", static_cast<long long>(iter));
  return buf;
}

namespace {

void write_log_file(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_train_log(out, rows);
}

}  // namespace

void train_steps(WCellNet<float>& net, AdamState<float>& adam, const LossConfig& loss, const TrainConfig& config,
                 const std::vector<FrameSample>& train_set, const TrainOutputs& outputs,
                 std::vector<TrainLogRow>& log) {
  config.validate();
  loss.validate();
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  const ModelConfig& mc = net.config();
  const FrameSample& probe = train_set.front();
  if (probe.intermediate_count() != mc.frames) {
    throw ShapeError("dataset IF " + std::to_string(probe.intermediate_count()) + " does not match model IF " +
                     std::to_string(mc.frames));
  }
  if (probe.height() != mc.input_h || probe.width() != mc.input_w) {
    throw ShapeError("dataset frames are " + std::to_string(probe.height()) + "x" + std::to_string(probe.width()) +
                     ", model expects " + std::to_string(mc.input_h) + "x" + std::to_string(mc.input_w));
  }

  const auto extractor = make_extractor(loss);
  const FeatureExtractor<float>* fx = extractor ? &*extractor : nullptr;
  BatchSampler sampler(train_set.size(), config.batch, config.seed, config.with_replacement);
  std::mt19937_64 augment_rng(mix(config.seed, 0xA5A5));
  std::ofstream eval_log;
  if (outputs.out_dir && outputs.validation != nullptr && config.eval_interval > 0) {
    eval_log.open(*outputs.out_dir / "eval_log.csv", std::ios::trunc);
    eval_log << "iter,split,n,mse,psnr\n";
  }

  const std::int64_t start = adam.step;
  for (std::int64_t it = start + 1; it <= start + config.iterations; ++it) {
    std::vector<std::size_t> idx = sampler.next();
    Batch batch;
    if (config.augment) {
      std::vector<FrameSample> augmented;
      augmented.reserve(idx.size());
      for (auto i : idx) augmented.push_back(augment(train_set[i], draw_augment(augment_rng)));
      std::vector<std::size_t> local(idx.size());
      std::iota(local.begin(), local.end(), std::size_t{0});
      batch = make_batch(augmented, local);
    } else {
      batch = make_batch(train_set, idx);
    }

    Graph<float> g;
    Var<float> pred = net.forward(g, g.constant(std::move(batch.first)), g.constant(std::move(batch.last)),
                                  Mode::kTrain);
    Var<float> truth = g.constant(std::move(batch.targets));
    LossTerms<float> terms = combined_loss(truth, pred, net.params(), loss, fx);
    g.backward(terms.total);
    adam_step(net.params(), adam, config.adam);

    TrainLogRow row{it, terms.total.value().item(), terms.reconstruction.value().item(),
                    terms.perceptual.value().item(), terms.regularizer.value().item()};
    log.push_back(row);
    if (outputs.on_iteration) outputs.on_iteration(row);

    if (outputs.out_dir && config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0) {
      save_checkpoint(net, *outputs.out_dir / checkpoint_name(it), &adam);
    }
    if (eval_log.is_open() && it % config.eval_interval == 0) {
      const MetricsReport r = evaluate(net, *outputs.validation, "val");
      char line[160];
      std::snprintf(line, sizeof line, "%lld,%s,%zu,%.9g,%.6f\n", static_cast<long long>(it), r.split.c_str(), r.n,
                    r.mse, r.psnr);
      eval_log << line << std::flush;
    }
  }
  if (outputs.out_dir) {
    save_checkpoint(net, *outputs.out_dir / "model.wcnc", &adam);
    write_log_file(*outputs.out_dir / "train_log.csv", log);
  }
}

TrainResult train(const ModelConfig& model, const LossConfig& loss, const TrainConfig& config,
                  const std::vector<FrameSample>& train_set, const TrainOutputs& outputs) {
  TrainResult result{WCellNet<float>(model, config.seed), AdamState<float>{}, {}};
  train_steps(result.net, result.adam, loss, config, train_set, outputs, result.log);
  return result;
}

MetricsReport evaluate(const WCellNet<float>& net, const std::vector<FrameSample>& samples, const std::string& split,
                       std::size_t batch, double psnr_cap) {
  std::vector<double> per_sample;
  per_sample.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.intermediate_count() != net.config().frames) {
      throw std::invalid_argument("sample IF " + std::to_string(s.intermediate_count()) +
                                  " does not match checkpoint IF " + std::to_string(net.config().frames));
    }
  }
  for (std::size_t begin = 0; begin < samples.size(); begin += batch) {
    const std::size_t end = std::min(samples.size(), begin + batch);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    Batch b = make_batch(samples, idx);
    Graph<float> g;
    Var<float> pred = net.forward(g, g.constant(std::move(b.first)), g.constant(std::move(b.last)), Mode::kEval);
    const TensorF& pv = pred.value();
    const Index per = pv.size() / static_cast<Index>(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const FrameSample& s = samples[idx[i]];
      const Index plane = s.height() * s.width();
      const float* truth = s.frames.data() + plane;
      const float* p = pv.data() + static_cast<Index>(i) * per;
      double acc = 0.0;
      for (Index j = 0; j < per; ++j) {
        const double d = static_cast<double>(truth[j]) - to_pixel_scale(p[j]);
        acc += d * d;
      }
      per_sample.push_back(acc / static_cast<double>(per));
    }
  }
  return make_report(split, std::move(per_sample), psnr_cap);
}

TensorF interpolate(const WCellNet<float>& net, const TensorF& first, const TensorF& last) {
  first.require_same_shape(last, "interpolate");
  if (first.rank() != 2) throw ShapeError("interpolate expects [h, w] frames");
  const Index h = first.dim(0), w = first.dim(1);
  auto to_net = [&](const TensorF& t) {
    TensorF out({1, 1, h, w});
    for (Index i = 0; i < t.size(); ++i) out[i] = static_cast<float>(to_network_scale(t[i]));
    return out;
  };
  Graph<float> g;
  Var<float> pred = net.forward(g, g.constant(to_net(first)), g.constant(to_net(last)), Mode::kEval);
  const Index n_if = net.config().frames;
  TensorF out({n_if, h, w});
  for (Index i = 0; i < out.size(); ++i) out[i] = static_cast<float>(to_pixel_scale(pred.value()[i]));
  return out;
}

}  // namespace wcell
