#include "wcell/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace wcell {

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kFFR: return "FFR";
    case BaselineKind::kLFR: return "LFR";
    case BaselineKind::kWF: return "WF";
  }
  return "?";
}

BaselineKind parse_baseline(const std::string& name) {
  if (name == "FFR" || name == "ffr") return BaselineKind::kFFR;
  if (name == "LFR" || name == "lfr") return BaselineKind::kLFR;
  if (name == "WF" || name == "wf") return BaselineKind::kWF;
  throw std::invalid_argument("unknown baseline: " + name);
}

std::vector<double> time_grid(Index intermediate) {
  std::vector<double> t(static_cast<std::size_t>(intermediate));
  for (Index j = 1; j <= intermediate; ++j) {
    t[static_cast<std::size_t>(j - 1)] = static_cast<double>(j) / static_cast<double>(intermediate + 1);
  }
  return t;
}

TensorF baseline_predict(BaselineKind kind, const TensorF& first, const TensorF& last, Index intermediate) {
  first.require_same_shape(last, "baseline_predict");
  if (first.rank() != 2) throw ShapeError("baseline_predict expects [h, w] frames, got " + to_string(first.shape()));
  if (intermediate < 1) throw std::invalid_argument("baseline_predict: IF must be >= 1");
  const Index h = first.dim(0), w = first.dim(1), plane = h * w;
  TensorF out({intermediate, h, w});
  const auto t = time_grid(intermediate);
  for (Index j = 0; j < intermediate; ++j) {
    float* dst = out.data() + j * plane;
    for (Index i = 0; i < plane; ++i) {
      switch (kind) {
        case BaselineKind::kFFR: dst[i] = first[i]; break;
        case BaselineKind::kLFR: dst[i] = last[i]; break;
        case BaselineKind::kWF: {
          const double tj = t[static_cast<std::size_t>(j)];
          dst[i] = static_cast<float>((1.0 - tj) * first[i] + tj * last[i]);
          break;
        }
      }
    }
  }
  return out;
}

double mse(std::span<const float> y_true, std::span<const float> y_pred) {
  if (y_true.size() != y_pred.size()) throw ShapeError("mse: operand sizes differ");
  if (y_true.empty()) throw ShapeError("mse: empty operands");
  double acc = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double d = static_cast<double>(y_true[i]) - static_cast<double>(y_pred[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(y_true.size());
}

double mse(const TensorF& y_true, const TensorF& y_pred) {
  y_true.require_same_shape(y_pred, "mse");
  return mse(y_true.span(), y_pred.span());
}

double psnr(double mse_value) {
  if (!(mse_value > 0)) throw std::domain_error("psnr is undefined for mse <= 0");
  return 10.0 * std::log10(255.0 * 255.0 / mse_value);
}

double psnr_capped(double mse_value, double cap) { return mse_value > 0 ? std::min(psnr(mse_value), cap) : cap; }

MseScale parse_mse_scale(const std::string& name) {
  if (name == "pixel") return MseScale::kPixel;
  if (name == "unit") return MseScale::kUnit;
  throw std::invalid_argument("unknown mse scale: " + name + " (expected pixel|unit)");
}

MetricsReport make_report(std::string split, std::vector<double> per_sample_mse, double cap) {
  MetricsReport r;
  r.split = std::move(split);
  r.n = per_sample_mse.size();
  double acc = 0.0;
  for (double v : per_sample_mse) acc += v;
  r.mse = r.n > 0 ? acc / static_cast<double>(r.n) : 0.0;
  r.psnr = psnr_capped(r.mse, cap);
  r.per_sample_mse = std::move(per_sample_mse);
  return r;
}

MetricsReport evaluate_baseline(BaselineKind kind, const std::vector<FrameSample>& samples, const std::string& split) {
  std::vector<double> per_sample;
  per_sample.reserve(samples.size());
  for (const auto& s : samples) {
    const Index n_if = s.intermediate_count();
    const TensorF pred = baseline_predict(kind, s.frame(0), s.frame(n_if + 1), n_if);
    const Index plane = s.height() * s.width();
    std::span<const float> truth(s.frames.data() + plane, static_cast<std::size_t>(n_if * plane));
    per_sample.push_back(mse(truth, pred.span()));
  }
  return make_report(split + ":" + to_string(kind), std::move(per_sample));
}

std::vector<MetricsReport> evaluate_baselines(const std::vector<FrameSample>& samples, const std::string& split,
                                              const std::vector<BaselineKind>& kinds) {
  std::vector<MetricsReport> out;
  for (auto k : kinds) out.push_back(evaluate_baseline(k, samples, split));
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsReport>& reports, MseScale scale, double cap) {
  out << "split,n,mse,psnr\n";
  char line[256];
  for (const auto& r : reports) {
    const double m = scale == MseScale::kPixel ? r.mse : r.mse / (255.0 * 255.0);
    std::snprintf(line, sizeof line, "%s,%zu,%.9g,%.6f\n", r.split.c_str(), r.n, m, psnr_capped(m, cap));
    out << line;
  }
}

}  // namespace wcell
