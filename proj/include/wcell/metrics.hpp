#pragma once

#include "wcell/data.hpp"
#include "wcell/tensor.hpp"

#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace wcell {

enum class BaselineKind { kFFR, kLFR, kWF };

std::string to_string(BaselineKind kind);
BaselineKind parse_baseline(const std::string& name);

/// t_j = j / (I + 1), j = 1..I.
std::vector<double> time_grid(Index intermediate);

/// FFR: I copies of `first`; LFR: I copies of `last`; WF: (1 - t_j) first + t_j last.
/// first, last: [h, w]. Returns [I, h, w].
TensorF baseline_predict(BaselineKind kind, const TensorF& first, const TensorF& last, Index intermediate);

/// Mean squared error over all elements.
double mse(std::span<const float> y_true, std::span<const float> y_pred);
double mse(const TensorF& y_true, const TensorF& y_pred);

inline constexpr double kPsnrCap = 200.0;

/// 10 log10(255^2 / mse). Throws std::domain_error for mse <= 0.
double psnr(double mse_value);
/// psnr() with zero MSE reported as `cap` decibels.
double psnr_capped(double mse_value, double cap = kPsnrCap);

/// Reporting scale: kPixel keeps [0, 255] MSE; kUnit divides it by 255^2 (the scale of
/// the printed MSE column, which is then fed to the same PSNR formula).
enum class MseScale { kPixel, kUnit };
MseScale parse_mse_scale(const std::string& name);

struct MetricsReport {
  std::string split;
  std::size_t n = 0;
  double mse = 0.0;   ///< mean of per-sample MSEs, [0, 255] scale
  double psnr = 0.0;  ///< psnr_capped(mse)
  std::vector<double> per_sample_mse;
};

/// Aggregates per-sample MSEs (fixed summation order) into a report.
MetricsReport make_report(std::string split, std::vector<double> per_sample_mse, double cap = kPsnrCap);

MetricsReport evaluate_baseline(BaselineKind kind, const std::vector<FrameSample>& samples, const std::string& split);
/// One report per kind, labelled "<split>:<KIND>".
std::vector<MetricsReport> evaluate_baselines(const std::vector<FrameSample>& samples, const std::string& split,
                                              const std::vector<BaselineKind>& kinds = {BaselineKind::kFFR,
                                                                                        BaselineKind::kLFR,
                                                                                        BaselineKind::kWF});

/// CSV with header `split,n,mse,psnr`.
void write_metrics_csv(std::ostream& out, const std::vector<MetricsReport>& reports, MseScale scale = MseScale::kPixel,
                       double cap = kPsnrCap);

}  // namespace wcell
