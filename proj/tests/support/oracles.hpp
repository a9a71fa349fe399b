#pragma once

// Brute-force reference implementations. Deliberately naive: direct loops, double
// accumulation, no shared code with the library kernels.

#include "wcell/tensor.hpp"

#include <cmath>
#include <vector>

namespace oracle {

using wcell::Index;
using wcell::TensorF;

// Same-padded stride-1 cross-correlation with odd square kernel.
inline TensorF conv2d(const TensorF& x, const TensorF& w, const TensorF& b) {
  const Index m = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index co = w.dim(0), k = w.dim(2), pad = k / 2;
  TensorF out({m, co, h, wd});
  for (Index n = 0; n < m; ++n)
    for (Index o = 0; o < co; ++o)
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < wd; ++xx) {
          double acc = b[o];
          for (Index c = 0; c < ci; ++c)
            for (Index dy = 0; dy < k; ++dy)
              for (Index dx = 0; dx < k; ++dx) {
                const Index sy = y + dy - pad, sx = xx + dx - pad;
                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                acc += static_cast<double>(x[((n * ci + c) * h + sy) * wd + sx]) *
                       w[((o * ci + c) * k + dy) * k + dx];
              }
          out[((n * co + o) * h + y) * wd + xx] = static_cast<float>(acc);
        }
  return out;
}

// Transposed convolution, kernel == stride == s: every input pixel scatters an s x s patch.
inline TensorF conv_transpose2d(const TensorF& x, const TensorF& w, const TensorF& b) {
  const Index m = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index co = w.dim(1), s = w.dim(2);
  std::vector<double> acc(static_cast<std::size_t>(m * co * h * s * wd * s), 0.0);
  auto at = [&](Index n, Index o, Index y, Index xx) -> double& {
    return acc[static_cast<std::size_t>(((n * co + o) * h * s + y) * wd * s + xx)];
  };
  for (Index n = 0; n < m; ++n)
    for (Index c = 0; c < ci; ++c)
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < wd; ++xx)
          for (Index o = 0; o < co; ++o)
            for (Index dy = 0; dy < s; ++dy)
              for (Index dx = 0; dx < s; ++dx)
                at(n, o, y * s + dy, xx * s + dx) +=
                    static_cast<double>(x[((n * ci + c) * h + y) * wd + xx]) * w[((c * co + o) * s + dy) * s + dx];
  TensorF out({m, co, h * s, wd * s});
  for (Index n = 0; n < m; ++n)
    for (Index o = 0; o < co; ++o)
      for (Index y = 0; y < h * s; ++y)
        for (Index xx = 0; xx < wd * s; ++xx)
          out[((n * co + o) * h * s + y) * wd * s + xx] = static_cast<float>(at(n, o, y, xx) + b[o]);
  return out;
}

inline TensorF maxpool2d(const TensorF& x) {
  const Index m = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  TensorF out({m, c, h / 2, w / 2});
  for (Index n = 0; n < m * c; ++n)
    for (Index y = 0; y < h / 2; ++y)
      for (Index xx = 0; xx < w / 2; ++xx) {
        float best = x[(n * h + 2 * y) * w + 2 * xx];
        for (Index dy = 0; dy < 2; ++dy)
          for (Index dx = 0; dx < 2; ++dx) best = std::max(best, x[(n * h + 2 * y + dy) * w + 2 * xx + dx]);
        out[(n * (h / 2) + y) * (w / 2) + xx] = best;
      }
  return out;
}

inline double pixel_loss(const TensorF& t, const TensorF& p, int x) {
  double acc = 0.0;
  for (Index i = 0; i < t.size(); ++i) {
    const double d = std::abs(static_cast<double>(t[i]) - p[i]);
    acc += x == 1 ? d : d * d;
  }
  return 0.5 * acc;
}

inline double mse(const TensorF& t, const TensorF& p) {
  double acc = 0.0;
  for (Index i = 0; i < t.size(); ++i) {
    const double d = static_cast<double>(t[i]) - p[i];
    acc += d * d;
  }
  return acc / static_cast<double>(t.size());
}

// Mean local SSIM over valid window positions of every [h, w] plane, evaluated directly
// from windowed sums at each position.
inline double ssim_mean(const TensorF& a, const TensorF& b, Index win = 11, double sigma = 1.5, double c1 = 4e-4,
                        double c2 = 3.6e-3) {
  std::vector<double> g(static_cast<std::size_t>(win * win));
  double total = 0.0;
  const double mid = static_cast<double>(win - 1) / 2.0;
  for (Index i = 0; i < win; ++i)
    for (Index j = 0; j < win; ++j) {
      const double r2 = (i - mid) * (i - mid) + (j - mid) * (j - mid);
      g[static_cast<std::size_t>(i * win + j)] = std::exp(-r2 / (2 * sigma * sigma));
      total += g[static_cast<std::size_t>(i * win + j)];
    }
  for (double& v : g) v /= total;
  const Index planes = a.dim(0) * a.dim(1), h = a.dim(2), w = a.dim(3);
  double sum = 0.0;
  Index count = 0;
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y + win <= h; ++y)
      for (Index x = 0; x + win <= w; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (Index i = 0; i < win; ++i)
          for (Index j = 0; j < win; ++j) {
            const double wt = g[static_cast<std::size_t>(i * win + j)];
            const double va = a[(p * h + y + i) * w + x + j], vb = b[(p * h + y + i) * w + x + j];
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return sum / static_cast<double>(count);
}

}  // namespace oracle
