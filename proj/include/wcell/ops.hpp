#pragma once

// Differentiable operations over Graph variables. Every function records its
// forward result and a backward rule on the input's graph.

#include "wcell/graph.hpp"

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace wcell {

namespace detail {

template <typename Scalar>
using MatR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(s));
  }
}

template <typename Scalar>
Graph<Scalar>& graph_of(Var<Scalar> v) {
  if (v.graph == nullptr) throw ContractError("operation on an unbound variable");
  return *v.graph;
}

template <typename Scalar>
void require_same_graph(Var<Scalar> a, Var<Scalar> b) {
  if (a.graph != b.graph) throw ContractError("operands belong to different graphs");
}

// Forward convolutions accumulate in double and round once per output element.
using Accum = double;

// cols[(c*K + ki)*K + kj, y*W + x] = img[c, y + ki - pad, x + kj - pad] (zero outside).
template <typename Scalar, typename Out = Scalar>
void im2col(const Scalar* img, Index channels, Index height, Index width, Index kernel, Out* cols) {
  const Index pad = kernel / 2;
  const Index plane = height * width;
  for (Index c = 0; c < channels; ++c) {
    for (Index ki = 0; ki < kernel; ++ki) {
      for (Index kj = 0; kj < kernel; ++kj) {
        Out* row = cols + ((c * kernel + ki) * kernel + kj) * plane;
        for (Index y = 0; y < height; ++y) {
          const Index sy = y + ki - pad;
          Out* dst = row + y * width;
          if (sy < 0 || sy >= height) {
            std::fill(dst, dst + width, Out(0));
            continue;
          }
          const Scalar* src = img + (c * height + sy) * width;
          for (Index x = 0; x < width; ++x) {
            const Index sx = x + kj - pad;
            dst[x] = (sx < 0 || sx >= width) ? Out(0) : static_cast<Out>(src[sx]);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* cols, Index channels, Index height, Index width, Index kernel, Scalar* img) {
  const Index pad = kernel / 2;
  const Index plane = height * width;
  for (Index c = 0; c < channels; ++c) {
    for (Index ki = 0; ki < kernel; ++ki) {
      for (Index kj = 0; kj < kernel; ++kj) {
        const Scalar* row = cols + ((c * kernel + ki) * kernel + kj) * plane;
        for (Index y = 0; y < height; ++y) {
          const Index sy = y + ki - pad;
          if (sy < 0 || sy >= height) continue;
          Scalar* dst = img + (c * height + sy) * width;
          const Scalar* src = row + y * width;
          for (Index x = 0; x < width; ++x) {
            const Index sx = x + kj - pad;
            if (sx >= 0 && sx < width) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

template <typename Scalar, typename Fwd, typename Deriv>
Var<Scalar> unary(Var<Scalar> x, Fwd fwd, Deriv deriv) {
  auto& g = graph_of(x);
  const Tensor<Scalar>& xv = x.value();
  Tensor<Scalar> out(xv.shape());
  for (Index i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return g.record(std::move(out), {x}, [x, deriv](Graph<Scalar>& gr, const Tensor<Scalar>& gout) {
    const Tensor<Scalar>& xv = gr.value(x);
    Tensor<Scalar>& gx = gr.grad_of(x);
    for (Index i = 0; i < xv.size(); ++i) gx[i] += gout[i] * deriv(xv[i]);
  });
}

}  // namespace detail

/// Per-channel batch-norm running statistics, updated in place during training.
template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar>* running_mean = nullptr;
  Tensor<Scalar>* running_var = nullptr;
  double momentum = 0.99;
  double eps = 1e-5;
};

enum class Mode { kTrain, kEval };

/// 2-D cross-correlation with odd square kernel and "same" zero padding.
/// x: [m, c_in, h, w]; weight: [c_out, c_in, K, K]; bias: [c_out].
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias) {
  using detail::MatR;
  detail::require_same_graph(x, weight);
  detail::require_same_graph(x, bias);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  detail::require_rank(xs, 4, "conv2d input");
  detail::require_rank(ws, 4, "conv2d weight");
  const Index m = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const Index cout = ws[0], kk = ws[2];
  if (ws[1] != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, weight expects " +
                     std::to_string(ws[1]));
  }
  if (ws[3] != kk || kk % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd, got " + to_string(ws));
  if (bias.shape() != Shape{cout}) throw ShapeError("conv2d: bias shape " + to_string(bias.shape()));

  const Index plane = h * w;
  const Index patch = cin * kk * kk;
  using detail::Accum;
  Tensor<Scalar> out({m, cout, h, w});
  const MatR<Accum> wm = Eigen::Map<const MatR<Scalar>>(weight.value().data(), cout, patch).template cast<Accum>();
  const detail::VecX<Accum> bv =
      Eigen::Map<const detail::VecX<Scalar>>(bias.value().data(), cout).template cast<Accum>();
  MatR<Accum> cols(patch, plane);
  MatR<Accum> acc(cout, plane);
  for (Index n = 0; n < m; ++n) {
    detail::im2col(x.value().data() + n * cin * plane, cin, h, w, kk, cols.data());
    acc.noalias() = wm * cols;
    acc.colwise() += bv;
    Eigen::Map<MatR<Scalar>>(out.data() + n * cout * plane, cout, plane) = acc.template cast<Scalar>();
  }

  auto& g = detail::graph_of(x);
  return g.record(std::move(out), {x, weight, bias},
                  [x, weight, bias, m, cin, h, w, cout, kk, plane, patch](Graph<Scalar>& gr,
                                                                           const Tensor<Scalar>& gout) {
                    Eigen::Map<const MatR<Scalar>> wm(gr.value(weight).data(), cout, patch);
                    const bool need_x = gr.requires_grad(x);
                    const bool need_w = gr.requires_grad(weight);
                    const bool need_b = gr.requires_grad(bias);
                    MatR<Scalar> cols(patch, plane);
                    for (Index n = 0; n < m; ++n) {
                      Eigen::Map<const MatR<Scalar>> gm(gout.data() + n * cout * plane, cout, plane);
                      if (need_b) {
                        Eigen::Map<detail::VecX<Scalar>> gb(gr.grad_of(bias).data(), cout);
                        gb += gm.rowwise().sum();
                      }
                      if (need_w) {
                        detail::im2col(gr.value(x).data() + n * cin * plane, cin, h, w, kk, cols.data());
                        Eigen::Map<MatR<Scalar>> gw(gr.grad_of(weight).data(), cout, patch);
                        gw.noalias() += gm * cols.transpose();
                      }
                      if (need_x) {
                        cols.noalias() = wm.transpose() * gm;
                        detail::col2im_add(cols.data(), cin, h, w, kk, gr.grad_of(x).data() + n * cin * plane);
                      }
                    }
                  });
}

/// Transposed convolution with kernel == stride (non-overlapping), scaling h and w by the stride.
/// x: [m, c_in, h, w]; weight: [c_in, c_out, s, s]; bias: [c_out].
template <typename Scalar>
Var<Scalar> conv_transpose2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias) {
  using detail::MatR;
  detail::require_same_graph(x, weight);
  detail::require_same_graph(x, bias);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  detail::require_rank(xs, 4, "conv_transpose2d input");
  detail::require_rank(ws, 4, "conv_transpose2d weight");
  const Index m = xs[0], cin = xs[1], h = xs[2], w = xs[3];
  const Index cout = ws[1], s = ws[2];
  if (ws[0] != cin) {
    throw ShapeError("conv_transpose2d: input has " + std::to_string(cin) + " channels, weight expects " +
                     std::to_string(ws[0]));
  }
  if (ws[3] != s) throw ShapeError("conv_transpose2d: kernel must be square, got " + to_string(ws));
  if (bias.shape() != Shape{cout}) throw ShapeError("conv_transpose2d: bias shape " + to_string(bias.shape()));

  const Index plane = h * w;
  const Index oh = h * s, ow = w * s;
  const Index taps = cout * s * s;
  using detail::Accum;
  Tensor<Scalar> out({m, cout, oh, ow});
  const MatR<Accum> wm = Eigen::Map<const MatR<Scalar>>(weight.value().data(), cin, taps).template cast<Accum>();
  MatR<Accum> cols(taps, plane);
  const Scalar* bptr = bias.value().data();
  for (Index n = 0; n < m; ++n) {
    const MatR<Accum> xm =
        Eigen::Map<const MatR<Scalar>>(x.value().data() + n * cin * plane, cin, plane).template cast<Accum>();
    cols.noalias() = wm.transpose() * xm;
    Scalar* on = out.data() + n * cout * oh * ow;
    for (Index o = 0; o < cout; ++o) {
      const auto bo = static_cast<Accum>(bptr[o]);
      for (Index p = 0; p < s; ++p) {
        for (Index q = 0; q < s; ++q) {
          const Accum* row = cols.data() + ((o * s + p) * s + q) * plane;
          for (Index i = 0; i < h; ++i) {
            for (Index j = 0; j < w; ++j) {
              on[(o * oh + i * s + p) * ow + j * s + q] = static_cast<Scalar>(row[i * w + j] + bo);
            }
          }
        }
      }
    }
  }

  auto& g = detail::graph_of(x);
  return g.record(std::move(out), {x, weight, bias},
                  [x, weight, bias, m, cin, h, w, cout, s, plane, oh, ow, taps](Graph<Scalar>& gr,
                                                                                const Tensor<Scalar>& gout) {
                    Eigen::Map<const MatR<Scalar>> wm(gr.value(weight).data(), cin, taps);
                    const bool need_x = gr.requires_grad(x);
                    const bool need_w = gr.requires_grad(weight);
                    const bool need_b = gr.requires_grad(bias);
                    MatR<Scalar> gathered(taps, plane);
                    for (Index n = 0; n < m; ++n) {
                      const Scalar* gn = gout.data() + n * cout * oh * ow;
                      for (Index o = 0; o < cout; ++o) {
                        for (Index p = 0; p < s; ++p) {
                          for (Index q = 0; q < s; ++q) {
                            Scalar* row = gathered.data() + ((o * s + p) * s + q) * plane;
                            for (Index i = 0; i < h; ++i) {
                              for (Index j = 0; j < w; ++j) row[i * w + j] = gn[(o * oh + i * s + p) * ow + j * s + q];
                            }
                          }
                        }
                      }
                      if (need_b) {
                        Scalar* gb = gr.grad_of(bias).data();
                        for (Index o = 0; o < cout; ++o) {
                          Eigen::Map<const detail::VecX<Scalar>> plane_grad(gn + o * oh * ow, oh * ow);
                          gb[o] += plane_grad.sum();
                        }
                      }
                      Eigen::Map<const MatR<Scalar>> xm(gr.value(x).data() + n * cin * plane, cin, plane);
                      if (need_w) {
                        Eigen::Map<MatR<Scalar>> gw(gr.grad_of(weight).data(), cin, taps);
                        gw.noalias() += xm * gathered.transpose();
                      }
                      if (need_x) {
                        Eigen::Map<MatR<Scalar>> gx(gr.grad_of(x).data() + n * cin * plane, cin, plane);
                        gx.noalias() += wm * gathered;
                      }
                    }
                  });
}

/// Non-overlapping 2x2 max pooling. Ties route the gradient to the first element in
/// row-major block order.
template <typename Scalar>
Var<Scalar> maxpool2d(Var<Scalar> x) {
  const Shape& xs = x.shape();
  detail::require_rank(xs, 4, "maxpool2d");
  const Index m = xs[0], c = xs[1], h = xs[2], w = xs[3];
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("maxpool2d: odd spatial dimension " + to_string(xs));
  const Index oh = h / 2, ow = w / 2;
  Tensor<Scalar> out({m, c, oh, ow});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.size()));
  const Scalar* xd = x.value().data();
  for (Index nc = 0; nc < m * c; ++nc) {
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        Index best = (nc * h + 2 * i) * w + 2 * j;
        for (Index a = 0; a < 2; ++a) {
          for (Index b = 0; b < 2; ++b) {
            const Index idx = (nc * h + 2 * i + a) * w + 2 * j + b;
            if (xd[idx] > xd[best]) best = idx;
          }
        }
        const Index o = (nc * oh + i) * ow + j;
        out[o] = xd[best];
        (*argmax)[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  auto& g = detail::graph_of(x);
  return g.record(std::move(out), {x}, [x, argmax](Graph<Scalar>& gr, const Tensor<Scalar>& gout) {
    Tensor<Scalar>& gx = gr.grad_of(x);
    for (Index o = 0; o < gout.size(); ++o) gx[(*argmax)[static_cast<std::size_t>(o)]] += gout[o];
  });
}

/// Nearest-neighbour 2x spatial upsampling.
template <typename Scalar>
Var<Scalar> upsample_nearest2x(Var<Scalar> x) {
  const Shape& xs = x.shape();
  detail::require_rank(xs, 4, "upsample_nearest2x");
  const Index m = xs[0], c = xs[1], h = xs[2], w = xs[3];
  Tensor<Scalar> out({m, c, 2 * h, 2 * w});
  const Scalar* xd = x.value().data();
  for (Index nc = 0; nc < m * c; ++nc) {
    for (Index i = 0; i < 2 * h; ++i) {
      for (Index j = 0; j < 2 * w; ++j) out[(nc * 2 * h + i) * 2 * w + j] = xd[(nc * h + i / 2) * w + j / 2];
    }
  }
  auto& g = detail::graph_of(x);
  return g.record(std::move(out), {x}, [x, m, c, h, w](Graph<Scalar>& gr, const Tensor<Scalar>& gout) {
    Tensor<Scalar>& gx = gr.grad_of(x);
    for (Index nc = 0; nc < m * c; ++nc) {
      for (Index i = 0; i < 2 * h; ++i) {
        for (Index j = 0; j < 2 * w; ++j) gx[(nc * h + i / 2) * w + j / 2] += gout[(nc * 2 * h + i) * 2 * w + j];
      }
    }
  });
}

/// Batch normalization over (m, h, w) per channel. Train mode normalizes by batch
/// statistics and updates the running statistics; eval mode uses the running statistics.
template <typename Scalar>
Var<Scalar> batch_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, BatchNormState<Scalar> state, Mode mode) {
  detail::require_same_graph(x, gamma);
  detail::require_same_graph(x, beta);
  const Shape& xs = x.shape();
  detail::require_rank(xs, 4, "batch_norm");
  const Index m = xs[0], c = xs[1], plane = xs[2] * xs[3];
  const Index count = m * plane;
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("batch_norm: gamma/beta must have shape (" + std::to_string(c) + ")");
  }
  if (state.running_mean == nullptr || state.running_var == nullptr) {
    throw ContractError("batch_norm: missing running statistics");
  }
  if (state.running_mean->shape() != Shape{c} || state.running_var->shape() != Shape{c}) {
    throw ShapeError("batch_norm: running statistics shape mismatch");
  }
  const bool train = mode == Mode::kTrain;
  if (train && count < 2) throw ContractError("batch_norm: train mode needs at least 2 values per channel");

  const Scalar* xd = x.value().data();
  auto mean = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(c));
  auto inv_std = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(c));
  for (Index ch = 0; ch < c; ++ch) {
    double mu, var;
    if (train) {
      double acc = 0.0;
      for (Index n = 0; n < m; ++n) {
        const Scalar* p = xd + (n * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
      }
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (Index n = 0; n < m; ++n) {
        const Scalar* p = xd + (n * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) {
          const double d = static_cast<double>(p[i]) - mu;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      Scalar& rm = (*state.running_mean)[ch];
      Scalar& rv = (*state.running_var)[ch];
      const double unbiased = sq / static_cast<double>(count - 1);
      rm = static_cast<Scalar>(state.momentum * static_cast<double>(rm) + (1.0 - state.momentum) * mu);
      rv = static_cast<Scalar>(state.momentum * static_cast<double>(rv) + (1.0 - state.momentum) * unbiased);
    } else {
      mu = static_cast<double>((*state.running_mean)[ch]);
      var = static_cast<double>((*state.running_var)[ch]);
    }
    (*mean)[static_cast<std::size_t>(ch)] = static_cast<Scalar>(mu);
    (*inv_std)[static_cast<std::size_t>(ch)] = static_cast<Scalar>(1.0 / std::sqrt(var + state.eps));
  }

  Tensor<Scalar> out(xs);
  const Scalar* gd = gamma.value().data();
  const Scalar* bd = beta.value().data();
  for (Index n = 0; n < m; ++n) {
    for (Index ch = 0; ch < c; ++ch) {
      const Scalar mu = (*mean)[static_cast<std::size_t>(ch)];
      const Scalar is = (*inv_std)[static_cast<std::size_t>(ch)];
      const Scalar* p = xd + (n * c + ch) * plane;
      Scalar* o = out.data() + (n * c + ch) * plane;
      for (Index i = 0; i < plane; ++i) o[i] = gd[ch] * ((p[i] - mu) * is) + bd[ch];
    }
  }

  auto& g = detail::graph_of(x);
  return g.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, mean, inv_std, train, m, c, plane, count](Graph<Scalar>& gr,
                                                                              const Tensor<Scalar>& gout) {
                    const Scalar* xd = gr.value(x).data();
                    const Scalar* gd = gr.value(gamma).data();
                    const bool need_x = gr.requires_grad(x);
                    const bool need_g = gr.requires_grad(gamma);
                    const bool need_b = gr.requires_grad(beta);
                    for (Index ch = 0; ch < c; ++ch) {
                      const Scalar mu = (*mean)[static_cast<std::size_t>(ch)];
                      const Scalar is = (*inv_std)[static_cast<std::size_t>(ch)];
                      double sum_dy = 0.0, sum_dy_xhat = 0.0;
                      for (Index n = 0; n < m; ++n) {
                        const Scalar* p = xd + (n * c + ch) * plane;
                        const Scalar* dy = gout.data() + (n * c + ch) * plane;
                        for (Index i = 0; i < plane; ++i) {
                          sum_dy += static_cast<double>(dy[i]);
                          sum_dy_xhat += static_cast<double>(dy[i]) * static_cast<double>((p[i] - mu) * is);
                        }
                      }
                      if (need_g) gr.grad_of(gamma)[ch] += static_cast<Scalar>(sum_dy_xhat);
                      if (need_b) gr.grad_of(beta)[ch] += static_cast<Scalar>(sum_dy);
                      if (!need_x) continue;
                      Scalar* gx = gr.grad_of(x).data();
                      const Scalar scale = gd[ch] * is;
                      if (!train) {
                        for (Index n = 0; n < m; ++n) {
                          const Scalar* dy = gout.data() + (n * c + ch) * plane;
                          Scalar* gxp = gx + (n * c + ch) * plane;
                          for (Index i = 0; i < plane; ++i) gxp[i] += scale * dy[i];
                        }
                        continue;
                      }
                      const Scalar mean_dy = static_cast<Scalar>(sum_dy / static_cast<double>(count));
                      const Scalar mean_dy_xhat = static_cast<Scalar>(sum_dy_xhat / static_cast<double>(count));
                      for (Index n = 0; n < m; ++n) {
                        const Scalar* p = xd + (n * c + ch) * plane;
                        const Scalar* dy = gout.data() + (n * c + ch) * plane;
                        Scalar* gxp = gx + (n * c + ch) * plane;
                        for (Index i = 0; i < plane; ++i) {
                          const Scalar xhat = (p[i] - mu) * is;
                          gxp[i] += scale * (dy[i] - mean_dy - xhat * mean_dy_xhat);
                        }
                      }
                    }
                  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  return detail::unary(
      x, [](Scalar v) { return v > Scalar(0) ? v : Scalar(0); },
      [](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> x) {
  auto& g = detail::graph_of(x);
  const Tensor<Scalar>& xv = x.value();
  Tensor<Scalar> out(xv.shape());
  for (Index i = 0; i < xv.size(); ++i) out[i] = std::tanh(xv[i]);
  auto saved = std::make_shared<Tensor<Scalar>>(out);
  return g.record(std::move(out), {x}, [x, saved](Graph<Scalar>& gr, const Tensor<Scalar>& gout) {
    Tensor<Scalar>& gx = gr.grad_of(x);
    for (Index i = 0; i < gout.size(); ++i) {
      const Scalar y = (*saved)[i];
      gx[i] += gout[i] * (Scalar(1) - y * y);
    }
  });
}

template <typename Scalar>
Var<Scalar> abs(Var<Scalar> x) {
  return detail::unary(
      x, [](Scalar v) { return std::abs(v); },
      [](Scalar v) { return v > Scalar(0) ? Scalar(1) : (v < Scalar(0) ? Scalar(-1) : Scalar(0)); });
}

template <typename Scalar>
Var<Scalar> square(Var<Scalar> x) {
  return detail::unary(x, [](Scalar v) { return v * v; }, [](Scalar v) { return Scalar(2) * v; });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor) {
  return detail::unary(x, [factor](Scalar v) { return factor * v; }, [factor](Scalar) { return factor; });
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> x, Scalar offset) {
  return detail::unary(x, [offset](Scalar v) { return v + offset; }, [](Scalar) { return Scalar(1); });
}

/// Concatenates rank-4 tensors along the channel axis, preserving order.
template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts.front().shape();
  detail::require_rank(s0, 4, "concat_channels");
  Index channels = 0;
  for (const auto& p : parts) {
    detail::require_same_graph(parts.front(), p);
    const Shape& s = p.shape();
    detail::require_rank(s, 4, "concat_channels");
    if (s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw ShapeError("concat_channels: " + to_string(s) + " incompatible with " + to_string(s0));
    }
    channels += s[1];
  }
  const Index m = s0[0], plane = s0[2] * s0[3];
  Tensor<Scalar> out({m, channels, s0[2], s0[3]});
  for (Index n = 0; n < m; ++n) {
    Scalar* dst = out.data() + n * channels * plane;
    for (const auto& p : parts) {
      const Index block = p.dim(1) * plane;
      const Scalar* src = p.value().data() + n * block;
      std::copy(src, src + block, dst);
      dst += block;
    }
  }
  auto& g = detail::graph_of(parts.front());
  return g.record(std::move(out), parts, [parts, m, channels, plane](Graph<Scalar>& gr, const Tensor<Scalar>& gout) {
    Index offset = 0;
    for (const auto& p : parts) {
      const Index block = gr.value(p).dim(1) * plane;
      if (gr.requires_grad(p)) {
        Tensor<Scalar>& gp = gr.grad_of(p);
        for (Index n = 0; n < m; ++n) {
          const Scalar* src = gout.data() + n * channels * plane + offset;
          Scalar* dst = gp.data() + n * block;
          for (Index i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      offset += block;
    }
  });
}

/// Channel slice [start, start + count) of a rank-4 tensor.
template <typename Scalar>
Var<Scalar> slice_channels(Var<Scalar> x, Index start, Index count) {
  const Shape& xs = x.shape();
  detail::require_rank(xs, 4, "slice_channels");
  if (start < 0 || count <= 0 || start + count > xs[1]) {
    throw ShapeError("slice_channels: range out of bounds for " + to_string(xs));
  }
  const Index m = xs[0], c = xs[1], plane = xs[2] * xs[3];
  Tensor<Scalar> out({m, count, xs[2], xs[3]});
  for (Index n = 0; n < m; ++n) {
    const Scalar* src = x.value().data() + (n * c + start) * plane;
    std::copy(src, src + count * plane, out.data() + n * count * plane);
  }
  auto& g = detail::graph_of(x);
  return g.record(std::move(out), {x}, [x, m, c, start, count, plane](Graph<Scalar>& gr, const Tensor<Scalar>& gout) {
    Tensor<Scalar>& gx = gr.grad_of(x);
    for (Index n = 0; n < m; ++n) {
      const Scalar* src = gout.data() + n * count * plane;
      Scalar* dst = gx.data() + (n * c + start) * plane;
      for (Index i = 0; i < count * plane; ++i) dst[i] += src[i];
    }
  });
}

/// Flips the channel axis: output channel i is input channel c-1-i.
template <typename Scalar>
Var<Scalar> reverse_channels(Var<Scalar> x) {
  const Shape& xs = x.shape();
  detail::require_rank(xs, 4, "reverse_channels");
  const Index m = xs[0], c = xs[1], plane = xs[2] * xs[3];
  Tensor<Scalar> out(xs);
  for (Index n = 0; n < m; ++n) {
    for (Index ch = 0; ch < c; ++ch) {
      const Scalar* src = x.value().data() + (n * c + ch) * plane;
      std::copy(src, src + plane, out.data() + (n * c + (c - 1 - ch)) * plane);
    }
  }
  auto& g = detail::graph_of(x);
  return g.record(std::move(out), {x}, [x, m, c, plane](Graph<Scalar>& gr, const Tensor<Scalar>& gout) {
    Tensor<Scalar>& gx = gr.grad_of(x);
    for (Index n = 0; n < m; ++n) {
      for (Index ch = 0; ch < c; ++ch) {
        const Scalar* src = gout.data() + (n * c + (c - 1 - ch)) * plane;
        Scalar* dst = gx.data() + (n * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape) {
  Tensor<Scalar> out = x.value().reshaped(std::move(shape));
  auto& g = detail::graph_of(x);
  return g.record(std::move(out), {x}, [x](Graph<Scalar>& gr, const Tensor<Scalar>& gout) {
    gr.grad_of(x).array() += gout.array();
  });
}

namespace detail {

template <typename Scalar, typename Fwd, typename Back>
Var<Scalar> binary(Var<Scalar> a, Var<Scalar> b, const char* name, Fwd fwd, Back back) {
  require_same_graph(a, b);
  a.value().require_same_shape(b.value(), name);
  Tensor<Scalar> out(a.shape());
  const Tensor<Scalar>& av = a.value();
  const Tensor<Scalar>& bv = b.value();
  for (Index i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  auto& g = graph_of(a);
  return g.record(std::move(out), {a, b}, [a, b, back](Graph<Scalar>& gr, const Tensor<Scalar>& gout) {
    const Tensor<Scalar>& av = gr.value(a);
    const Tensor<Scalar>& bv = gr.value(b);
    const bool need_a = gr.requires_grad(a);
    const bool need_b = gr.requires_grad(b);
    Tensor<Scalar>* ga = need_a ? &gr.grad_of(a) : nullptr;
    Tensor<Scalar>* gb = need_b ? &gr.grad_of(b) : nullptr;
    for (Index i = 0; i < gout.size(); ++i) {
      Scalar da, db;
      back(av[i], bv[i], gout[i], da, db);
      if (ga) (*ga)[i] += da;
      if (gb) (*gb)[i] += db;
    }
  });
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  return detail::binary(
      a, b, "add", [](Scalar x, Scalar y) { return x + y; },
      [](Scalar, Scalar, Scalar g, Scalar& da, Scalar& db) { da = g; db = g; });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  return detail::binary(
      a, b, "sub", [](Scalar x, Scalar y) { return x - y; },
      [](Scalar, Scalar, Scalar g, Scalar& da, Scalar& db) { da = g; db = -g; });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  return detail::binary(
      a, b, "mul", [](Scalar x, Scalar y) { return x * y; },
      [](Scalar x, Scalar y, Scalar g, Scalar& da, Scalar& db) { da = g * y; db = g * x; });
}

template <typename Scalar>
Var<Scalar> div(Var<Scalar> a, Var<Scalar> b) {
  return detail::binary(
      a, b, "div", [](Scalar x, Scalar y) { return x / y; },
      [](Scalar x, Scalar y, Scalar g, Scalar& da, Scalar& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

/// Sum of all elements as a rank-0 tensor.
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  double acc = 0.0;
  for (Scalar v : x.value().span()) acc += static_cast<double>(v);
  auto& g = detail::graph_of(x);
  return g.record(Tensor<Scalar>::scalar(static_cast<Scalar>(acc)), {x},
                  [x](Graph<Scalar>& gr, const Tensor<Scalar>& gout) { gr.grad_of(x).array() += gout[0]; });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.value().size()));
}

/// Depthwise "valid" correlation of every (n, c) plane with a fixed K x K kernel.
template <typename Scalar>
Var<Scalar> filter2d_valid(Var<Scalar> x, const Tensor<Scalar>& kernel) {
  const Shape& xs = x.shape();
  detail::require_rank(xs, 4, "filter2d_valid");
  detail::require_rank(kernel.shape(), 2, "filter2d_valid kernel");
  const Index kh = kernel.dim(0), kw = kernel.dim(1);
  const Index h = xs[2], w = xs[3];
  if (h < kh || w < kw) throw ShapeError("filter2d_valid: image " + to_string(xs) + " smaller than window");
  const Index oh = h - kh + 1, ow = w - kw + 1, planes = xs[0] * xs[1];
  Tensor<Scalar> out({xs[0], xs[1], oh, ow});
  const Scalar* xd = x.value().data();
  const Scalar* kd = kernel.data();
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = xd + p * h * w;
    Scalar* dst = out.data() + p * oh * ow;
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        Scalar acc = 0;
        for (Index a = 0; a < kh; ++a) {
          const Scalar* row = src + (i + a) * w + j;
          const Scalar* krow = kd + a * kw;
          for (Index b = 0; b < kw; ++b) acc += krow[b] * row[b];
        }
        dst[i * ow + j] = acc;
      }
    }
  }
  auto saved_kernel = std::make_shared<Tensor<Scalar>>(kernel);
  auto& g = detail::graph_of(x);
  return g.record(std::move(out), {x},
                  [x, saved_kernel, planes, h, w, oh, ow, kh, kw](Graph<Scalar>& gr, const Tensor<Scalar>& gout) {
                    Scalar* gx = gr.grad_of(x).data();
                    const Scalar* kd = saved_kernel->data();
                    for (Index p = 0; p < planes; ++p) {
                      const Scalar* gsrc = gout.data() + p * oh * ow;
                      Scalar* dst = gx + p * h * w;
                      for (Index i = 0; i < oh; ++i) {
                        for (Index j = 0; j < ow; ++j) {
                          const Scalar gv = gsrc[i * ow + j];
                          for (Index a = 0; a < kh; ++a) {
                            Scalar* row = dst + (i + a) * w + j;
                            const Scalar* krow = kd + a * kw;
                            for (Index b = 0; b < kw; ++b) row[b] += krow[b] * gv;
                          }
                        }
                      }
                    }
                  });
}

}  // namespace wcell
