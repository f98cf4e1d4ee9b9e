#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "flora/error.hpp"
#include "flora/rng.hpp"
#include "flora/tensor.hpp"

namespace flora {

namespace detail {

// Copies NxCxHxW into an NxCx(H+2p)x(W+2p) zero-padded buffer.
inline Tensor pad_nchw(const Tensor& x, int pad) {
  if (pad == 0) return x;
  const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  Tensor out({n, c, h + 2 * pad, w + 2 * pad});
  for (std::int64_t in = 0; in < n; ++in)
    for (std::int64_t ic = 0; ic < c; ++ic)
      for (std::int64_t ih = 0; ih < h; ++ih)
        std::copy_n(&x.data[x.idx4(in, ic, ih, 0)], w,
                    &out.data[out.idx4(in, ic, ih + pad, pad)]);
  return out;
}

inline Tensor crop_nchw(const Tensor& xpad, int pad, std::int64_t h, std::int64_t w) {
  if (pad == 0) return xpad;
  const std::int64_t n = xpad.shape[0], c = xpad.shape[1];
  Tensor out({n, c, h, w});
  for (std::int64_t in = 0; in < n; ++in)
    for (std::int64_t ic = 0; ic < c; ++ic)
      for (std::int64_t ih = 0; ih < h; ++ih)
        std::copy_n(&xpad.data[xpad.idx4(in, ic, ih + pad, pad)], w,
                    &out.data[out.idx4(in, ic, ih, 0)]);
  return out;
}

inline void require_4d(const Tensor& t, const char* what) {
  if (t.ndim() != 4) throw ShapeMismatch(std::string(what) + " must be 4-D, got " + shape_string(t));
}

// Stride-1 correlation over a pre-padded input, accumulated in registers.
// Walks output rows in chunks of up to 8 positions for a block of up to 4
// output channels at a time, so each padded-input row is loaded once per
// kernel tap instead of once per output channel, and the output plane is
// written exactly once. `bias` may be null (accumulators start at zero),
// which the gradient path uses to run input gradients through this kernel.
inline void conv2d_accumulate_s1(const Tensor& xpad, const Tensor& weights,
                                 const Tensor* bias, Tensor& out) {
  constexpr std::int64_t kOcTile = 4;
  constexpr std::int64_t kWTile = 8;
  const std::int64_t n = out.shape[0], cout = out.shape[1];
  const std::int64_t ho = out.shape[2], wo = out.shape[3];
  const std::int64_t cin = weights.shape[1], kh = weights.shape[2], kw = weights.shape[3];
  const std::int64_t wrow_len = cin * kh * kw;  // taps per output channel, contiguous
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t co0 = 0; co0 < cout; co0 += kOcTile) {
      const std::int64_t nc = std::min(kOcTile, cout - co0);
      const double* wbase = &weights.data[static_cast<std::size_t>(co0 * wrow_len)];
      for (std::int64_t oh = 0; oh < ho; ++oh) {
        for (std::int64_t x0 = 0; x0 < wo; x0 += kWTile) {
          const std::int64_t len = std::min(kWTile, wo - x0);
          double acc[kOcTile][kWTile] = {};
          const double* wtap = wbase;
          for (std::int64_t ci = 0; ci < cin; ++ci) {
            for (std::int64_t ikh = 0; ikh < kh; ++ikh) {
              const double* srow = &xpad.data[xpad.idx4(in, ci, oh + ikh, x0)];
              for (std::int64_t ikw = 0; ikw < kw; ++ikw, ++wtap) {
                const double* src = srow + ikw;
                if (nc == kOcTile && len == kWTile) {
                  const double w0 = wtap[0], w1 = wtap[wrow_len];
                  const double w2 = wtap[2 * wrow_len], w3 = wtap[3 * wrow_len];
                  for (std::int64_t j = 0; j < kWTile; ++j) {
                    const double sv = src[j];
                    acc[0][j] += w0 * sv;
                    acc[1][j] += w1 * sv;
                    acc[2][j] += w2 * sv;
                    acc[3][j] += w3 * sv;
                  }
                } else {
                  for (std::int64_t t = 0; t < nc; ++t) {
                    const double wv = wtap[t * wrow_len];
                    for (std::int64_t j = 0; j < len; ++j) acc[t][j] += wv * src[j];
                  }
                }
              }
            }
          }
          for (std::int64_t t = 0; t < nc; ++t) {
            const double bv = bias ? bias->data[static_cast<std::size_t>(co0 + t)] : 0.0;
            double* dst = &out.data[out.idx4(in, co0 + t, oh, x0)];
            for (std::int64_t j = 0; j < len; ++j) dst[j] = acc[t][j] + bv;
          }
        }
      }
    }
  }
}

}  // namespace detail

// Sliding-window dot product plus bias.
//   input   N x Cin x H x W
//   weights Cout x Cin x Kh x Kw
//   bias    Cout
//   output  N x Cout x H' x W',  H' = (H + 2*pad - Kh) / stride + 1
inline Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
                     int stride, int padding) {
  detail::require_4d(input, "conv2d input");
  detail::require_4d(weights, "conv2d weights");
  if (stride < 1) throw ShapeMismatch("conv2d stride must be >= 1");
  if (padding < 0) throw ShapeMismatch("conv2d padding must be >= 0");
  const std::int64_t n = input.shape[0], cin = input.shape[1];
  const std::int64_t h = input.shape[2], w = input.shape[3];
  const std::int64_t cout = weights.shape[0], kh = weights.shape[2], kw = weights.shape[3];
  if (weights.shape[1] != cin)
    throw ShapeMismatch("conv2d channel mismatch: input " + shape_string(input) +
                        " vs weights " + shape_string(weights));
  if (bias.ndim() != 1 || bias.shape[0] != cout)
    throw ShapeMismatch("conv2d bias must have one value per output channel");
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw ShapeMismatch("conv2d kernel larger than padded input");

  const std::int64_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::int64_t wo = (w + 2 * padding - kw) / stride + 1;
  const Tensor xpad = detail::pad_nchw(input, padding);

  Tensor out({n, cout, ho, wo});
  if (stride == 1) {
    detail::conv2d_accumulate_s1(xpad, weights, &bias, out);
    return out;
  }
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t co = 0; co < cout; ++co) {
      double* dst0 = &out.data[out.idx4(in, co, 0, 0)];
      const double bv = bias.data[static_cast<std::size_t>(co)];
      std::fill_n(dst0, ho * wo, bv);
      for (std::int64_t ci = 0; ci < cin; ++ci) {
        for (std::int64_t ikh = 0; ikh < kh; ++ikh) {
          for (std::int64_t ikw = 0; ikw < kw; ++ikw) {
            const double wv = weights.at4(co, ci, ikh, ikw);
            for (std::int64_t oh = 0; oh < ho; ++oh) {
              const double* src = &xpad.data[xpad.idx4(in, ci, oh * stride + ikh, ikw)];
              double* dst = dst0 + oh * wo;
              for (std::int64_t ow = 0; ow < wo; ++ow) dst[ow] += wv * src[ow * stride];
            }
          }
        }
      }
    }
  }
  return out;
}

struct Conv2dGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

inline Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                                   const Tensor& weights, int stride, int padding) {
  detail::require_4d(grad_out, "conv2d grad_out");
  detail::require_4d(input, "conv2d input");
  const std::int64_t n = input.shape[0], cin = input.shape[1];
  const std::int64_t h = input.shape[2], w = input.shape[3];
  const std::int64_t cout = weights.shape[0], kh = weights.shape[2], kw = weights.shape[3];
  const std::int64_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::int64_t wo = (w + 2 * padding - kw) / stride + 1;
  if (grad_out.shape != std::vector<std::int64_t>{n, cout, ho, wo})
    throw ShapeMismatch("conv2d grad_out shape inconsistent with forward call");

  const Tensor xpad = detail::pad_nchw(input, padding);
  const std::int64_t hp = xpad.shape[2], wp = xpad.shape[3];

  Conv2dGrads grads;
  grads.weights = zeros_like(weights);
  grads.bias = Tensor({cout});

  // Bias gradient: per-channel sum over the output-gradient planes.
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t co = 0; co < cout; ++co) {
      const double* g0 = &grad_out.data[grad_out.idx4(in, co, 0, 0)];
      double bsum = 0.0;
      for (std::int64_t i = 0; i < ho * wo; ++i) bsum += g0[i];
      grads.bias.data[static_cast<std::size_t>(co)] += bsum;
    }
  }

  // Weight gradient: each tap is a dot product between an output-gradient
  // plane and the correspondingly shifted padded-input plane. Blocks of four
  // output channels share one pass over the input rows, and each dot runs on
  // four independent partial sums so the FMA chains overlap.
  constexpr std::int64_t kOcTile = 4;
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t co0 = 0; co0 < cout; co0 += kOcTile) {
      const std::int64_t nc = std::min(kOcTile, cout - co0);
      for (std::int64_t ci = 0; ci < cin; ++ci) {
        for (std::int64_t ikh = 0; ikh < kh; ++ikh) {
          for (std::int64_t ikw = 0; ikw < kw; ++ikw) {
            double wsum[kOcTile] = {};
            for (std::int64_t oh = 0; oh < ho; ++oh) {
              const double* src = &xpad.data[xpad.idx4(in, ci, oh * stride + ikh, ikw)];
              for (std::int64_t t = 0; t < nc; ++t) {
                const double* g = &grad_out.data[grad_out.idx4(in, co0 + t, oh, 0)];
                double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                std::int64_t ow = 0;
                if (stride == 1) {
                  for (; ow + 4 <= wo; ow += 4) {
                    s0 += g[ow] * src[ow];
                    s1 += g[ow + 1] * src[ow + 1];
                    s2 += g[ow + 2] * src[ow + 2];
                    s3 += g[ow + 3] * src[ow + 3];
                  }
                }
                for (; ow < wo; ++ow) s0 += g[ow] * src[ow * stride];
                wsum[t] += (s0 + s1) + (s2 + s3);
              }
            }
            for (std::int64_t t = 0; t < nc; ++t)
              grads.weights.at4(co0 + t, ci, ikh, ikw) += wsum[t];
          }
        }
      }
    }
  }

  // Input gradient. For stride 1 it is itself a stride-1 correlation: pad the
  // output gradient by (K - 1 - padding) per axis and run it against the
  // kernel flipped in both spatial axes with the channel roles swapped, which
  // reuses the fast forward kernel. Other strides (or padding wider than the
  // kernel) fall back to scatter-accumulation over the padded input.
  if (stride == 1 && padding <= kh - 1 && padding <= kw - 1) {
    Tensor wflip({cin, cout, kh, kw});
    for (std::int64_t co = 0; co < cout; ++co)
      for (std::int64_t ci = 0; ci < cin; ++ci)
        for (std::int64_t ikh = 0; ikh < kh; ++ikh)
          for (std::int64_t ikw = 0; ikw < kw; ++ikw)
            wflip.at4(ci, co, kh - 1 - ikh, kw - 1 - ikw) = weights.at4(co, ci, ikh, ikw);
    const std::int64_t ph = kh - 1 - padding, pw = kw - 1 - padding;
    Tensor gpad;
    if (ph == 0 && pw == 0) {
      gpad = grad_out;
    } else {
      gpad = Tensor({n, cout, ho + 2 * ph, wo + 2 * pw});
      for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t co = 0; co < cout; ++co)
          for (std::int64_t oh = 0; oh < ho; ++oh)
            std::copy_n(&grad_out.data[grad_out.idx4(in, co, oh, 0)], wo,
                        &gpad.data[gpad.idx4(in, co, oh + ph, pw)]);
    }
    grads.input = Tensor({n, cin, h, w});
    detail::conv2d_accumulate_s1(gpad, wflip, nullptr, grads.input);
  } else {
    Tensor gxpad({n, cin, hp, wp});
    for (std::int64_t in = 0; in < n; ++in) {
      for (std::int64_t co = 0; co < cout; ++co) {
        const double* g0 = &grad_out.data[grad_out.idx4(in, co, 0, 0)];
        for (std::int64_t ci = 0; ci < cin; ++ci) {
          for (std::int64_t ikh = 0; ikh < kh; ++ikh) {
            for (std::int64_t ikw = 0; ikw < kw; ++ikw) {
              const double wv = weights.at4(co, ci, ikh, ikw);
              for (std::int64_t oh = 0; oh < ho; ++oh) {
                const double* g = g0 + oh * wo;
                double* gsrc = &gxpad.data[gxpad.idx4(in, ci, oh * stride + ikh, ikw)];
                for (std::int64_t ow = 0; ow < wo; ++ow) gsrc[ow * stride] += wv * g[ow];
              }
            }
          }
        }
      }
    }
    grads.input = detail::crop_nchw(gxpad, padding, h, w);
  }
  return grads;
}

struct MaxPoolResult {
  Tensor output;
  // flat (h * W + w) index into the input plane per output element;
  // ties resolve to the first maximum in row-major scan order
  std::vector<std::int64_t> argmax;
};

// Padding cells act as minus infinity: windows are clipped to the real
// plane, so the argmax always points at a real input position.
inline MaxPoolResult maxpool2d(const Tensor& input, int window, int stride,
                               int padding = 0) {
  detail::require_4d(input, "maxpool2d input");
  if (window < 1 || stride < 1) throw ShapeMismatch("maxpool2d window/stride must be >= 1");
  if (padding < 0 || padding >= window)
    throw ShapeMismatch("maxpool2d padding must be in [0, window)");
  const std::int64_t n = input.shape[0], c = input.shape[1];
  const std::int64_t h = input.shape[2], w = input.shape[3];
  if (window > h + 2 * padding || window > w + 2 * padding)
    throw ShapeMismatch("maxpool2d window exceeds input size " + shape_string(input));
  const std::int64_t ho = (h + 2 * padding - window) / stride + 1;
  const std::int64_t wo = (w + 2 * padding - window) / stride + 1;

  MaxPoolResult res;
  res.output = Tensor({n, c, ho, wo});
  res.argmax.resize(res.output.numel());
  std::size_t oi = 0;
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t ic = 0; ic < c; ++ic) {
      const double* plane = &input.data[input.idx4(in, ic, 0, 0)];
      for (std::int64_t oh = 0; oh < ho; ++oh) {
        for (std::int64_t ow = 0; ow < wo; ++ow, ++oi) {
          const std::int64_t h0 = std::max<std::int64_t>(0, oh * stride - padding);
          const std::int64_t h1 = std::min(h - 1, oh * stride - padding + window - 1);
          const std::int64_t w0 = std::max<std::int64_t>(0, ow * stride - padding);
          const std::int64_t w1 = std::min(w - 1, ow * stride - padding + window - 1);
          double best = plane[h0 * w + w0];
          std::int64_t best_idx = h0 * w + w0;
          for (std::int64_t ih = h0; ih <= h1; ++ih) {
            for (std::int64_t iw = w0; iw <= w1; ++iw) {
              const std::int64_t idx = ih * w + iw;
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          }
          res.output.data[oi] = best;
          res.argmax[oi] = best_idx;
        }
      }
    }
  }
  return res;
}

// Scatters grad_out back to the recorded argmax positions.
inline Tensor maxpool2d_backward(const Tensor& grad_out, const MaxPoolResult& saved,
                                 const std::vector<std::int64_t>& input_shape) {
  if (grad_out.shape != saved.output.shape)
    throw ShapeMismatch("maxpool2d grad_out shape inconsistent with forward call");
  Tensor gin(input_shape);
  const std::int64_t n = grad_out.shape[0], c = grad_out.shape[1];
  const std::int64_t plane_out = grad_out.shape[2] * grad_out.shape[3];
  const std::int64_t plane_in = input_shape[2] * input_shape[3];
  std::size_t oi = 0;
  for (std::int64_t in = 0; in < n; ++in)
    for (std::int64_t ic = 0; ic < c; ++ic) {
      double* gplane = &gin.data[static_cast<std::size_t>((in * c + ic) * plane_in)];
      for (std::int64_t i = 0; i < plane_out; ++i, ++oi)
        gplane[saved.argmax[oi]] += grad_out.data[oi];
    }
  return gin;
}

// Affine map per row: y = x * W^T + b.
//   input N x In, weights Out x In, bias Out -> N x Out
inline Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.ndim() != 2 || weights.ndim() != 2)
    throw ShapeMismatch("dense expects 2-D input and weights");
  const std::int64_t n = input.shape[0], in_dim = input.shape[1];
  const std::int64_t out_dim = weights.shape[0];
  if (weights.shape[1] != in_dim)
    throw ShapeMismatch("dense inner extents differ: input " + shape_string(input) +
                        " vs weights " + shape_string(weights));
  if (bias.ndim() != 1 || bias.shape[0] != out_dim)
    throw ShapeMismatch("dense bias must have one value per output unit");

  Tensor out({n, out_dim});
  for (std::int64_t r = 0; r < n; ++r) {
    const double* x = &input.data[input.idx2(r, 0)];
    double* y = &out.data[out.idx2(r, 0)];
    for (std::int64_t o = 0; o < out_dim; ++o) {
      const double* wrow = &weights.data[weights.idx2(o, 0)];
      double acc = bias.data[static_cast<std::size_t>(o)];
      for (std::int64_t i = 0; i < in_dim; ++i) acc += wrow[i] * x[i];
      y[o] = acc;
    }
  }
  return out;
}

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

inline DenseGrads dense_backward(const Tensor& grad_out, const Tensor& input,
                                 const Tensor& weights) {
  const std::int64_t n = input.shape[0], in_dim = input.shape[1];
  const std::int64_t out_dim = weights.shape[0];
  if (grad_out.shape != std::vector<std::int64_t>{n, out_dim})
    throw ShapeMismatch("dense grad_out shape inconsistent with forward call");

  DenseGrads grads;
  grads.input = Tensor({n, in_dim});
  grads.weights = zeros_like(weights);
  grads.bias = Tensor({out_dim});
  for (std::int64_t r = 0; r < n; ++r) {
    const double* g = &grad_out.data[grad_out.idx2(r, 0)];
    const double* x = &input.data[input.idx2(r, 0)];
    double* gx = &grads.input.data[grads.input.idx2(r, 0)];
    for (std::int64_t o = 0; o < out_dim; ++o) {
      const double gv = g[o];
      grads.bias.data[static_cast<std::size_t>(o)] += gv;
      const double* wrow = &weights.data[weights.idx2(o, 0)];
      double* gwrow = &grads.weights.data[grads.weights.idx2(o, 0)];
      for (std::int64_t i = 0; i < in_dim; ++i) {
        gx[i] += gv * wrow[i];
        gwrow[i] += gv * x[i];
      }
    }
  }
  return grads;
}

inline Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

// Gradient at exactly 0 is defined as 0.
inline Tensor relu_backward(const Tensor& grad_out, const Tensor& input) {
  if (!same_shape(grad_out, input))
    throw ShapeMismatch("relu grad_out shape differs from input");
  Tensor gin = grad_out;
  for (std::size_t i = 0; i < gin.data.size(); ++i)
    if (input.data[i] <= 0.0) gin.data[i] = 0.0;
  return gin;
}

// Row-wise exp(x - rowmax) / sum; rows sum to 1.
inline Tensor softmax(const Tensor& logits) {
  if (logits.ndim() != 2) throw ShapeMismatch("softmax expects an N x C tensor");
  const std::int64_t n = logits.shape[0], c = logits.shape[1];
  Tensor out({n, c});
  for (std::int64_t r = 0; r < n; ++r) {
    const double* x = &logits.data[logits.idx2(r, 0)];
    double* y = &out.data[out.idx2(r, 0)];
    double mx = x[0];
    for (std::int64_t i = 1; i < c; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (std::int64_t i = 0; i < c; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (std::int64_t i = 0; i < c; ++i) y[i] /= sum;
  }
  return out;
}

inline constexpr double kProbFloor = 1e-12;

// Mean over the batch of -ln(probability of the true class).
inline double cross_entropy(const Tensor& probs, const std::vector<std::int64_t>& labels) {
  if (probs.ndim() != 2) throw ShapeMismatch("cross_entropy expects an N x C tensor");
  const std::int64_t n = probs.shape[0], c = probs.shape[1];
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw ShapeMismatch("cross_entropy needs one label per row");
  double loss = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    const std::int64_t label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= c)
      throw LabelOutOfRange("label " + std::to_string(label) + " outside [0, " +
                            std::to_string(c) + ")");
    loss -= std::log(std::max(probs.at2(r, label), kProbFloor));
  }
  return loss / static_cast<double>(n);
}

struct SoftmaxCrossEntropy {
  double loss = 0.0;
  Tensor probs;
  Tensor grad_logits;  // (probs - onehot) / N
};

// Fused softmax + cross-entropy; numerically stable and exact-gradient.
inline SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits,
                                                 const std::vector<std::int64_t>& labels) {
  SoftmaxCrossEntropy res;
  res.probs = softmax(logits);
  res.loss = cross_entropy(res.probs, labels);
  res.grad_logits = res.probs;
  const std::int64_t n = logits.shape[0];
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::int64_t r = 0; r < n; ++r) {
    res.grad_logits.at2(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
  }
  for (auto& v : res.grad_logits.data) v *= inv_n;
  return res;
}

enum class DropoutMode { kTraining, kInference };

struct DropoutState {
  double ratio = 0.5;  // [0, 1)
  DropoutMode mode = DropoutMode::kInference;
  std::vector<std::uint8_t> mask;  // 1 = kept; recorded during training forward
};

// Inverted dropout: survivors are scaled by 1 / (1 - ratio) at training time
// so inference is an exact identity.
inline Tensor dropout(const Tensor& input, DropoutState& state, std::uint64_t rng_seed) {
  if (state.ratio < 0.0 || state.ratio >= 1.0)
    throw ShapeMismatch("dropout ratio must be in [0, 1)");
  if (state.mode == DropoutMode::kInference) return input;

  state.mask.assign(input.numel(), 1);
  Tensor out = input;
  const double scale = 1.0 / (1.0 - state.ratio);
  Rng rng(rng_seed);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (rng.next_double() < state.ratio) {
      state.mask[i] = 0;
      out.data[i] = 0.0;
    } else {
      out.data[i] *= scale;
    }
  }
  return out;
}

inline Tensor dropout_backward(const Tensor& grad_out, const DropoutState& state) {
  if (state.mode == DropoutMode::kInference) return grad_out;
  if (state.mask.size() != grad_out.numel())
    throw ShapeMismatch("dropout mask does not match grad_out");
  Tensor gin = grad_out;
  const double scale = 1.0 / (1.0 - state.ratio);
  for (std::size_t i = 0; i < gin.data.size(); ++i)
    gin.data[i] = state.mask[i] ? gin.data[i] * scale : 0.0;
  return gin;
}

// Channel-axis concatenation of NxCixHxW tensors, in argument order.
inline Tensor concat_channels(std::span<const Tensor> inputs) {
  if (inputs.empty()) throw ShapeMismatch("concat_channels needs at least one input");
  for (const auto& t : inputs) detail::require_4d(t, "concat_channels input");
  const std::int64_t n = inputs[0].shape[0];
  const std::int64_t h = inputs[0].shape[2], w = inputs[0].shape[3];
  std::int64_t total_c = 0;
  for (const auto& t : inputs) {
    if (t.shape[0] != n || t.shape[2] != h || t.shape[3] != w)
      throw ShapeMismatch("concat_channels inputs must share N, H, W");
    total_c += t.shape[1];
  }
  Tensor out({n, total_c, h, w});
  const std::int64_t plane = h * w;
  for (std::int64_t in = 0; in < n; ++in) {
    std::int64_t co = 0;
    for (const auto& t : inputs) {
      std::copy_n(&t.data[t.idx4(in, 0, 0, 0)], t.shape[1] * plane,
                  &out.data[out.idx4(in, co, 0, 0)]);
      co += t.shape[1];
    }
  }
  return out;
}

// Splits grad_out back into the original channel ranges.
inline std::vector<Tensor> concat_channels_backward(
    const Tensor& grad_out, const std::vector<std::int64_t>& channel_counts) {
  detail::require_4d(grad_out, "concat grad_out");
  std::int64_t total_c = 0;
  for (auto c : channel_counts) total_c += c;
  if (grad_out.shape[1] != total_c)
    throw ShapeMismatch("concat grad_out channels do not match the split");
  const std::int64_t n = grad_out.shape[0], h = grad_out.shape[2], w = grad_out.shape[3];
  const std::int64_t plane = h * w;
  std::vector<Tensor> grads;
  grads.reserve(channel_counts.size());
  std::int64_t co = 0;
  for (auto c : channel_counts) {
    Tensor g({n, c, h, w});
    for (std::int64_t in = 0; in < n; ++in)
      std::copy_n(&grad_out.data[grad_out.idx4(in, co, 0, 0)], c * plane,
                  &g.data[g.idx4(in, 0, 0, 0)]);
    grads.push_back(std::move(g));
    co += c;
  }
  return grads;
}

}  // namespace flora
