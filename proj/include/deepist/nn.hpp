#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "deepist/common.hpp"
#include "deepist/tensor.hpp"

namespace deepist {

enum class PoolMode { max, avg };
enum class Activation { relu, linear };

// ---------------------------------------------------------------------------
// 2D convolution, same padding, stride 1. Input H x W x C, kernels
// F x f x f x C, bias F, output H x W x F. Cross-correlation (no kernel
// flip), zero padding.
// ---------------------------------------------------------------------------

inline Tensor conv2d_same(const Tensor& input, const Tensor& kernels,
                          const Tensor& bias) {
  if (input.rank() != 3 || kernels.rank() != 4 || bias.rank() != 1 ||
      kernels.dim(3) != input.dim(2) || kernels.dim(0) != bias.dim(0) ||
      kernels.dim(1) != kernels.dim(2) || kernels.dim(1) % 2 == 0)
    throw ValidationError("conv2d_same: shape mismatch");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const std::size_t nf = kernels.dim(0), f = kernels.dim(1);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(f / 2);
  Tensor out({h, w, nf});
  const double* x = input.data.data();
  const double* kr = kernels.data.data();
  double* y = out.data.data();
  for (std::size_t oy = 0; oy < h; ++oy) {
    for (std::size_t ox = 0; ox < w; ++ox) {
      double* yrow = y + (oy * w + ox) * nf;
      for (std::size_t fi = 0; fi < nf; ++fi) yrow[fi] = bias[fi];
      for (std::size_t ky = 0; ky < f; ++ky) {
        const std::ptrdiff_t iy =
            static_cast<std::ptrdiff_t>(oy + ky) - half;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < f; ++kx) {
          const std::ptrdiff_t ix =
              static_cast<std::ptrdiff_t>(ox + kx) - half;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* xp = x + (iy * static_cast<std::ptrdiff_t>(w) + ix) * c;
          for (std::size_t fi = 0; fi < nf; ++fi) {
            const double* kp = kr + ((fi * f + ky) * f + kx) * c;
            double acc = 0.0;
            for (std::size_t ci = 0; ci < c; ++ci) acc += xp[ci] * kp[ci];
            yrow[fi] += acc;
          }
        }
      }
    }
  }
  return out;
}

/// Accumulates input/kernel/bias gradients for conv2d_same.
inline void conv2d_same_backward(const Tensor& input, const Tensor& kernels,
                                 const Tensor& grad_out, Tensor* grad_input,
                                 Tensor* grad_kernels, Tensor* grad_bias) {
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const std::size_t nf = kernels.dim(0), f = kernels.dim(1);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(f / 2);
  const double* x = input.data.data();
  const double* kr = kernels.data.data();
  const double* gy = grad_out.data.data();
  for (std::size_t oy = 0; oy < h; ++oy) {
    for (std::size_t ox = 0; ox < w; ++ox) {
      const double* gyrow = gy + (oy * w + ox) * nf;
      if (grad_bias) {
        for (std::size_t fi = 0; fi < nf; ++fi)
          grad_bias->data[fi] += gyrow[fi];
      }
      for (std::size_t ky = 0; ky < f; ++ky) {
        const std::ptrdiff_t iy =
            static_cast<std::ptrdiff_t>(oy + ky) - half;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < f; ++kx) {
          const std::ptrdiff_t ix =
              static_cast<std::ptrdiff_t>(ox + kx) - half;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const std::size_t xoff =
              (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) *
              c;
          const double* xp = x + xoff;
          for (std::size_t fi = 0; fi < nf; ++fi) {
            const double g = gyrow[fi];
            if (g == 0.0) continue;
            const std::size_t koff = ((fi * f + ky) * f + kx) * c;
            if (grad_kernels) {
              double* gk = grad_kernels->data.data() + koff;
              for (std::size_t ci = 0; ci < c; ++ci) gk[ci] += g * xp[ci];
            }
            if (grad_input) {
              const double* kp = kr + koff;
              double* gx = grad_input->data.data() + xoff;
              for (std::size_t ci = 0; ci < c; ++ci) gx[ci] += g * kp[ci];
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 2x2 stride-2 pooling, floor extents (trailing odd row/col dropped).
// ---------------------------------------------------------------------------

struct Pool2dCache {
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

inline Tensor pool2d(const Tensor& input, PoolMode mode,
                     Pool2dCache* cache = nullptr) {
  if (input.rank() != 3 || input.dim(0) < 2 || input.dim(1) < 2)
    throw ValidationError("pool2d: spatial extents must be >= 2");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({oh, ow, c});
  if (cache) cache->argmax.assign(oh * ow * c, 0);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        const std::size_t i00 = ((2 * oy) * w + 2 * ox) * c + ci;
        const std::size_t i01 = i00 + c;
        const std::size_t i10 = i00 + w * c;
        const std::size_t i11 = i10 + c;
        const std::size_t o = (oy * ow + ox) * c + ci;
        if (mode == PoolMode::max) {
          std::size_t best = i00;
          if (input.data[i01] > input.data[best]) best = i01;
          if (input.data[i10] > input.data[best]) best = i10;
          if (input.data[i11] > input.data[best]) best = i11;
          out.data[o] = input.data[best];
          if (cache) cache->argmax[o] = static_cast<std::uint32_t>(best);
        } else {
          out.data[o] = 0.25 * (input.data[i00] + input.data[i01] +
                                input.data[i10] + input.data[i11]);
        }
      }
    }
  }
  return out;
}

inline void pool2d_backward(const Tensor& input, PoolMode mode,
                            const Pool2dCache& cache, const Tensor& grad_out,
                            Tensor* grad_input) {
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  if (mode == PoolMode::max) {
    for (std::size_t o = 0; o < grad_out.size(); ++o)
      grad_input->data[cache.argmax[o]] += grad_out.data[o];
  } else {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        for (std::size_t ci = 0; ci < c; ++ci) {
          const double g = 0.25 * grad_out.data[(oy * ow + ox) * c + ci];
          const std::size_t i00 = ((2 * oy) * w + 2 * ox) * c + ci;
          grad_input->data[i00] += g;
          grad_input->data[i00 + c] += g;
          grad_input->data[i00 + w * c] += g;
          grad_input->data[i00 + w * c + c] += g;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 1D convolution over the sequence axis, same padding. Input L x C, kernels
// F x f x C, bias F, output L x F.
// ---------------------------------------------------------------------------

inline Tensor conv1d_same(const Tensor& input, const Tensor& kernels,
                          const Tensor& bias) {
  if (input.rank() != 2 || kernels.rank() != 3 ||
      kernels.dim(2) != input.dim(1) || kernels.dim(0) != bias.dim(0) ||
      kernels.dim(1) % 2 == 0)
    throw ValidationError("conv1d_same: shape mismatch");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t nf = kernels.dim(0), f = kernels.dim(1);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(f / 2);
  Tensor out({n, nf});
  for (std::size_t i = 0; i < n; ++i) {
    double* yrow = out.data.data() + i * nf;
    for (std::size_t fi = 0; fi < nf; ++fi) yrow[fi] = bias[fi];
    for (std::size_t kj = 0; kj < f; ++kj) {
      const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + kj) - half;
      if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(n)) continue;
      const double* xp = input.data.data() + static_cast<std::size_t>(ii) * c;
      for (std::size_t fi = 0; fi < nf; ++fi) {
        const double* kp = kernels.data.data() + (fi * f + kj) * c;
        double acc = 0.0;
        for (std::size_t ci = 0; ci < c; ++ci) acc += xp[ci] * kp[ci];
        yrow[fi] += acc;
      }
    }
  }
  return out;
}

inline void conv1d_same_backward(const Tensor& input, const Tensor& kernels,
                                 const Tensor& grad_out, Tensor* grad_input,
                                 Tensor* grad_kernels, Tensor* grad_bias) {
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t nf = kernels.dim(0), f = kernels.dim(1);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(f / 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double* gyrow = grad_out.data.data() + i * nf;
    if (grad_bias) {
      for (std::size_t fi = 0; fi < nf; ++fi) grad_bias->data[fi] += gyrow[fi];
    }
    for (std::size_t kj = 0; kj < f; ++kj) {
      const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + kj) - half;
      if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(n)) continue;
      const std::size_t xoff = static_cast<std::size_t>(ii) * c;
      for (std::size_t fi = 0; fi < nf; ++fi) {
        const double g = gyrow[fi];
        if (g == 0.0) continue;
        const std::size_t koff = (fi * f + kj) * c;
        if (grad_kernels) {
          double* gk = grad_kernels->data.data() + koff;
          const double* xp = input.data.data() + xoff;
          for (std::size_t ci = 0; ci < c; ++ci) gk[ci] += g * xp[ci];
        }
        if (grad_input) {
          double* gx = grad_input->data.data() + xoff;
          const double* kp = kernels.data.data() + koff;
          for (std::size_t ci = 0; ci < c; ++ci) gx[ci] += g * kp[ci];
        }
      }
    }
  }
}

struct Pool1dCache {
  std::vector<std::uint32_t> argmax;
};

/// Max pooling size 2 stride 2 over the sequence axis, floor extents.
inline Tensor pool1d_max(const Tensor& input, Pool1dCache* cache = nullptr) {
  if (input.rank() != 2 || input.dim(0) < 2)
    throw ValidationError("pool1d_max: sequence extent must be >= 2");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t on = n / 2;
  Tensor out({on, c});
  if (cache) cache->argmax.assign(on * c, 0);
  for (std::size_t i = 0; i < on; ++i) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const std::size_t a = (2 * i) * c + ci;
      const std::size_t b = a + c;
      const std::size_t best = input.data[b] > input.data[a] ? b : a;
      out.data[i * c + ci] = input.data[best];
      if (cache)
        cache->argmax[i * c + ci] = static_cast<std::uint32_t>(best);
    }
  }
  return out;
}

inline void pool1d_max_backward(const Pool1dCache& cache,
                                const Tensor& grad_out, Tensor* grad_input) {
  for (std::size_t o = 0; o < grad_out.size(); ++o)
    grad_input->data[cache.argmax[o]] += grad_out.data[o];
}

// ---------------------------------------------------------------------------
// Fully-connected layer: y = act(W x + b), W is out x in.
// ---------------------------------------------------------------------------

inline Tensor dense(const Tensor& input, const Tensor& weights,
                    const Tensor& bias, Activation act,
                    Tensor* preact = nullptr) {
  if (weights.rank() != 2 || weights.dim(1) != input.size() ||
      bias.size() != weights.dim(0))
    throw ValidationError("dense: shape mismatch");
  const std::size_t out_n = weights.dim(0), in_n = weights.dim(1);
  Tensor out({out_n});
  for (std::size_t o = 0; o < out_n; ++o) {
    const double* wrow = weights.data.data() + o * in_n;
    double acc = bias[o];
    for (std::size_t i = 0; i < in_n; ++i) acc += wrow[i] * input.data[i];
    out.data[o] = acc;
  }
  if (preact) *preact = out;
  if (act == Activation::relu) {
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  }
  return out;
}

inline void dense_backward(const Tensor& input, const Tensor& weights,
                           const Tensor& preact, Activation act,
                           const Tensor& grad_out, Tensor* grad_input,
                           Tensor* grad_weights, Tensor* grad_bias) {
  const std::size_t out_n = weights.dim(0), in_n = weights.dim(1);
  for (std::size_t o = 0; o < out_n; ++o) {
    double g = grad_out.data[o];
    if (act == Activation::relu && preact.data[o] <= 0.0) g = 0.0;
    if (g == 0.0) continue;
    if (grad_bias) grad_bias->data[o] += g;
    const double* wrow = weights.data.data() + o * in_n;
    if (grad_weights) {
      double* gw = grad_weights->data.data() + o * in_n;
      for (std::size_t i = 0; i < in_n; ++i) gw[i] += g * input.data[i];
    }
    if (grad_input) {
      for (std::size_t i = 0; i < in_n; ++i)
        grad_input->data[i] += g * wrow[i];
    }
  }
}

inline void relu_inplace(Tensor& t) {
  for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}

/// grad through relu given the pre-activation values.
inline void relu_backward_inplace(const Tensor& preact, Tensor& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (preact.data[i] <= 0.0) grad.data[i] = 0.0;
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling): training zeroes each element with probability
// `rate` and scales survivors by 1/(1-rate); inference is the identity.
// ---------------------------------------------------------------------------

struct DropoutMask {
  std::vector<float> scale;  // 0 or 1/(1-rate) per element; empty = identity
};

inline Tensor dropout(const Tensor& input, double rate, bool training,
                      std::uint64_t seed, DropoutMask* mask = nullptr) {
  if (rate < 0.0 || rate >= 1.0)
    throw ValidationError("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) {
    if (mask) mask->scale.clear();
    return input;
  }
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor out = input;
  if (mask) mask->scale.assign(input.size(), 0.0f);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (rng.next_double() < rate) {
      out.data[i] = 0.0;
    } else {
      out.data[i] *= keep_scale;
      if (mask) mask->scale[i] = static_cast<float>(keep_scale);
    }
  }
  return out;
}

inline void dropout_backward_inplace(const DropoutMask& mask, Tensor& grad) {
  if (mask.scale.empty()) return;
  for (std::size_t i = 0; i < grad.size(); ++i)
    grad.data[i] *= static_cast<double>(mask.scale[i]);
}

// ---------------------------------------------------------------------------
// Softmax and Shannon index.
// ---------------------------------------------------------------------------

inline std::vector<double> softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

/// H(p) = -sum p ln p with 0 ln 0 := 0.
inline double shannon_index(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

/// d H(softmax(z)) / dz_j = p_j * (-ln p_j - H).
inline std::vector<double> shannon_softmax_grad(const std::vector<double>& z) {
  const std::vector<double> p = softmax(z);
  const double h = shannon_index(p);
  std::vector<double> g(z.size());
  for (std::size_t j = 0; j < z.size(); ++j)
    g[j] = p[j] * (-std::log(p[j]) - h);
  return g;
}

// ---------------------------------------------------------------------------
// Adam.
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update from each parameter's accumulated
/// gradient. `t` is the 1-based step count.
inline void adam_step(std::vector<Parameter*>& params, const AdamConfig& cfg,
                      std::int64_t t) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad.data[i];
      double& m = p->adam_m.data[i];
      double& v = p->adam_v.data[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      p->value.data[i] -=
          cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.epsilon);
    }
  }
}

}  // namespace deepist
