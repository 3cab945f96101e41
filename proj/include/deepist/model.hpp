#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepist/common.hpp"
#include "deepist/geo.hpp"
#include "deepist/nn.hpp"
#include "deepist/raster.hpp"
#include "deepist/tensor.hpp"
#include "deepist/traffic.hpp"

namespace deepist {

struct PathCNNConfig {
  int layers = 4;                                // M
  std::vector<int> filters = {16, 32, 64, 128};  // c_2D per layer
  int kernel = 3;                                // f_2D
  int lambda = 1024;                             // spatial feature dimension
  double dropout_rate = 0.5;
};

struct TemporalConfig {
  int layers = 2;                       // N
  std::vector<int> filters = {1024, 1024};
  int kernel = 3;                       // f_1D
  int s_max = 50;
  std::vector<int> head_dims = {1024, 1024, 1};  // r stacked dense layers
};

struct LossConfig {
  double beta = 0.6;
  double gamma1 = 0.1;
  double gamma2 = 0.1;
  double gamma3 = 0.01;
};

struct ConvParams {
  Parameter w;
  Parameter b;
};

struct DenseParams {
  Parameter w;
  Parameter b;
};

struct MaxAvgParams {
  ConvParams max_branch;
  ConvParams avg_branch;
};

/// All learnable parameters of the spatial layer, the temporal layer and the
/// sub-path heads, plus the Adam step counter.
struct ModelState {
  int k = 0;
  int d = 0;
  PathCNNConfig spatial_cfg;
  TemporalConfig temporal_cfg;

  std::vector<MaxAvgParams> spatial_layers;
  DenseParams spatial_fc;                 // flatten -> lambda
  std::vector<ConvParams> temporal_convs;
  std::vector<DenseParams> temporal_fcs;  // flatten -> head_dims...
  DenseParams head_fc1;                   // lambda -> lambda
  DenseParams head_fc2;                   // lambda -> 1

  int spatial_flat = 0;
  int spatial_out_extent = 0;  // spatial grid size after the last pooling
  int temporal_flat = 0;
  std::int64_t adam_t = 0;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> ps;
    for (auto& l : spatial_layers) {
      ps.push_back(&l.max_branch.w);
      ps.push_back(&l.max_branch.b);
      ps.push_back(&l.avg_branch.w);
      ps.push_back(&l.avg_branch.b);
    }
    ps.push_back(&spatial_fc.w);
    ps.push_back(&spatial_fc.b);
    for (auto& c : temporal_convs) {
      ps.push_back(&c.w);
      ps.push_back(&c.b);
    }
    for (auto& f : temporal_fcs) {
      ps.push_back(&f.w);
      ps.push_back(&f.b);
    }
    ps.push_back(&head_fc1.w);
    ps.push_back(&head_fc1.b);
    ps.push_back(&head_fc2.w);
    ps.push_back(&head_fc2.b);
    return ps;
  }
};

/// Builds and initializes a model for k x k x d images. Verifies the extent
/// chain and the flatten identity 2 * c_M * floor(k / 2^M)^2 at build time.
inline ModelState make_model(int k, int d, const PathCNNConfig& spatial,
                             const TemporalConfig& temporal,
                             std::uint64_t seed) {
  if (spatial.layers < 1 ||
      spatial.filters.size() != static_cast<std::size_t>(spatial.layers))
    throw ValidationError("pathcnn: |filters| must equal the layer count");
  if (temporal.filters.size() != static_cast<std::size_t>(temporal.layers))
    throw ValidationError("temporal: |filters| must equal the layer count");
  if (temporal.head_dims.empty() || temporal.head_dims.back() != 1)
    throw ValidationError("temporal: head_dims must end with 1");
  if (spatial.kernel % 2 == 0 || temporal.kernel % 2 == 0)
    throw ValidationError("convolution size must be odd");

  ModelState m;
  m.k = k;
  m.d = d;
  m.spatial_cfg = spatial;
  m.temporal_cfg = temporal;
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));

  const int f = spatial.kernel;
  int extent = k;
  int channels = d;
  for (int layer = 0; layer < spatial.layers; ++layer) {
    if (extent < 2)
      throw ValidationError("pathcnn: image too small for " +
                            std::to_string(spatial.layers) + " layers");
    const int c_out = spatial.filters[layer];
    const std::string tag = "spatial.l" + std::to_string(layer);
    MaxAvgParams lp;
    lp.max_branch.w = Parameter(
        tag + ".max.w",
        {static_cast<std::size_t>(c_out), static_cast<std::size_t>(f),
         static_cast<std::size_t>(f), static_cast<std::size_t>(channels)});
    lp.max_branch.b =
        Parameter(tag + ".max.b", {static_cast<std::size_t>(c_out)});
    lp.avg_branch.w = Parameter(tag + ".avg.w", lp.max_branch.w.value.shape);
    lp.avg_branch.b =
        Parameter(tag + ".avg.b", {static_cast<std::size_t>(c_out)});
    const std::size_t fan_in =
        static_cast<std::size_t>(f) * f * static_cast<std::size_t>(channels);
    kaiming_uniform(lp.max_branch.w.value, fan_in, rng);
    kaiming_uniform(lp.avg_branch.w.value, fan_in, rng);
    m.spatial_layers.push_back(std::move(lp));
    extent /= 2;
    channels = 2 * c_out;
  }
  m.spatial_out_extent = extent;
  m.spatial_flat = extent * extent * channels;
  {
    // floor(k / 2^M) equals M successive halvings.
    const int expected_extent = k >> spatial.layers;
    const int expected_flat =
        2 * spatial.filters.back() * expected_extent * expected_extent;
    if (m.spatial_flat != expected_flat)
      throw ValidationError("pathcnn flatten dimension mismatch");
  }
  m.spatial_fc.w = Parameter("spatial.fc.w",
                             {static_cast<std::size_t>(spatial.lambda),
                              static_cast<std::size_t>(m.spatial_flat)});
  m.spatial_fc.b =
      Parameter("spatial.fc.b", {static_cast<std::size_t>(spatial.lambda)});
  kaiming_uniform(m.spatial_fc.w.value,
                  static_cast<std::size_t>(m.spatial_flat), rng);

  int seq = temporal.s_max;
  int seq_channels = spatial.lambda;
  for (int layer = 0; layer < temporal.layers; ++layer) {
    if (seq < 2)
      throw ValidationError("temporal: sequence too short for " +
                            std::to_string(temporal.layers) + " layers");
    const int c_out = temporal.filters[layer];
    const std::string tag = "temporal.l" + std::to_string(layer);
    ConvParams cp;
    cp.w = Parameter(tag + ".w", {static_cast<std::size_t>(c_out),
                                  static_cast<std::size_t>(temporal.kernel),
                                  static_cast<std::size_t>(seq_channels)});
    cp.b = Parameter(tag + ".b", {static_cast<std::size_t>(c_out)});
    kaiming_uniform(cp.w.value,
                    static_cast<std::size_t>(temporal.kernel) * seq_channels,
                    rng);
    m.temporal_convs.push_back(std::move(cp));
    seq /= 2;
    seq_channels = c_out;
  }
  m.temporal_flat = seq * seq_channels;

  int in_dim = m.temporal_flat;
  for (std::size_t i = 0; i < temporal.head_dims.size(); ++i) {
    const int out_dim = temporal.head_dims[i];
    DenseParams fp;
    fp.w = Parameter("temporal.fc" + std::to_string(i) + ".w",
                     {static_cast<std::size_t>(out_dim),
                      static_cast<std::size_t>(in_dim)});
    fp.b = Parameter("temporal.fc" + std::to_string(i) + ".b",
                     {static_cast<std::size_t>(out_dim)});
    kaiming_uniform(fp.w.value, static_cast<std::size_t>(in_dim), rng);
    m.temporal_fcs.push_back(std::move(fp));
    in_dim = out_dim;
  }

  m.head_fc1.w = Parameter("head.fc1.w",
                           {static_cast<std::size_t>(spatial.lambda),
                            static_cast<std::size_t>(spatial.lambda)});
  m.head_fc1.b =
      Parameter("head.fc1.b", {static_cast<std::size_t>(spatial.lambda)});
  m.head_fc2.w =
      Parameter("head.fc2.w", {1, static_cast<std::size_t>(spatial.lambda)});
  m.head_fc2.b = Parameter("head.fc2.b", {1});
  kaiming_uniform(m.head_fc1.w.value,
                  static_cast<std::size_t>(spatial.lambda), rng);
  kaiming_uniform(m.head_fc2.w.value,
                  static_cast<std::size_t>(spatial.lambda), rng);
  return m;
}

/// Accumulation target for backward passes. Buffered sinks let concurrent
/// workers collect gradients privately before an ordered reduction into the
/// parameters' own grad tensors.
class GradSink {
public:
  /// Direct sink: gradients accumulate straight into Parameter::grad.
  GradSink() = default;

  /// Buffered sink over the given registry.
  explicit GradSink(const std::vector<Parameter*>& params) {
    buffers_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      index_[params[i]] = i;
      buffers_.emplace_back(params[i]->value.shape);
    }
  }

  Tensor* of(Parameter& p) {
    if (buffers_.empty()) return &p.grad;
    return &buffers_[index_.at(&p)];
  }

  /// Adds buffered gradients into Parameter::grad, in registry order.
  void reduce_into(const std::vector<Parameter*>& params) {
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i]->grad += buffers_[i];
  }

private:
  std::vector<Tensor> buffers_;
  std::unordered_map<const Parameter*, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// max+avg layer: two parallel convolutions, one max-pooled and one
// average-pooled, channel-concatenated.
// ---------------------------------------------------------------------------

struct MaxAvgCache {
  Tensor input;
  Tensor pre_max;
  Tensor pre_avg;
  Pool2dCache pool_max;
};

inline Tensor maxavg_forward(const Tensor& x, const MaxAvgParams& lp,
                             MaxAvgCache* cache = nullptr) {
  Tensor pre_max = conv2d_same(x, lp.max_branch.w.value, lp.max_branch.b.value);
  Tensor pre_avg = conv2d_same(x, lp.avg_branch.w.value, lp.avg_branch.b.value);
  Tensor act_max = pre_max;
  Tensor act_avg = pre_avg;
  relu_inplace(act_max);
  relu_inplace(act_avg);
  Pool2dCache pool_max;
  Tensor pooled_max = pool2d(act_max, PoolMode::max, &pool_max);
  Tensor pooled_avg = pool2d(act_avg, PoolMode::avg);
  const std::size_t oh = pooled_max.dim(0), ow = pooled_max.dim(1);
  const std::size_t c = pooled_max.dim(2);
  Tensor out({oh, ow, 2 * c});
  for (std::size_t i = 0; i < oh * ow; ++i) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      out.data[i * 2 * c + ci] = pooled_max.data[i * c + ci];
      out.data[i * 2 * c + c + ci] = pooled_avg.data[i * c + ci];
    }
  }
  if (cache) {
    cache->input = x;
    cache->pre_max = std::move(pre_max);
    cache->pre_avg = std::move(pre_avg);
    cache->pool_max = std::move(pool_max);
  }
  return out;
}

/// Accumulates parameter gradients into `sink`; adds the gradient w.r.t. the
/// layer input into `grad_in` when non-null.
inline void maxavg_backward(MaxAvgParams& lp, const MaxAvgCache& cache,
                            const Tensor& grad_out, Tensor* grad_in,
                            GradSink& sink) {
  const std::size_t oh = grad_out.dim(0), ow = grad_out.dim(1);
  const std::size_t c = grad_out.dim(2) / 2;
  Tensor gmax({oh, ow, c});
  Tensor gavg({oh, ow, c});
  for (std::size_t i = 0; i < oh * ow; ++i) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      gmax.data[i * c + ci] = grad_out.data[i * 2 * c + ci];
      gavg.data[i * c + ci] = grad_out.data[i * 2 * c + c + ci];
    }
  }
  Tensor g_act_max(cache.pre_max.shape);
  pool2d_backward(cache.pre_max, PoolMode::max, cache.pool_max, gmax,
                  &g_act_max);
  relu_backward_inplace(cache.pre_max, g_act_max);
  Tensor g_act_avg(cache.pre_avg.shape);
  pool2d_backward(cache.pre_avg, PoolMode::avg, {}, gavg, &g_act_avg);
  relu_backward_inplace(cache.pre_avg, g_act_avg);
  conv2d_same_backward(cache.input, lp.max_branch.w.value, g_act_max, grad_in,
                       sink.of(lp.max_branch.w), sink.of(lp.max_branch.b));
  conv2d_same_backward(cache.input, lp.avg_branch.w.value, g_act_avg, grad_in,
                       sink.of(lp.avg_branch.w), sink.of(lp.avg_branch.b));
}

// ---------------------------------------------------------------------------
// PathCNN: M max+avg layers, flatten, dense to lambda with ReLU and dropout.
// ---------------------------------------------------------------------------

struct PathCnnCache {
  std::vector<MaxAvgCache> layers;
  Tensor flat;
  Tensor fc_pre;
  DropoutMask fc_mask;
};

inline Tensor pathcnn_forward(const Tensor& image, const ModelState& m,
                              bool training, std::uint64_t dropout_seed,
                              PathCnnCache* cache = nullptr) {
  if (image.rank() != 3 ||
      image.dim(0) != static_cast<std::size_t>(m.k) ||
      image.dim(1) != static_cast<std::size_t>(m.k) ||
      image.dim(2) != static_cast<std::size_t>(m.d))
    throw ValidationError("pathcnn: image shape does not match the model");
  if (cache) cache->layers.resize(m.spatial_layers.size());
  Tensor x = image;
  for (std::size_t l = 0; l < m.spatial_layers.size(); ++l)
    x = maxavg_forward(x, m.spatial_layers[l],
                       cache ? &cache->layers[l] : nullptr);
  x.shape = {x.size()};
  if (cache) cache->flat = x;
  Tensor out = dense(x, m.spatial_fc.w.value, m.spatial_fc.b.value,
                     Activation::relu, cache ? &cache->fc_pre : nullptr);
  DropoutMask mask;
  out = dropout(out, m.spatial_cfg.dropout_rate, training, dropout_seed,
                cache ? &cache->fc_mask : &mask);
  return out;
}

inline void pathcnn_backward(ModelState& m, const PathCnnCache& cache,
                             const Tensor& grad_lambda, GradSink& sink) {
  Tensor g = grad_lambda;
  dropout_backward_inplace(cache.fc_mask, g);
  Tensor g_flat(cache.flat.shape);
  dense_backward(cache.flat, m.spatial_fc.w.value, cache.fc_pre,
                 Activation::relu, g, &g_flat, sink.of(m.spatial_fc.w),
                 sink.of(m.spatial_fc.b));
  // Un-flatten to the last layer's pooled output shape.
  const std::size_t layers = m.spatial_layers.size();
  const std::size_t ext = static_cast<std::size_t>(m.spatial_out_extent);
  g_flat.shape = {ext, ext, g_flat.size() / (ext * ext)};
  Tensor g_out = std::move(g_flat);
  for (std::size_t l = layers; l-- > 0;) {
    Tensor g_in(cache.layers[l].input.shape);
    maxavg_backward(m.spatial_layers[l], cache.layers[l], g_out,
                    l > 0 ? &g_in : nullptr, sink);
    g_out = std::move(g_in);
  }
}

// ---------------------------------------------------------------------------
// Spatial pattern sequence: one PathCNN vector per window, stacked into an
// S_max x lambda matrix, truncated or zero-padded.
// ---------------------------------------------------------------------------

inline Tensor assemble_sequence(const std::vector<Tensor>& rows,
                                int s_max, int lambda) {
  Tensor s({static_cast<std::size_t>(s_max),
            static_cast<std::size_t>(lambda)});
  const std::size_t n =
      std::min<std::size_t>(rows.size(), static_cast<std::size_t>(s_max));
  for (std::size_t i = 0; i < n; ++i)
    std::copy(rows[i].data.begin(), rows[i].data.end(),
              s.data.begin() + i * static_cast<std::size_t>(lambda));
  return s;
}

// ---------------------------------------------------------------------------
// Temporal layer: N conv1d+relu+maxpool blocks, flatten, r dense layers
// (ReLU plus dropout except the final linear output).
// ---------------------------------------------------------------------------

struct TemporalCache {
  std::vector<Tensor> conv_inputs;
  std::vector<Tensor> conv_pres;
  std::vector<Pool1dCache> pools;
  std::vector<Tensor> fc_inputs;
  std::vector<Tensor> fc_pres;
  std::vector<DropoutMask> fc_masks;
};

inline double temporal_forward(const Tensor& s, const ModelState& m,
                               bool training, std::uint64_t dropout_seed,
                               TemporalCache* cache = nullptr) {
  if (s.rank() != 2 ||
      s.dim(0) != static_cast<std::size_t>(m.temporal_cfg.s_max) ||
      s.dim(1) != static_cast<std::size_t>(m.spatial_cfg.lambda))
    throw ValidationError("temporal: sequence shape does not match the model");
  const std::size_t n_convs = m.temporal_convs.size();
  const std::size_t n_fcs = m.temporal_fcs.size();
  if (cache) {
    cache->conv_inputs.resize(n_convs);
    cache->conv_pres.resize(n_convs);
    cache->pools.resize(n_convs);
    cache->fc_inputs.resize(n_fcs);
    cache->fc_pres.resize(n_fcs);
    cache->fc_masks.assign(n_fcs, {});
  }
  Tensor x = s;
  for (std::size_t l = 0; l < n_convs; ++l) {
    if (cache) cache->conv_inputs[l] = x;
    Tensor pre =
        conv1d_same(x, m.temporal_convs[l].w.value, m.temporal_convs[l].b.value);
    Tensor act = pre;
    relu_inplace(act);
    x = pool1d_max(act, cache ? &cache->pools[l] : nullptr);
    if (cache) cache->conv_pres[l] = std::move(pre);
  }
  x.shape = {x.size()};
  for (std::size_t l = 0; l < n_fcs; ++l) {
    const bool last = l + 1 == n_fcs;
    if (cache) cache->fc_inputs[l] = x;
    x = dense(x, m.temporal_fcs[l].w.value, m.temporal_fcs[l].b.value,
              last ? Activation::linear : Activation::relu,
              cache ? &cache->fc_pres[l] : nullptr);
    if (!last) {
      DropoutMask scratch;
      x = dropout(x, m.spatial_cfg.dropout_rate, training,
                  mix_seed(dropout_seed, 0x7463ULL, l),
                  cache ? &cache->fc_masks[l] : &scratch);
    }
  }
  return x.data[0];
}

/// Backward of the temporal stack. Adds d/dS into `grad_s` when non-null.
inline void temporal_backward(ModelState& m, const TemporalCache& cache,
                              double grad_estimate, Tensor* grad_s,
                              GradSink& sink) {
  const std::size_t n_fcs = m.temporal_fcs.size();
  Tensor g({1});
  g.data[0] = grad_estimate;
  for (std::size_t l = n_fcs; l-- > 0;) {
    const bool last = l + 1 == n_fcs;
    if (!last) dropout_backward_inplace(cache.fc_masks[l], g);
    Tensor g_in(cache.fc_inputs[l].shape);
    dense_backward(cache.fc_inputs[l], m.temporal_fcs[l].w.value,
                   cache.fc_pres[l], last ? Activation::linear : Activation::relu,
                   g, &g_in, sink.of(m.temporal_fcs[l].w),
                   sink.of(m.temporal_fcs[l].b));
    g = std::move(g_in);
  }
  const std::size_t n_convs = m.temporal_convs.size();
  for (std::size_t l = n_convs; l-- > 0;) {
    const Tensor& pre = cache.conv_pres[l];
    g.shape = {pre.dim(0) / 2, pre.dim(1)};
    Tensor g_act(pre.shape);
    pool1d_max_backward(cache.pools[l], g, &g_act);
    relu_backward_inplace(pre, g_act);
    Tensor g_in(cache.conv_inputs[l].shape);
    conv1d_same_backward(cache.conv_inputs[l], m.temporal_convs[l].w.value,
                         g_act, &g_in, sink.of(m.temporal_convs[l].w),
                         sink.of(m.temporal_convs[l].b));
    g = std::move(g_in);
  }
  if (grad_s) *grad_s += g;
}

// ---------------------------------------------------------------------------
// Sub-path heads: a shared two-layer dense head (lambda -> lambda -> 1)
// mapping each non-padding sequence row to a travel-time estimate.
// ---------------------------------------------------------------------------

struct HeadsCache {
  std::vector<Tensor> inputs;
  std::vector<Tensor> pre1;
  std::vector<Tensor> post1;
};

inline std::vector<double> subpath_heads_forward(const Tensor& s, int n_rows,
                                                 const ModelState& m,
                                                 HeadsCache* cache = nullptr) {
  const int lambda = m.spatial_cfg.lambda;
  if (n_rows > m.temporal_cfg.s_max)
    throw ValidationError("subpath_heads: more rows than S_max");
  std::vector<double> estimates(static_cast<std::size_t>(n_rows));
  if (cache) {
    cache->inputs.resize(estimates.size());
    cache->pre1.resize(estimates.size());
    cache->post1.resize(estimates.size());
  }
  for (int i = 0; i < n_rows; ++i) {
    Tensor row({static_cast<std::size_t>(lambda)});
    std::copy_n(s.data.begin() + static_cast<std::size_t>(i) * lambda, lambda,
                row.data.begin());
    Tensor pre1;
    Tensor h = dense(row, m.head_fc1.w.value, m.head_fc1.b.value,
                     Activation::relu, &pre1);
    Tensor out = dense(h, m.head_fc2.w.value, m.head_fc2.b.value,
                       Activation::linear);
    estimates[static_cast<std::size_t>(i)] = out.data[0];
    if (cache) {
      cache->inputs[static_cast<std::size_t>(i)] = std::move(row);
      cache->pre1[static_cast<std::size_t>(i)] = std::move(pre1);
      cache->post1[static_cast<std::size_t>(i)] = std::move(h);
    }
  }
  return estimates;
}

inline void subpath_heads_backward(ModelState& m, const HeadsCache& cache,
                                   const std::vector<double>& grad_estimates,
                                   Tensor* grad_s, GradSink& sink) {
  const std::size_t lambda = static_cast<std::size_t>(m.spatial_cfg.lambda);
  for (std::size_t i = 0; i < grad_estimates.size(); ++i) {
    if (grad_estimates[i] == 0.0) continue;
    Tensor g({1});
    g.data[0] = grad_estimates[i];
    Tensor g_h({lambda});
    dense_backward(cache.post1[i], m.head_fc2.w.value, {}, Activation::linear,
                   g, &g_h, sink.of(m.head_fc2.w), sink.of(m.head_fc2.b));
    Tensor g_row({lambda});
    dense_backward(cache.inputs[i], m.head_fc1.w.value, cache.pre1[i],
                   Activation::relu, g_h, &g_row, sink.of(m.head_fc1.w),
                   sink.of(m.head_fc1.b));
    if (grad_s) {
      for (std::size_t j = 0; j < lambda; ++j)
        grad_s->data[i * lambda + j] += g_row.data[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Line regularization penalties over PathCNN convolution kernels.
// ---------------------------------------------------------------------------

struct Penalties {
  double center = 0.0;     // negative sum of kernel-channel centers
  double diversity = 0.0;  // negative entropy of softmaxed non-centers
  double l2 = 0.0;         // sum of squared elements
};

/// Kernels are F x f x f x C tensors; each (filter, channel) slice
/// contributes its center to L_center, the Shannon index of the softmax over
/// its f^2 - 1 non-center elements to L_div, and all squares to L_2.
inline Penalties line_penalties(const std::vector<const Tensor*>& kernels) {
  Penalties p;
  for (const Tensor* kt : kernels) {
    const std::size_t nf = kt->dim(0), f = kt->dim(1), c = kt->dim(3);
    const std::size_t half = f / 2;
    std::vector<double> z(f * f - 1);
    for (std::size_t fi = 0; fi < nf; ++fi) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        std::size_t zi = 0;
        for (std::size_t ky = 0; ky < f; ++ky) {
          for (std::size_t kx = 0; kx < f; ++kx) {
            const double e = kt->data[((fi * f + ky) * f + kx) * c + ci];
            p.l2 += e * e;
            if (ky == half && kx == half)
              p.center -= e;
            else
              z[zi++] = e;
          }
        }
        p.diversity -= shannon_index(softmax(z));
      }
    }
  }
  return p;
}

inline Penalties line_penalties(const ModelState& m) {
  std::vector<const Tensor*> kernels;
  for (const auto& l : m.spatial_layers) {
    kernels.push_back(&l.max_branch.w.value);
    kernels.push_back(&l.avg_branch.w.value);
  }
  return line_penalties(kernels);
}

/// Accumulates g1*dL_center + g2*dL_div + g3*dL_2 into the gradient of each
/// PathCNN kernel.
inline void line_penalties_backward(ModelState& m, double g1, double g2,
                                    double g3, GradSink& sink) {
  for (auto& l : m.spatial_layers) {
    for (ConvParams* branch : {&l.max_branch, &l.avg_branch}) {
      const Tensor& kt = branch->w.value;
      Tensor& gt = *sink.of(branch->w);
      const std::size_t nf = kt.dim(0), f = kt.dim(1), c = kt.dim(3);
      const std::size_t half = f / 2;
      std::vector<double> z(f * f - 1);
      std::vector<std::size_t> z_index(f * f - 1);
      for (std::size_t fi = 0; fi < nf; ++fi) {
        for (std::size_t ci = 0; ci < c; ++ci) {
          std::size_t zi = 0;
          for (std::size_t ky = 0; ky < f; ++ky) {
            for (std::size_t kx = 0; kx < f; ++kx) {
              const std::size_t idx = ((fi * f + ky) * f + kx) * c + ci;
              gt.data[idx] += g3 * 2.0 * kt.data[idx];
              if (ky == half && kx == half) {
                gt.data[idx] -= g1;
              } else {
                z[zi] = kt.data[idx];
                z_index[zi] = idx;
                ++zi;
              }
            }
          }
          // L_div = -H(softmax(z)); dH/dz_j = p_j * (-ln p_j - H).
          const std::vector<double> gh = shannon_softmax_grad(z);
          for (std::size_t j = 0; j < gh.size(); ++j)
            gt.data[z_index[j]] -= g2 * gh[j];
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

/// Mean absolute percentage error over the set (sum normalized by count).
inline double mape_loss(const std::vector<double>& estimates,
                        const std::vector<double>& truths) {
  if (estimates.size() != truths.size() || truths.empty())
    throw ValidationError("mape_loss: size mismatch or empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (!(truths[i] > 0.0))
      throw ValidationError("mape_loss: non-positive ground truth");
    sum += std::abs(estimates[i] - truths[i]) / truths[i];
  }
  return sum / static_cast<double>(truths.size());
}

inline double total_loss(double l_path, double l_sub, const Penalties& p,
                         const LossConfig& cfg) {
  return cfg.beta * l_path + (1.0 - cfg.beta) * l_sub +
         cfg.gamma1 * p.center + cfg.gamma2 * p.diversity + cfg.gamma3 * p.l2;
}

// ---------------------------------------------------------------------------
// Full forward pass for one record: slide windows, rasterize, PathCNN per
// image, assemble S, temporal estimate plus sub-path head estimates.
// ---------------------------------------------------------------------------

struct FullCache {
  std::vector<PathCnnCache> windows;
  TemporalCache temporal;
  HeadsCache heads;
  Tensor sequence;
  int n_rows = 0;
};

struct FullForwardResult {
  double path_estimate = 0.0;
  std::vector<double> window_estimates;  // one per non-padding row
  std::vector<SubPathWindow> windows;    // all windows, pre truncation
};

/// Rasterizer hook so callers can cache images; receives the window index.
using WindowImageFn =
    std::function<GeneralizedImage(const SubPathWindow&, std::size_t)>;

inline FullForwardResult full_forward(const PathRecord& record,
                                      const RoadNetwork& net,
                                      const TrafficTable& traffic,
                                      const WindowingConfig& windowing,
                                      const RasterConfig& raster,
                                      const ModelState& m, bool training,
                                      std::uint64_t seed, int tz_offset_s,
                                      FullCache* cache = nullptr,
                                      const WindowImageFn* image_fn = nullptr) {
  FullForwardResult result;
  result.windows = slide_windows(record, net, windowing);
  const int hour = hour_of_day(record.departure_time_s, tz_offset_s);
  const std::size_t n_rows = std::min<std::size_t>(
      result.windows.size(), static_cast<std::size_t>(m.temporal_cfg.s_max));
  if (cache) {
    cache->windows.resize(n_rows);
    cache->n_rows = static_cast<int>(n_rows);
  }
  std::vector<Tensor> rows(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) {
    GeneralizedImage img =
        image_fn ? (*image_fn)(result.windows[i], i)
                 : rasterize(result.windows[i], record, net, traffic, raster,
                             hour);
    rows[i] = pathcnn_forward(
        img.data, m, training,
        mix_seed(seed, static_cast<std::uint64_t>(record.id), i, 0x737061ULL),
        cache ? &cache->windows[i] : nullptr);
  }
  Tensor s = assemble_sequence(rows, m.temporal_cfg.s_max,
                               m.spatial_cfg.lambda);
  result.path_estimate = temporal_forward(
      s, m, training,
      mix_seed(seed, static_cast<std::uint64_t>(record.id), 0x74656dULL),
      cache ? &cache->temporal : nullptr);
  result.window_estimates = subpath_heads_forward(
      s, static_cast<int>(n_rows), m, cache ? &cache->heads : nullptr);
  if (cache) cache->sequence = std::move(s);
  return result;
}

/// Backward for one record given the loss gradients w.r.t. the path estimate
/// and each non-padding window estimate.
inline void full_backward(ModelState& m, const FullCache& cache,
                          double grad_path_estimate,
                          const std::vector<double>& grad_window_estimates,
                          GradSink& sink) {
  Tensor grad_s(cache.sequence.shape);
  temporal_backward(m, cache.temporal, grad_path_estimate, &grad_s, sink);
  subpath_heads_backward(m, cache.heads, grad_window_estimates, &grad_s, sink);
  const std::size_t lambda = static_cast<std::size_t>(m.spatial_cfg.lambda);
  Tensor row_grad({lambda});
  for (int i = 0; i < cache.n_rows; ++i) {
    std::copy_n(grad_s.data.begin() + static_cast<std::size_t>(i) * lambda,
                lambda, row_grad.data.begin());
    pathcnn_backward(m, cache.windows[static_cast<std::size_t>(i)], row_grad,
                     sink);
  }
  // Gradients on padding rows vanish: the padding is a constant, not data.
}

}  // namespace deepist
