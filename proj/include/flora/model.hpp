#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flora/error.hpp"
#include "flora/nn_ops.hpp"
#include "flora/rng.hpp"
#include "flora/tensor.hpp"

namespace flora {

enum class LayerKind {
  kConv,
  kMaxPool,
  kRelu,
  kDense,
  kDropout,
  kSoftmax,
  kInception,
  kGlobalAvgPool,
  kFlatten,
};

// Channel widths of the four parallel branches. Output channels are the sum
// of the four non-reduce widths; the 1x1 reductions only shrink what the
// 3x3 and 5x5 convolutions see.
struct InceptionConfig {
  std::int64_t branch1_1x1 = 0;
  std::int64_t branch2_reduce_1x1 = 0;
  std::int64_t branch2_3x3 = 0;
  std::int64_t branch3_reduce_1x1 = 0;
  std::int64_t branch3_5x5 = 0;
  std::int64_t branch4_pool_proj_1x1 = 0;

  std::int64_t output_channels() const {
    return branch1_1x1 + branch2_3x3 + branch3_5x5 + branch4_pool_proj_1x1;
  }
  void validate() const {
    if (branch1_1x1 < 1 || branch2_reduce_1x1 < 1 || branch2_3x3 < 1 ||
        branch3_reduce_1x1 < 1 || branch3_5x5 < 1 || branch4_pool_proj_1x1 < 1)
      throw BadShape("inception branch channel counts must all be >= 1");
  }
};

struct LayerSpec {
  LayerKind kind;
  std::string name;  // parameter name prefix for conv/dense/inception
  // conv
  std::int64_t out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  // maxpool
  int window = 0;
  // dense
  std::int64_t units = 0;
  // dropout
  double ratio = 0.0;
  // inception
  InceptionConfig inception;
};

// Ordered layer list plus a named parameter store. Layer compatibility is
// validated when the graph is assembled, never during forward.
struct ModelGraph {
  std::string arch_id;
  std::vector<LayerSpec> layers;
  std::map<std::string, Tensor> params;
  std::vector<std::int64_t> input_shape;  // {C, H, W}
  std::int64_t num_classes = 0;
  std::uint64_t init_seed = 0;
};

inline const Tensor& param(const ModelGraph& model, const std::string& name) {
  const auto it = model.params.find(name);
  if (it == model.params.end())
    throw ShapeMismatch("model is missing parameter '" + name + "'");
  return it->second;
}

inline std::int64_t count_parameters(const ModelGraph& model) {
  std::int64_t total = 0;
  for (const auto& [name, tensor] : model.params)
    total += static_cast<std::int64_t>(tensor.numel());
  return total;
}

// ---- closed-form parameter counts -----------------------------------------

inline std::int64_t conv_param_count(std::int64_t in, std::int64_t out, int kernel) {
  return out * in * kernel * kernel + out;
}

inline std::int64_t dense_param_count(std::int64_t in, std::int64_t out) {
  return out * in + out;
}

inline std::int64_t inception_param_count(std::int64_t in, const InceptionConfig& c) {
  return conv_param_count(in, c.branch1_1x1, 1) +
         conv_param_count(in, c.branch2_reduce_1x1, 1) +
         conv_param_count(c.branch2_reduce_1x1, c.branch2_3x3, 3) +
         conv_param_count(in, c.branch3_reduce_1x1, 1) +
         conv_param_count(c.branch3_reduce_1x1, c.branch3_5x5, 5) +
         conv_param_count(in, c.branch4_pool_proj_1x1, 1);
}

// Same output channels, but 3x3 and 5x5 run directly on the full input.
inline std::int64_t naive_inception_param_count(std::int64_t in, const InceptionConfig& c) {
  return conv_param_count(in, c.branch1_1x1, 1) +
         conv_param_count(in, c.branch2_3x3, 3) +
         conv_param_count(in, c.branch3_5x5, 5) +
         conv_param_count(in, c.branch4_pool_proj_1x1, 1);
}

// ---- graph assembly --------------------------------------------------------

// Builds a graph layer by layer, validating the running activation shape and
// allocating He-initialized parameters from a deterministic per-tensor seed.
class GraphBuilder {
 public:
  GraphBuilder(std::string arch_id, std::vector<std::int64_t> input_chw,
               std::int64_t num_classes, std::uint64_t seed) {
    if (input_chw.size() != 3 || input_chw[0] < 1 || input_chw[1] < 1 || input_chw[2] < 1)
      throw BadShape("input shape must be positive C x H x W");
    if (num_classes < 2) throw BadShape("need at least two classes");
    graph_.arch_id = std::move(arch_id);
    graph_.input_shape = input_chw;
    graph_.num_classes = num_classes;
    graph_.init_seed = seed;
    cursor_ = input_chw;
  }

  GraphBuilder& conv(const std::string& name, std::int64_t out_channels, int kernel,
                     int stride, int padding) {
    require_spatial("conv");
    const std::int64_t in_ch = cursor_[0];
    const std::int64_t h = spatial_out(cursor_[1], kernel, stride, padding, name);
    const std::int64_t w = spatial_out(cursor_[2], kernel, stride, padding, name);
    LayerSpec spec;
    spec.kind = LayerKind::kConv;
    spec.name = name;
    spec.out_channels = out_channels;
    spec.kernel = kernel;
    spec.stride = stride;
    spec.padding = padding;
    graph_.layers.push_back(spec);
    add_conv_params(name, in_ch, out_channels, kernel);
    cursor_ = {out_channels, h, w};
    return *this;
  }

  GraphBuilder& maxpool(int window, int stride, int padding = 0) {
    require_spatial("maxpool");
    const std::int64_t h = spatial_out(cursor_[1], window, stride, padding, "maxpool");
    const std::int64_t w = spatial_out(cursor_[2], window, stride, padding, "maxpool");
    LayerSpec spec;
    spec.kind = LayerKind::kMaxPool;
    spec.window = window;
    spec.stride = stride;
    spec.padding = padding;
    graph_.layers.push_back(spec);
    cursor_ = {cursor_[0], h, w};
    return *this;
  }

  GraphBuilder& relu() {
    LayerSpec spec;
    spec.kind = LayerKind::kRelu;
    graph_.layers.push_back(spec);
    return *this;
  }

  GraphBuilder& flatten() {
    require_spatial("flatten");
    LayerSpec spec;
    spec.kind = LayerKind::kFlatten;
    graph_.layers.push_back(spec);
    cursor_ = {cursor_[0] * cursor_[1] * cursor_[2]};
    return *this;
  }

  GraphBuilder& global_avg_pool() {
    require_spatial("global_avg_pool");
    LayerSpec spec;
    spec.kind = LayerKind::kGlobalAvgPool;
    graph_.layers.push_back(spec);
    cursor_ = {cursor_[0]};
    return *this;
  }

  GraphBuilder& dense(const std::string& name, std::int64_t units) {
    if (cursor_.size() != 1)
      throw BadShape("dense layer '" + name + "' needs a flattened input");
    if (units < 1) throw BadShape("dense units must be >= 1");
    LayerSpec spec;
    spec.kind = LayerKind::kDense;
    spec.name = name;
    spec.units = units;
    graph_.layers.push_back(spec);
    add_dense_params(name, cursor_[0], units);
    cursor_ = {units};
    return *this;
  }

  GraphBuilder& dropout(double ratio) {
    if (ratio < 0.0 || ratio >= 1.0) throw BadShape("dropout ratio must be in [0, 1)");
    LayerSpec spec;
    spec.kind = LayerKind::kDropout;
    spec.ratio = ratio;
    graph_.layers.push_back(spec);
    return *this;
  }

  GraphBuilder& inception(const std::string& name, const InceptionConfig& config) {
    require_spatial("inception");
    config.validate();
    const std::int64_t in_ch = cursor_[0];
    LayerSpec spec;
    spec.kind = LayerKind::kInception;
    spec.name = name;
    spec.inception = config;
    graph_.layers.push_back(spec);
    add_conv_params(name + ".b1", in_ch, config.branch1_1x1, 1);
    add_conv_params(name + ".b2reduce", in_ch, config.branch2_reduce_1x1, 1);
    add_conv_params(name + ".b2", config.branch2_reduce_1x1, config.branch2_3x3, 3);
    add_conv_params(name + ".b3reduce", in_ch, config.branch3_reduce_1x1, 1);
    add_conv_params(name + ".b3", config.branch3_reduce_1x1, config.branch3_5x5, 5);
    add_conv_params(name + ".b4proj", in_ch, config.branch4_pool_proj_1x1, 1);
    cursor_ = {config.output_channels(), cursor_[1], cursor_[2]};
    return *this;
  }

  GraphBuilder& softmax() {
    if (cursor_.size() != 1) throw BadShape("softmax needs a flattened input");
    LayerSpec spec;
    spec.kind = LayerKind::kSoftmax;
    graph_.layers.push_back(spec);
    return *this;
  }

  ModelGraph finish() {
    if (cursor_.size() != 1 || cursor_[0] != graph_.num_classes)
      throw BadShape("graph output width " + std::to_string(cursor_.back()) +
                     " does not match num_classes " + std::to_string(graph_.num_classes));
    return std::move(graph_);
  }

 private:
  void require_spatial(const char* what) const {
    if (cursor_.size() != 3)
      throw BadShape(std::string(what) + " needs a C x H x W activation");
  }

  std::int64_t spatial_out(std::int64_t size, int kernel, int stride, int padding,
                           const std::string& name) const {
    if (kernel < 1 || stride < 1 || padding < 0)
      throw BadShape("bad kernel geometry in layer '" + name + "'");
    if (size + 2 * padding < kernel)
      throw BadShape("layer '" + name + "' window larger than its input");
    return (size + 2 * padding - kernel) / stride + 1;
  }

  void add_conv_params(const std::string& name, std::int64_t in_ch,
                       std::int64_t out_ch, int kernel) {
    if (out_ch < 1) throw BadShape("conv output channels must be >= 1");
    const double fan_in = static_cast<double>(in_ch) * kernel * kernel;
    graph_.params[name + ".weight"] =
        random_normal({out_ch, in_ch, kernel, kernel}, std::sqrt(2.0 / fan_in),
                      mix_seed(graph_.init_seed, param_counter_++));
    graph_.params[name + ".bias"] = Tensor({out_ch});
    ++param_counter_;
  }

  void add_dense_params(const std::string& name, std::int64_t in_dim,
                        std::int64_t out_dim) {
    graph_.params[name + ".weight"] =
        random_normal({out_dim, in_dim}, std::sqrt(2.0 / static_cast<double>(in_dim)),
                      mix_seed(graph_.init_seed, param_counter_++));
    graph_.params[name + ".bias"] = Tensor({out_dim});
    ++param_counter_;
  }

  ModelGraph graph_;
  std::vector<std::int64_t> cursor_;
  std::uint64_t param_counter_ = 0;
};

// ---- the two mini architectures --------------------------------------------

inline void check_mini_input(const std::vector<std::int64_t>& input_chw) {
  if (input_chw.size() != 3) throw BadShape("input shape must be C x H x W");
  // three stride-2 halvings with size-preserving convs need at least 8 pixels
  if (input_chw[1] < 8 || input_chw[2] < 8)
    throw BadShape("mini architectures need spatial size >= 8");
}

// Plain sequential stack: three conv/relu/pool stages, then a dense head
// with dropout. Convolutions preserve spatial size; every pool halves it.
inline ModelGraph build_mini_plainnet(std::int64_t num_classes,
                                      const std::vector<std::int64_t>& input_chw,
                                      std::uint64_t seed) {
  check_mini_input(input_chw);
  GraphBuilder b("plain", input_chw, num_classes, seed);
  b.conv("conv1", 16, 3, 1, 1).relu().maxpool(2, 2);
  b.conv("conv2", 32, 3, 1, 1).relu().maxpool(2, 2);
  b.conv("conv3", 64, 3, 1, 1).relu().maxpool(2, 2);
  b.flatten();
  b.dense("fc1", 128).relu().dropout(0.5);
  b.dense("fc2", num_classes);
  b.softmax();
  return b.finish();
}

// Closed-form parameter count of build_mini_plainnet without building it.
inline std::int64_t mini_plainnet_param_count(std::int64_t num_classes,
                                              const std::vector<std::int64_t>& input_chw) {
  check_mini_input(input_chw);
  auto halve = [](std::int64_t x) { return (x - 2) / 2 + 1; };
  const std::int64_t hf = halve(halve(halve(input_chw[1])));
  const std::int64_t wf = halve(halve(halve(input_chw[2])));
  return conv_param_count(input_chw[0], 16, 3) + conv_param_count(16, 32, 3) +
         conv_param_count(32, 64, 3) + dense_param_count(64 * hf * wf, 128) +
         dense_param_count(128, num_classes);
}

struct MiniInceptionConfigs {
  InceptionConfig a;
  InceptionConfig b;
};

// Chooses the two module configurations by scanning a width multiplier so
// the full network's parameter count lands within +/-20% of the plain
// stack's for the same input and class count. The second module carries
// most of the width; it runs at the coarsest resolution.
inline MiniInceptionConfigs mini_inception_configs(std::int64_t num_classes,
                                                   const std::vector<std::int64_t>& input_chw) {
  check_mini_input(input_chw);
  const std::int64_t target = mini_plainnet_param_count(num_classes, input_chw);

  const std::array<double, 6> base_a = {8, 8, 16, 4, 8, 8};
  const std::array<double, 6> base_b = {48, 48, 96, 24, 48, 48};
  auto scaled = [](const std::array<double, 6>& base, double w) {
    auto ch = [&](double v) {
      return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(v * w)));
    };
    InceptionConfig c;
    c.branch1_1x1 = ch(base[0]);
    c.branch2_reduce_1x1 = ch(base[1]);
    c.branch2_3x3 = ch(base[2]);
    c.branch3_reduce_1x1 = ch(base[3]);
    c.branch3_5x5 = ch(base[4]);
    c.branch4_pool_proj_1x1 = ch(base[5]);
    return c;
  };

  MiniInceptionConfigs best;
  std::int64_t best_err = -1;
  for (int step = 1; step <= 400; ++step) {
    const double w = 0.05 * step;
    const InceptionConfig a = scaled(base_a, w);
    const InceptionConfig b = scaled(base_b, w);
    const std::int64_t stem = conv_param_count(input_chw[0], 16, 3);
    const std::int64_t total = stem + inception_param_count(16, a) +
                               inception_param_count(a.output_channels(), b) +
                               dense_param_count(b.output_channels(), num_classes);
    const std::int64_t err = std::llabs(total - target);
    if (best_err < 0 || err < best_err) {
      best_err = err;
      best = {a, b};
    }
  }
  if (static_cast<double>(best_err) > 0.20 * static_cast<double>(target))
    throw BadShape("no inception configuration lands within 20% of " +
                   std::to_string(target) + " parameters");
  return best;
}

// Inception-module network: a small stem, two inception modules separated
// by a pool, then global average pooling into the classifier head.
inline ModelGraph build_mini_inceptionnet(std::int64_t num_classes,
                                          const std::vector<std::int64_t>& input_chw,
                                          std::uint64_t seed) {
  check_mini_input(input_chw);
  const MiniInceptionConfigs cfg = mini_inception_configs(num_classes, input_chw);
  GraphBuilder b("inception", input_chw, num_classes, seed);
  b.conv("stem", 16, 3, 1, 1).relu().maxpool(2, 2);
  b.inception("incep1", cfg.a);
  b.maxpool(2, 2);
  b.inception("incep2", cfg.b);
  b.global_avg_pool();
  b.dropout(0.5);
  b.dense("fc", num_classes);
  b.softmax();
  return b.finish();
}

// ---- forward / backward -----------------------------------------------------

struct InceptionCache {
  Tensor b1_pre;
  Tensor b2r_pre, b2r_act, b2_pre;
  Tensor b3r_pre, b3r_act, b3_pre;
  MaxPoolResult b4_pool;
  Tensor b4_pre;
};

struct LayerCache {
  std::vector<std::int64_t> input_shape;
  Tensor input;  // saved only where backward needs the values
  MaxPoolResult pool;
  DropoutState drop;
  InceptionCache incep;
};

struct ForwardTape {
  std::vector<LayerCache> caches;
};

namespace detail {

inline Tensor reshape(const Tensor& t, std::vector<std::int64_t> shape) {
  Tensor out;
  out.shape = std::move(shape);
  out.data = t.data;
  return out;
}

inline Tensor global_avg_pool_forward(const Tensor& x) {
  const std::int64_t n = x.shape[0], c = x.shape[1];
  const std::int64_t plane = x.shape[2] * x.shape[3];
  Tensor out({n, c});
  for (std::int64_t in = 0; in < n; ++in)
    for (std::int64_t ic = 0; ic < c; ++ic) {
      const double* src = &x.data[x.idx4(in, ic, 0, 0)];
      double acc = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
      out.at2(in, ic) = acc / static_cast<double>(plane);
    }
  return out;
}

inline Tensor global_avg_pool_backward(const Tensor& grad_out,
                                       const std::vector<std::int64_t>& input_shape) {
  Tensor gin(input_shape);
  const std::int64_t n = input_shape[0], c = input_shape[1];
  const std::int64_t plane = input_shape[2] * input_shape[3];
  const double scale = 1.0 / static_cast<double>(plane);
  for (std::int64_t in = 0; in < n; ++in)
    for (std::int64_t ic = 0; ic < c; ++ic) {
      const double g = grad_out.at2(in, ic) * scale;
      double* dst = &gin.data[gin.idx4(in, ic, 0, 0)];
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = g;
    }
  return gin;
}

inline Tensor inception_forward(const ModelGraph& model, const LayerSpec& spec,
                                const Tensor& x, InceptionCache* cache) {
  InceptionCache local;
  InceptionCache& c = cache ? *cache : local;

  c.b1_pre = conv2d(x, param(model, spec.name + ".b1.weight"),
                    param(model, spec.name + ".b1.bias"), 1, 0);

  c.b2r_pre = conv2d(x, param(model, spec.name + ".b2reduce.weight"),
                     param(model, spec.name + ".b2reduce.bias"), 1, 0);
  c.b2r_act = relu(c.b2r_pre);
  c.b2_pre = conv2d(c.b2r_act, param(model, spec.name + ".b2.weight"),
                    param(model, spec.name + ".b2.bias"), 1, 1);

  c.b3r_pre = conv2d(x, param(model, spec.name + ".b3reduce.weight"),
                     param(model, spec.name + ".b3reduce.bias"), 1, 0);
  c.b3r_act = relu(c.b3r_pre);
  c.b3_pre = conv2d(c.b3r_act, param(model, spec.name + ".b3.weight"),
                    param(model, spec.name + ".b3.bias"), 1, 2);

  c.b4_pool = maxpool2d(x, 3, 1, 1);
  c.b4_pre = conv2d(c.b4_pool.output, param(model, spec.name + ".b4proj.weight"),
                    param(model, spec.name + ".b4proj.bias"), 1, 0);

  const std::array<Tensor, 4> branches = {relu(c.b1_pre), relu(c.b2_pre),
                                          relu(c.b3_pre), relu(c.b4_pre)};
  return concat_channels(std::span<const Tensor>(branches.data(), branches.size()));
}

}  // namespace detail

// Runs the graph on an N x C x H x W batch. Training mode skips the final
// softmax (the loss fuses it) and applies dropout from the given seed;
// inference mode is deterministic and seed-independent.
inline Tensor model_forward(const ModelGraph& model, const Tensor& batch,
                            DropoutMode mode, std::uint64_t seed,
                            ForwardTape* tape = nullptr) {
  if (batch.ndim() != 4 || batch.shape[1] != model.input_shape[0] ||
      batch.shape[2] != model.input_shape[1] || batch.shape[3] != model.input_shape[2])
    throw ShapeMismatch("batch shape " + shape_string(batch) +
                        " does not match model input");
  if (tape) tape->caches.assign(model.layers.size(), LayerCache{});

  Tensor x = batch;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerSpec& spec = model.layers[li];
    LayerCache* cache = tape ? &tape->caches[li] : nullptr;
    if (cache) cache->input_shape = x.shape;

    switch (spec.kind) {
      case LayerKind::kConv: {
        Tensor y = conv2d(x, param(model, spec.name + ".weight"),
                          param(model, spec.name + ".bias"), spec.stride, spec.padding);
        if (cache) cache->input = std::move(x);
        x = std::move(y);
        break;
      }
      case LayerKind::kMaxPool: {
        MaxPoolResult res = maxpool2d(x, spec.window, spec.stride, spec.padding);
        x = res.output;
        if (cache) cache->pool = std::move(res);
        break;
      }
      case LayerKind::kRelu: {
        Tensor y = relu(x);
        if (cache) cache->input = std::move(x);
        x = std::move(y);
        break;
      }
      case LayerKind::kFlatten: {
        x = detail::reshape(x, {x.shape[0], x.shape[1] * x.shape[2] * x.shape[3]});
        break;
      }
      case LayerKind::kGlobalAvgPool: {
        x = detail::global_avg_pool_forward(x);
        break;
      }
      case LayerKind::kDense: {
        Tensor y = dense(x, param(model, spec.name + ".weight"),
                         param(model, spec.name + ".bias"));
        if (cache) cache->input = std::move(x);
        x = std::move(y);
        break;
      }
      case LayerKind::kDropout: {
        DropoutState state;
        state.ratio = spec.ratio;
        state.mode = mode;
        x = dropout(x, state, mix_seed(seed, li));
        if (cache) cache->drop = std::move(state);
        break;
      }
      case LayerKind::kSoftmax: {
        if (mode == DropoutMode::kInference) x = softmax(x);
        break;
      }
      case LayerKind::kInception: {
        Tensor y = detail::inception_forward(model, spec, x, cache ? &cache->incep : nullptr);
        if (cache) cache->input = std::move(x);
        x = std::move(y);
        break;
      }
    }
  }
  return x;
}

inline Tensor forward(const ModelGraph& model, const Tensor& batch, DropoutMode mode,
                      std::uint64_t seed) {
  return model_forward(model, batch, mode, seed, nullptr);
}

using GradMap = std::map<std::string, Tensor>;

namespace detail {

inline Tensor inception_backward(const ModelGraph& model, const LayerSpec& spec,
                                 const LayerCache& cache, const Tensor& grad_out,
                                 GradMap& grads) {
  const InceptionCache& c = cache.incep;
  const InceptionConfig& cfg = spec.inception;
  const std::vector<std::int64_t> splits = {cfg.branch1_1x1, cfg.branch2_3x3,
                                            cfg.branch3_5x5, cfg.branch4_pool_proj_1x1};
  std::vector<Tensor> g = concat_channels_backward(grad_out, splits);
  const Tensor& x = cache.input;

  auto conv_back = [&](const Tensor& gout, const Tensor& input, const std::string& stem,
                       int padding) {
    Conv2dGrads cg = conv2d_backward(gout, input, param(model, stem + ".weight"), 1, padding);
    grads[stem + ".weight"] = std::move(cg.weights);
    grads[stem + ".bias"] = std::move(cg.bias);
    return std::move(cg.input);
  };

  // branch 1: conv1x1 -> relu
  Tensor gx = conv_back(relu_backward(g[0], c.b1_pre), x, spec.name + ".b1", 0);

  // branch 2: reduce -> relu -> conv3x3 -> relu
  {
    Tensor g2 = conv_back(relu_backward(g[1], c.b2_pre), c.b2r_act, spec.name + ".b2", 1);
    Tensor gx2 = conv_back(relu_backward(g2, c.b2r_pre), x, spec.name + ".b2reduce", 0);
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gx2.data[i];
  }

  // branch 3: reduce -> relu -> conv5x5 -> relu
  {
    Tensor g3 = conv_back(relu_backward(g[2], c.b3_pre), c.b3r_act, spec.name + ".b3", 2);
    Tensor gx3 = conv_back(relu_backward(g3, c.b3r_pre), x, spec.name + ".b3reduce", 0);
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gx3.data[i];
  }

  // branch 4: maxpool3 -> conv1x1 -> relu
  {
    Tensor g4 = conv_back(relu_backward(g[3], c.b4_pre), c.b4_pool.output,
                          spec.name + ".b4proj", 0);
    Tensor gx4 = maxpool2d_backward(g4, c.b4_pool, cache.input_shape);
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gx4.data[i];
  }
  return gx;
}

}  // namespace detail

// Hand-derived gradients for every parameter, walking the tape backwards
// from the loss gradient at the logits.
inline GradMap model_backward(const ModelGraph& model, const ForwardTape& tape,
                              const Tensor& grad_logits) {
  if (tape.caches.size() != model.layers.size())
    throw ShapeMismatch("tape does not match the model (run a training forward first)");

  GradMap grads;
  Tensor g = grad_logits;
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    const LayerSpec& spec = model.layers[i];
    const LayerCache& cache = tape.caches[i];
    switch (spec.kind) {
      case LayerKind::kConv: {
        Conv2dGrads cg = conv2d_backward(g, cache.input,
                                         param(model, spec.name + ".weight"),
                                         spec.stride, spec.padding);
        grads[spec.name + ".weight"] = std::move(cg.weights);
        grads[spec.name + ".bias"] = std::move(cg.bias);
        g = std::move(cg.input);
        break;
      }
      case LayerKind::kMaxPool:
        g = maxpool2d_backward(g, cache.pool, cache.input_shape);
        break;
      case LayerKind::kRelu:
        g = relu_backward(g, cache.input);
        break;
      case LayerKind::kFlatten:
        g = detail::reshape(g, cache.input_shape);
        break;
      case LayerKind::kGlobalAvgPool:
        g = detail::global_avg_pool_backward(g, cache.input_shape);
        break;
      case LayerKind::kDense: {
        DenseGrads dg = dense_backward(g, cache.input, param(model, spec.name + ".weight"));
        grads[spec.name + ".weight"] = std::move(dg.weights);
        grads[spec.name + ".bias"] = std::move(dg.bias);
        g = std::move(dg.input);
        break;
      }
      case LayerKind::kDropout:
        g = dropout_backward(g, cache.drop);
        break;
      case LayerKind::kSoftmax:
        break;  // training forward leaves logits raw; loss owns the softmax
      case LayerKind::kInception:
        g = detail::inception_backward(model, spec, cache, g, grads);
        break;
    }
  }
  return grads;
}

}  // namespace flora
