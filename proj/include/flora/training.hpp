#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "flora/dataset.hpp"
#include "flora/error.hpp"
#include "flora/evaluation.hpp"
#include "flora/model.hpp"
#include "flora/nn_ops.hpp"
#include "flora/rng.hpp"
#include "flora/tensor.hpp"

namespace flora {

struct TrainConfig {
  double base_lr = 0.01;
  std::int64_t epochs = 100;
  std::int64_t batch_size = 32;
  double dropout_ratio = 0.5;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    if (!(base_lr > 0.0)) throw Error("base_lr must be > 0");
    if (epochs < 1) throw Error("epochs must be >= 1");
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    if (dropout_ratio < 0.0 || dropout_ratio >= 1.0)
      throw Error("dropout_ratio must be in [0, 1)");
  }
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_top1 = 0.0;
  double val_loss = 0.0;
  double val_top1 = 0.0;
};

struct TrainingCurve {
  std::vector<EpochRecord> records;
};

inline double lr_schedule(std::int64_t epoch, const TrainConfig& config) {
  config.validate();
  if (epoch < 0 || epoch >= config.epochs)
    throw EpochOutOfRange("epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(config.epochs) + ")");
  return config.base_lr *
         (1.0 - static_cast<double>(epoch) / static_cast<double>(config.epochs));
}

// In-place p := p - lr * g. Parameter and gradient sets must agree exactly.
inline void sgd_step(std::map<std::string, Tensor>& params, const GradMap& grads,
                     double lr) {
  if (params.size() != grads.size())
    throw ShapeMismatch("got " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  for (auto& [name, p] : params) {
    const auto it = grads.find(name);
    if (it == grads.end())
      throw ShapeMismatch("no gradient for parameter '" + name + "'");
    const Tensor& g = it->second;
    if (!same_shape(p, g))
      throw ShapeMismatch("gradient shape " + shape_string(g) +
                          " does not match parameter '" + name + "' " +
                          shape_string(p));
    for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] -= lr * g.data[i];
  }
}

namespace detail {

// Seed domains are salted so the shuffle stream, the dropout stream, and
// parameter initialization can never collide.
inline std::uint64_t shuffle_seed(std::uint64_t seed, std::int64_t epoch) {
  return mix_seed(mix_seed(seed, 0xA11CEull), epoch);
}

inline std::uint64_t dropout_seed(std::uint64_t seed, std::int64_t epoch,
                                  std::int64_t batch) {
  return mix_seed(mix_seed(mix_seed(seed, 0xd0d0ull), epoch), batch);
}

inline Tensor gather_batch(const std::vector<Sample>& samples,
                           const std::vector<std::size_t>& order, std::size_t start,
                           std::size_t end, const std::vector<std::int64_t>& item_shape,
                           std::vector<std::int64_t>* labels) {
  const std::int64_t bn = static_cast<std::int64_t>(end - start);
  Tensor batch({bn, item_shape[0], item_shape[1], item_shape[2]});
  const std::size_t item_len = static_cast<std::size_t>(
      item_shape[0] * item_shape[1] * item_shape[2]);
  labels->clear();
  for (std::size_t i = start; i < end; ++i) {
    const Sample& s = samples[order[i]];
    if (s.input.shape != item_shape)
      throw ShapeMismatch("sample shape " + shape_string(s.input) +
                          " does not match model input");
    std::copy(s.input.data.begin(), s.input.data.end(),
              batch.data.begin() + static_cast<std::int64_t>((i - start) * item_len));
    labels->push_back(s.label);
  }
  return batch;
}

}  // namespace detail

struct TrainResult {
  ModelGraph model;
  TrainingCurve curve;
};

// Batched SGD with the linear learning-rate ramp. Per epoch: seeded shuffle,
// training-mode forward with fused softmax/cross-entropy, backward, update;
// then an inference-mode validation pass. Fully deterministic for fixed
// (model, config, data).
using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(ModelGraph model, const std::vector<Sample>& train_split,
                         const std::vector<Sample>& val_split,
                         const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  if (train_split.empty() || val_split.empty())
    throw EmptyDataset("training needs non-empty train and validation splits");
  for (const auto& s : train_split)
    if (s.label < 0 || s.label >= model.num_classes)
      throw LabelOutOfRange("train label " + std::to_string(s.label) +
                            " outside [0, " + std::to_string(model.num_classes) + ")");
  for (const auto& s : val_split)
    if (s.label < 0 || s.label >= model.num_classes)
      throw LabelOutOfRange("val label " + std::to_string(s.label) + " outside [0, " +
                            std::to_string(model.num_classes) + ")");

  // dropout layers follow the config, not the architecture default
  for (auto& layer : model.layers)
    if (layer.kind == LayerKind::kDropout) layer.ratio = config.dropout_ratio;

  const std::size_t n = train_split.size();
  std::vector<std::size_t> order(n);
  TrainingCurve curve;
  ForwardTape tape;

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config);
    std::iota(order.begin(), order.end(), 0);
    if (config.shuffle) {
      Rng rng(detail::shuffle_seed(config.seed, epoch));
      rng.shuffle(order.begin(), order.end());
    }

    double loss_sum = 0.0;
    std::int64_t top1_hits = 0;
    std::int64_t batch_index = 0;
    std::vector<std::int64_t> labels;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const Tensor batch = detail::gather_batch(train_split, order, start, end,
                                                model.input_shape, &labels);
      const Tensor logits =
          model_forward(model, batch, DropoutMode::kTraining,
                        detail::dropout_seed(config.seed, epoch, batch_index), &tape);
      const SoftmaxCrossEntropy loss = softmax_cross_entropy(logits, labels);
      loss_sum += loss.loss * static_cast<double>(end - start);
      for (std::size_t row = 0; row < end - start; ++row)
        if (detail::beats_count(&loss.probs.data[row * model.num_classes],
                                model.num_classes, labels[row]) < 1)
          ++top1_hits;
      const GradMap grads = model_backward(model, tape, loss.grad_logits);
      sgd_step(model.params, grads, lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_top1 = static_cast<double>(top1_hits) / static_cast<double>(n);

    // validation pass, inference mode
    double val_loss_sum = 0.0;
    std::int64_t val_hits = 0;
    std::vector<std::size_t> val_order(val_split.size());
    std::iota(val_order.begin(), val_order.end(), 0);
    for (std::size_t start = 0; start < val_split.size(); start += config.batch_size) {
      const std::size_t end = std::min(val_split.size(), start + config.batch_size);
      const Tensor batch = detail::gather_batch(val_split, val_order, start, end,
                                                model.input_shape, &labels);
      const Tensor probs = forward(model, batch, DropoutMode::kInference, 0);
      val_loss_sum += cross_entropy(probs, labels) * static_cast<double>(end - start);
      for (std::size_t row = 0; row < end - start; ++row)
        if (detail::beats_count(&probs.data[row * model.num_classes],
                                model.num_classes, labels[row]) < 1)
          ++val_hits;
    }
    rec.val_loss = val_loss_sum / static_cast<double>(val_split.size());
    rec.val_top1 =
        static_cast<double>(val_hits) / static_cast<double>(val_split.size());
    curve.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return {std::move(model), std::move(curve)};
}

inline TrainResult train(ModelGraph model, const std::vector<LabeledImage>& train_items,
                         const std::vector<LabeledImage>& val_items,
                         const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  if (model.input_shape[1] != model.input_shape[2])
    throw ShapeMismatch("image training needs a square model input");
  const int s = static_cast<int>(model.input_shape[1]);
  return train(std::move(model), to_samples(train_items, s), to_samples(val_items, s),
               config, on_epoch);
}

// ---- curve CSV ----------------------------------------------------------------

inline std::string curve_to_csv(const TrainingCurve& curve) {
  std::string out = "epoch,lr,train_loss,train_top1,val_loss,val_top1\n";
  char line[256];
  for (const EpochRecord& r : curve.records) {
    std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(r.epoch), r.lr, r.train_loss, r.train_top1,
                  r.val_loss, r.val_top1);
    out += line;
  }
  return out;
}

inline void write_curve_csv(const TrainingCurve& curve, const std::string& path) {
  write_file(path, curve_to_csv(curve));
}

// ---- checkpoints ----------------------------------------------------------------

struct Checkpoint {
  std::uint16_t version = 1;
  std::string arch_id;
  std::int64_t num_classes = 0;
  std::vector<std::int64_t> input_shape;
  std::uint64_t init_seed = 0;
  TrainConfig config;
  std::int64_t epoch = 0;
  std::vector<std::string> class_names;
  std::map<std::string, Tensor> params;
};

namespace detail {

constexpr char kCheckpointMagic[4] = {'F', 'S', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;

struct ByteWriter {
  std::string bytes;

  void u8(std::uint8_t v) { bytes.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.append(s);
  }
};

struct ByteReader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t count) const {
    if (pos + count > bytes.size())
      throw CorruptCheckpoint("checkpoint truncated at byte " + std::to_string(pos));
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes[pos++]);
  }
  std::uint16_t u16() {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t len = u32();
    need(len);
    std::string s = bytes.substr(pos, len);
    pos += len;
    return s;
  }
};

}  // namespace detail

inline std::string checkpoint_to_bytes(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.bytes.append(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  w.u16(detail::kCheckpointVersion);
  w.str(ckpt.arch_id);
  w.i64(ckpt.num_classes);
  w.u32(static_cast<std::uint32_t>(ckpt.input_shape.size()));
  for (const std::int64_t d : ckpt.input_shape) w.i64(d);
  w.u64(ckpt.init_seed);
  w.f64(ckpt.config.base_lr);
  w.i64(ckpt.config.epochs);
  w.i64(ckpt.config.batch_size);
  w.f64(ckpt.config.dropout_ratio);
  w.u64(ckpt.config.seed);
  w.u8(ckpt.config.shuffle ? 1 : 0);
  w.i64(ckpt.epoch);
  w.u32(static_cast<std::uint32_t>(ckpt.class_names.size()));
  for (const auto& name : ckpt.class_names) w.str(name);
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, tensor] : ckpt.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(tensor.shape.size()));
    for (const std::int64_t d : tensor.shape) w.i64(d);
    for (const double v : tensor.data) w.f64(v);
  }
  return std::move(w.bytes);
}

inline Checkpoint checkpoint_from_bytes(const std::string& bytes) {
  detail::ByteReader r{bytes};
  r.need(sizeof(detail::kCheckpointMagic));
  if (std::memcmp(bytes.data(), detail::kCheckpointMagic,
                  sizeof(detail::kCheckpointMagic)) != 0)
    throw CorruptCheckpoint("bad magic bytes (not a checkpoint file)");
  r.pos = sizeof(detail::kCheckpointMagic);

  Checkpoint ckpt;
  ckpt.version = r.u16();
  if (ckpt.version != detail::kCheckpointVersion)
    throw VersionMismatch("checkpoint version " + std::to_string(ckpt.version) +
                          ", expected " + std::to_string(detail::kCheckpointVersion));
  ckpt.arch_id = r.str();
  ckpt.num_classes = r.i64();
  const std::uint32_t shape_len = r.u32();
  for (std::uint32_t i = 0; i < shape_len; ++i) ckpt.input_shape.push_back(r.i64());
  ckpt.init_seed = r.u64();
  ckpt.config.base_lr = r.f64();
  ckpt.config.epochs = r.i64();
  ckpt.config.batch_size = r.i64();
  ckpt.config.dropout_ratio = r.f64();
  ckpt.config.seed = r.u64();
  ckpt.config.shuffle = r.u8() != 0;
  ckpt.epoch = r.i64();
  const std::uint32_t class_count = r.u32();
  for (std::uint32_t i = 0; i < class_count; ++i) ckpt.class_names.push_back(r.str());
  const std::uint32_t param_count = r.u32();
  for (std::uint32_t i = 0; i < param_count; ++i) {
    const std::string name = r.str();
    const std::uint32_t ndim = r.u32();
    std::vector<std::int64_t> shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const std::int64_t extent = r.i64();
      if (extent < 1 || extent > (1 << 24))
        throw CorruptCheckpoint("implausible tensor extent in '" + name + "'");
      shape.push_back(extent);
      numel *= static_cast<std::size_t>(extent);
    }
    Tensor tensor(shape);
    for (std::size_t e = 0; e < numel; ++e) tensor.data[e] = r.f64();
    if (!ckpt.params.emplace(name, std::move(tensor)).second)
      throw CorruptCheckpoint("duplicate parameter '" + name + "'");
  }
  if (r.pos != bytes.size())
    throw CorruptCheckpoint(std::to_string(bytes.size() - r.pos) +
                            " trailing bytes after the last record");
  return ckpt;
}

inline void save_checkpoint(const ModelGraph& model, const TrainConfig& config,
                            std::int64_t epoch,
                            const std::vector<std::string>& class_names,
                            const std::string& path) {
  Checkpoint ckpt;
  ckpt.arch_id = model.arch_id;
  ckpt.num_classes = model.num_classes;
  ckpt.input_shape = model.input_shape;
  ckpt.init_seed = model.init_seed;
  ckpt.config = config;
  ckpt.epoch = epoch;
  ckpt.class_names = class_names;
  ckpt.params = model.params;
  write_file(path, checkpoint_to_bytes(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return checkpoint_from_bytes(read_file_text(path));
}

// Rebuilds the architecture named by the checkpoint and installs its weights.
inline ModelGraph model_from_checkpoint(const Checkpoint& ckpt) {
  ModelGraph model;
  if (ckpt.arch_id == "plain")
    model = build_mini_plainnet(ckpt.num_classes, ckpt.input_shape, ckpt.init_seed);
  else if (ckpt.arch_id == "inception")
    model = build_mini_inceptionnet(ckpt.num_classes, ckpt.input_shape, ckpt.init_seed);
  else
    throw CorruptCheckpoint("unknown architecture '" + ckpt.arch_id + "'");
  if (ckpt.params.size() != model.params.size())
    throw CorruptCheckpoint("checkpoint has " + std::to_string(ckpt.params.size()) +
                            " tensors, architecture expects " +
                            std::to_string(model.params.size()));
  for (auto& [name, tensor] : model.params) {
    const auto it = ckpt.params.find(name);
    if (it == ckpt.params.end())
      throw CorruptCheckpoint("checkpoint is missing tensor '" + name + "'");
    if (!same_shape(tensor, it->second))
      throw CorruptCheckpoint("tensor '" + name + "' has shape " +
                              shape_string(it->second) + ", architecture expects " +
                              shape_string(tensor));
    tensor = it->second;
  }
  return model;
}

}  // namespace flora
