#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flora/dataset.hpp"
#include "flora/error.hpp"
#include "flora/model.hpp"
#include "flora/nn_ops.hpp"
#include "flora/tensor.hpp"

namespace flora {

struct EvalReport {
  double top1 = 0.0;
  double top5 = 0.0;
  std::vector<double> per_class_top1;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted], top-1
  std::int64_t sample_count = 0;
};

namespace detail {

// Number of classes ranked strictly ahead of `label`: higher score wins,
// equal scores rank the lower class index first.
inline std::int64_t beats_count(const double* row, std::int64_t classes,
                                std::int64_t label) {
  const double ref = row[label];
  std::int64_t ahead = 0;
  for (std::int64_t c = 0; c < classes; ++c) {
    if (c == label) continue;
    if (row[c] > ref || (row[c] == ref && c < label)) ++ahead;
  }
  return ahead;
}

inline std::int64_t argmax_row(const double* row, std::int64_t classes) {
  std::int64_t best = 0;
  for (std::int64_t c = 1; c < classes; ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

}  // namespace detail

inline double top_k_accuracy(const Tensor& scores,
                             const std::vector<std::int64_t>& labels,
                             std::int64_t k) {
  if (scores.ndim() != 2)
    throw ShapeMismatch("scores must be N x C, got " + shape_string(scores));
  const std::int64_t n = scores.shape[0];
  const std::int64_t classes = scores.shape[1];
  if (k < 1 || k > classes)
    throw KOutOfRange("k must be in [1, " + std::to_string(classes) + "], got " +
                      std::to_string(k));
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw ShapeMismatch("got " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(n) + " rows");
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t label = labels[i];
    if (label < 0 || label >= classes)
      throw LabelOutOfRange("label " + std::to_string(label) + " outside [0, " +
                            std::to_string(classes) + ")");
    if (detail::beats_count(&scores.data[i * classes], classes, label) < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

// Inference-mode pass over the whole split. Top-5 uses k = min(5, C).
inline EvalReport evaluate(const ModelGraph& model, const std::vector<Sample>& split,
                           std::int64_t batch_size = 64) {
  if (split.empty()) throw EmptyDataset("evaluate needs a non-empty split");
  if (batch_size < 1) throw Error("batch_size must be >= 1");

  const std::int64_t classes = model.num_classes;
  const std::int64_t k5 = std::min<std::int64_t>(5, classes);
  EvalReport report;
  report.sample_count = static_cast<std::int64_t>(split.size());
  report.confusion.assign(classes, std::vector<std::int64_t>(classes, 0));

  std::int64_t top1_hits = 0, top5_hits = 0;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    const std::size_t end = std::min(split.size(), start + batch_size);
    const std::int64_t bn = static_cast<std::int64_t>(end - start);
    Tensor batch({bn, model.input_shape[0], model.input_shape[1], model.input_shape[2]});
    const std::size_t item_len = split[start].input.numel();
    for (std::size_t i = start; i < end; ++i) {
      if (split[i].input.shape != model.input_shape)
        throw ShapeMismatch("sample shape " + shape_string(split[i].input) +
                            " does not match model input");
      std::copy(split[i].input.data.begin(), split[i].input.data.end(),
                batch.data.begin() + static_cast<std::int64_t>((i - start) * item_len));
    }
    const Tensor probs = forward(model, batch, DropoutMode::kInference, 0);
    for (std::int64_t row = 0; row < bn; ++row) {
      const std::int64_t label = split[start + row].label;
      if (label < 0 || label >= classes)
        throw LabelOutOfRange("label " + std::to_string(label) + " outside [0, " +
                              std::to_string(classes) + ")");
      const double* scores = &probs.data[row * classes];
      const std::int64_t ahead = detail::beats_count(scores, classes, label);
      if (ahead < 1) ++top1_hits;
      if (ahead < k5) ++top5_hits;
      ++report.confusion[label][detail::argmax_row(scores, classes)];
    }
  }

  report.top1 = static_cast<double>(top1_hits) / static_cast<double>(report.sample_count);
  report.top5 = static_cast<double>(top5_hits) / static_cast<double>(report.sample_count);
  report.per_class_top1.assign(classes, 0.0);
  for (std::int64_t c = 0; c < classes; ++c) {
    std::int64_t row_total = 0;
    for (std::int64_t p = 0; p < classes; ++p) row_total += report.confusion[c][p];
    if (row_total > 0)
      report.per_class_top1[c] =
          static_cast<double>(report.confusion[c][c]) / static_cast<double>(row_total);
  }
  return report;
}

inline EvalReport evaluate(const ModelGraph& model,
                           const std::vector<LabeledImage>& split,
                           std::int64_t batch_size = 64) {
  if (split.empty()) throw EmptyDataset("evaluate needs a non-empty split");
  if (model.input_shape[1] != model.input_shape[2])
    throw ShapeMismatch("image evaluation needs a square model input");
  return evaluate(model, to_samples(split, static_cast<int>(model.input_shape[1])),
                  batch_size);
}

struct ConfusedPair {
  std::int64_t true_class = 0;
  std::int64_t predicted_class = 0;
  std::int64_t count = 0;
  std::string true_name;
  std::string predicted_name;
};

// Off-diagonal confusion entries, largest first, ties by (true, predicted).
inline std::vector<ConfusedPair> most_confused_pairs(
    const EvalReport& report, const std::vector<std::string>& class_names,
    std::size_t limit) {
  const std::int64_t classes = static_cast<std::int64_t>(report.confusion.size());
  std::vector<ConfusedPair> pairs;
  for (std::int64_t t = 0; t < classes; ++t) {
    for (std::int64_t p = 0; p < classes; ++p) {
      if (t == p || report.confusion[t][p] == 0) continue;
      ConfusedPair pair;
      pair.true_class = t;
      pair.predicted_class = p;
      pair.count = report.confusion[t][p];
      if (t < static_cast<std::int64_t>(class_names.size()))
        pair.true_name = class_names[t];
      if (p < static_cast<std::int64_t>(class_names.size()))
        pair.predicted_name = class_names[p];
      pairs.push_back(std::move(pair));
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const ConfusedPair& a, const ConfusedPair& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.true_class != b.true_class) return a.true_class < b.true_class;
    return a.predicted_class < b.predicted_class;
  });
  if (pairs.size() > limit) pairs.resize(limit);
  return pairs;
}

struct ComparisonReport {
  std::string name_a, name_b;
  EvalReport report_a, report_b;
  std::vector<double> per_class_delta;     // b minus a
  std::vector<std::int64_t> fixed_by_b;    // classes a never got right, b did
  std::vector<std::int64_t> fixed_by_a;    // and the reverse
  std::int64_t param_count_a = 0;
  std::int64_t param_count_b = 0;
};

inline ComparisonReport compare_models(const ModelGraph& model_a,
                                       const ModelGraph& model_b,
                                       const std::vector<Sample>& test_split,
                                       std::int64_t batch_size = 64) {
  if (model_a.num_classes != model_b.num_classes)
    throw ClassSetMismatch("models classify " + std::to_string(model_a.num_classes) +
                           " vs " + std::to_string(model_b.num_classes) + " classes");
  ComparisonReport cmp;
  cmp.name_a = model_a.arch_id;
  cmp.name_b = model_b.arch_id;
  cmp.report_a = evaluate(model_a, test_split, batch_size);
  cmp.report_b = evaluate(model_b, test_split, batch_size);
  cmp.param_count_a = count_parameters(model_a);
  cmp.param_count_b = count_parameters(model_b);
  const std::int64_t classes = model_a.num_classes;
  cmp.per_class_delta.assign(classes, 0.0);
  for (std::int64_t c = 0; c < classes; ++c) {
    const double a = cmp.report_a.per_class_top1[c];
    const double b = cmp.report_b.per_class_top1[c];
    cmp.per_class_delta[c] = b - a;
    if (a == 0.0 && b > 0.0) cmp.fixed_by_b.push_back(c);
    if (b == 0.0 && a > 0.0) cmp.fixed_by_a.push_back(c);
  }
  return cmp;
}

inline std::string report_to_json(const EvalReport& report,
                                  const std::string& model_name,
                                  const std::vector<std::string>& class_names = {}) {
  nlohmann::json j;
  j["model"] = model_name;
  j["samples"] = report.sample_count;
  j["top1"] = report.top1;
  j["top5"] = report.top5;
  j["per_class"] = report.per_class_top1;
  nlohmann::json confused = nlohmann::json::array();
  for (const auto& pair : most_confused_pairs(
           report, class_names, report.confusion.size() * report.confusion.size()))
    confused.push_back({pair.true_class, pair.predicted_class, pair.count});
  j["confused"] = confused;
  return j.dump(2) + "\n";
}

}  // namespace flora
