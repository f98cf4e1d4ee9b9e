#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flora/error.hpp"
#include "flora/image.hpp"
#include "flora/image_io.hpp"
#include "flora/rng.hpp"
#include "flora/tensor.hpp"

namespace flora {

struct LabeledImage {
  std::string id;  // filename stem, unique within a dataset
  RgbImage image;
  std::int64_t label = 0;
  std::string class_name;
};

struct Dataset {
  std::vector<LabeledImage> items;
  std::vector<std::string> class_names;

  std::int64_t num_classes() const {
    return static_cast<std::int64_t>(class_names.size());
  }
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
  std::uint64_t seed = 0;
};

// ---- loading ----------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (const char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

// Reads `labels_file` (CSV: filename,label,class_name) and decodes every
// referenced image from `image_dir`. Labels must be contiguous from 0.
// Items come back sorted by id so load order never depends on row order.
inline Dataset load_dataset(const std::filesystem::path& image_dir,
                            const std::filesystem::path& labels_file) {
  std::error_code ec;
  if (!std::filesystem::exists(labels_file, ec))
    throw MissingFile("labels file not found: " + labels_file.string());
  if (!std::filesystem::is_directory(image_dir, ec))
    throw MissingFile("image directory not found: " + image_dir.string());

  const std::string text = read_file_text(labels_file);
  std::vector<std::string> lines;
  std::string cur;
  for (const char ch : text) {
    if (ch == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  if (lines.empty() || detail::split_csv_row(lines[0]) !=
                           std::vector<std::string>{"filename", "label", "class_name"})
    throw BadLabelRow("labels file must start with header 'filename,label,class_name'");

  Dataset ds;
  std::map<std::string, std::size_t> seen_ids;
  std::map<std::int64_t, std::string> label_names;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (lines[row].empty()) continue;
    const std::string where = "row " + std::to_string(row + 1);
    const auto fields = detail::split_csv_row(lines[row]);
    if (fields.size() != 3 || fields[0].empty() || fields[2].empty())
      throw BadLabelRow(where + ": expected 'filename,label,class_name'");

    std::int64_t label = 0;
    try {
      std::size_t used = 0;
      label = std::stoll(fields[1], &used);
      if (used != fields[1].size() || label < 0) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw BadLabelRow(where + ": label '" + fields[1] +
                        "' is not a non-negative integer");
    }

    const std::filesystem::path file = image_dir / fields[0];
    if (!std::filesystem::exists(file, ec))
      throw MissingFile(where + ": image file not found: " + file.string());

    LabeledImage item;
    item.id = std::filesystem::path(fields[0]).stem().string();
    item.label = label;
    item.class_name = fields[2];
    item.image = load_image(file.string());

    if (!seen_ids.emplace(item.id, row).second)
      throw BadLabelRow(where + ": duplicate id '" + item.id + "'");
    const auto [it, inserted] = label_names.emplace(label, item.class_name);
    if (!inserted && it->second != item.class_name)
      throw BadLabelRow(where + ": label " + fields[1] + " maps to both '" +
                        it->second + "' and '" + item.class_name + "'");
    ds.items.push_back(std::move(item));
  }

  if (ds.items.empty()) throw BadLabelRow("labels file has no data rows");
  std::int64_t expect = 0;
  for (const auto& [label, name] : label_names) {
    if (label != expect)
      throw NonContiguousLabels("labels must be contiguous from 0; missing label " +
                                std::to_string(expect));
    ++expect;
    ds.class_names.push_back(name);
  }
  // a class name used under two labels would make the name table ambiguous
  for (std::size_t i = 0; i < ds.class_names.size(); ++i)
    for (std::size_t j = i + 1; j < ds.class_names.size(); ++j)
      if (ds.class_names[i] == ds.class_names[j])
        throw BadLabelRow("class name '" + ds.class_names[i] +
                          "' appears under two different labels");

  std::sort(ds.items.begin(), ds.items.end(),
            [](const LabeledImage& a, const LabeledImage& b) { return a.id < b.id; });
  return ds;
}

// ---- splitting --------------------------------------------------------------

// 70/15/15-style split: ids are sorted, shuffled by the seeded generator,
// then dealt validation first, test second, train takes the remainder.
inline DatasetSplit split_dataset(const Dataset& dataset, double val_fraction,
                                  double test_fraction, std::uint64_t seed) {
  const std::size_t n = dataset.items.size();
  if (n < 3) throw DatasetTooSmall("need at least 3 items to split, got " +
                                   std::to_string(n));
  if (!(val_fraction >= 0.0) || !(test_fraction >= 0.0) ||
      !(val_fraction + test_fraction < 1.0))
    throw Error("val_fraction + test_fraction must be in [0, 1)");

  std::vector<std::string> ids;
  ids.reserve(n);
  for (const auto& item : dataset.items) ids.push_back(item.id);
  std::sort(ids.begin(), ids.end());

  Rng rng(seed);
  rng.shuffle(ids.begin(), ids.end());

  // the epsilon keeps counts exact when n*fraction is an integer in real
  // arithmetic but lands just below it in floating point (e.g. 20 * 0.15)
  const auto take = [n](double fraction) {
    return static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * fraction + 1e-9));
  };
  const std::size_t val_count = take(val_fraction);
  const std::size_t test_count = take(test_fraction);

  DatasetSplit split;
  split.val_fraction = val_fraction;
  split.test_fraction = test_fraction;
  split.seed = seed;
  split.validation.assign(ids.begin(), ids.begin() + val_count);
  split.test.assign(ids.begin() + val_count, ids.begin() + val_count + test_count);
  split.train.assign(ids.begin() + val_count + test_count, ids.end());
  return split;
}

// Materializes one side of a split back into labeled images.
inline std::vector<LabeledImage> collect_items(const Dataset& dataset,
                                               const std::vector<std::string>& ids) {
  std::map<std::string, const LabeledImage*> by_id;
  for (const auto& item : dataset.items) by_id[item.id] = &item;
  std::vector<LabeledImage> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end())
      throw MissingFile("split references unknown id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

inline std::string split_to_json(const DatasetSplit& split) {
  nlohmann::json j;
  j["seed"] = split.seed;
  j["fractions"] = {{"val", split.val_fraction}, {"test", split.test_fraction}};
  j["train"] = split.train;
  j["val"] = split.validation;
  j["test"] = split.test;
  return j.dump(2) + "\n";
}

inline DatasetSplit split_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    DatasetSplit split;
    split.seed = j.at("seed").get<std::uint64_t>();
    split.val_fraction = j.at("fractions").at("val").get<double>();
    split.test_fraction = j.at("fractions").at("test").get<double>();
    split.train = j.at("train").get<std::vector<std::string>>();
    split.validation = j.at("val").get<std::vector<std::string>>();
    split.test = j.at("test").get<std::vector<std::string>>();
    return split;
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure(std::string("bad split manifest: ") + e.what());
  }
}

// ---- preprocessing ----------------------------------------------------------

// Nearest-neighbor resize to S x S, values scaled to [0,1], C x H x W layout.
// Source index is floor(dst * src_extent / S), so an S x S input is copied
// exactly.
inline Tensor preprocess_image(const RgbImage& image, int target_size) {
  if (target_size < 8) throw BadShape("target_size must be >= 8");
  const std::int64_t s = target_size;
  Tensor out({3, s, s});
  for (std::int64_t y = 0; y < s; ++y) {
    const int sy = static_cast<int>((y * image.height) / s);
    for (std::int64_t x = 0; x < s; ++x) {
      const int sx = static_cast<int>((x * image.width) / s);
      const Rgb px = image.at(sx, sy);
      out.data[(0 * s + y) * s + x] = px.r / 255.0;
      out.data[(1 * s + y) * s + x] = px.g / 255.0;
      out.data[(2 * s + y) * s + x] = px.b / 255.0;
    }
  }
  return out;
}

inline Tensor preprocess(const LabeledImage& item, int target_size) {
  return preprocess_image(item.image, target_size);
}

// Tensor + label pairs ready for batching.
struct Sample {
  Tensor input;  // 3 x S x S
  std::int64_t label = 0;
};

inline std::vector<Sample> to_samples(const std::vector<LabeledImage>& items,
                                      int target_size) {
  std::vector<Sample> samples;
  samples.reserve(items.size());
  for (const auto& item : items)
    samples.push_back({preprocess(item, target_size), item.label});
  return samples;
}

// ---- synthetic flowers -------------------------------------------------------

inline double wrap_hue(double h) {
  h = std::fmod(h, 360.0);
  return h < 0.0 ? h + 360.0 : h;
}

inline double class_signature_hue(std::int64_t label, std::int64_t num_classes) {
  return wrap_hue(static_cast<double>(label) * 360.0 /
                  static_cast<double>(num_classes));
}

namespace detail {

inline RgbImage render_flower(std::int64_t label, std::int64_t num_classes,
                              int size, Rng& rng) {
  const double base_hue = class_signature_hue(label, num_classes);
  const double item_hue = wrap_hue(base_hue + (rng.next_double() - 0.5) * 16.0);
  const int petals = 5 + static_cast<int>(rng.next_index(4));
  const double rot = rng.next_range(0.0, 2.0 * std::numbers::pi);
  const double cx = (0.5 + (rng.next_double() - 0.5) * 0.16) * size;
  const double cy = (0.5 + (rng.next_double() - 0.5) * 0.16) * size;
  const double radius = size * (0.30 + 0.08 * rng.next_double());

  RgbImage img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const double r = std::hypot(dx, dy);
      const double theta = std::atan2(dy, dx);
      const double lobe =
          std::pow(std::max(0.0, std::cos(petals * (theta - rot))), 0.7);
      const double reach = radius * (0.4 + 0.6 * lobe);
      const double u1 = rng.next_double();
      const double u2 = rng.next_double();
      const double u3 = rng.next_double();
      Rgb px;
      if (r <= reach) {
        // petal: the class hue with mild pixel-level shimmer
        px = hsv_to_rgb(wrap_hue(item_hue + (u1 - 0.5) * 6.0), 0.85 + 0.15 * u2,
                        0.75 + 0.25 * u3);
      } else {
        // background: desaturated noise, never crossing the petal hue band
        px = hsv_to_rgb(u1 * 360.0, 0.12 * u2, 0.2 + 0.6 * u3);
      }
      img.at(x, y) = px;
    }
  }
  return img;
}

}  // namespace detail

// Deterministic desk-scale dataset: each class keeps a signature petal hue
// (label * 360 / num_classes, jittered per item), drawn as a seeded rosette
// over a low-saturation textured background.
inline Dataset generate_synthetic_flowers(std::int64_t num_classes,
                                          std::int64_t per_class, int image_size,
                                          std::uint64_t seed) {
  if (num_classes > 24)
    throw TooManyClasses("hue budget allows at most 24 classes, got " +
                         std::to_string(num_classes));
  if (num_classes < 2) throw Error("need at least 2 classes");
  if (per_class < 1) throw Error("need at least 1 item per class");
  if (image_size < 8) throw Error("image_size must be >= 8");

  Dataset ds;
  for (std::int64_t k = 0; k < num_classes; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "flower%02d", static_cast<int>(k));
    ds.class_names.emplace_back(name);
  }
  for (std::int64_t k = 0; k < num_classes; ++k) {
    for (std::int64_t i = 0; i < per_class; ++i) {
      const std::uint64_t item_index =
          static_cast<std::uint64_t>(k * per_class + i);
      Rng rng(mix_seed(seed, item_index));
      LabeledImage item;
      char id[32];
      std::snprintf(id, sizeof(id), "f%02d_%04d", static_cast<int>(k),
                    static_cast<int>(i));
      item.id = id;
      item.label = k;
      item.class_name = ds.class_names[static_cast<std::size_t>(k)];
      item.image = detail::render_flower(k, num_classes, image_size, rng);
      ds.items.push_back(std::move(item));
    }
  }
  return ds;
}

}  // namespace flora
