#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "flora/error.hpp"
#include "flora/rng.hpp"

namespace flora {

// N-dimensional row-major array of 64-bit floats.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s, double fill = 0.0) : shape(std::move(s)) {
    std::int64_t n = 1;
    for (auto e : shape) {
      if (e < 1) throw ShapeMismatch("tensor extents must be positive");
      n *= e;
    }
    data.assign(static_cast<std::size_t>(n), fill);
  }

  std::size_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  std::int64_t extent(int i) const { return shape[static_cast<std::size_t>(i)]; }

  // flat offsets for the two layouts the library uses
  std::size_t idx4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w);
  }
  std::size_t idx2(std::int64_t r, std::int64_t c) const {
    return static_cast<std::size_t>(r * shape[1] + c);
  }

  double& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data[idx4(n, c, h, w)];
  }
  double at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data[idx4(n, c, h, w)];
  }
  double& at2(std::int64_t r, std::int64_t c) { return data[idx2(r, c)]; }
  double at2(std::int64_t r, std::int64_t c) const { return data[idx2(r, c)]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline std::string shape_string(const Tensor& t) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i)
    os << (i ? "x" : "") << t.shape[i];
  os << "]";
  return os.str();
}

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

inline Tensor random_uniform(std::vector<std::int64_t> shape, double lo, double hi,
                             std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data) v = rng.next_range(lo, hi);
  return t;
}

inline Tensor random_normal(std::vector<std::int64_t> shape, double stddev,
                            std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data) v = stddev * rng.next_normal();
  return t;
}

}  // namespace flora
