#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowdepth {

// Dense row-major tensor of doubles, up to 4 dims. Images are CHW,
// flow fields are [2,H,W] (u then v), cost volumes [n,H,W].
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), fill);
  }

  static long numel_of(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("negative tensor dim");
      n *= d;
    }
    return n;
  }

  long numel() const { return static_cast<long>(data.size()); }
  bool empty() const { return data.empty(); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape.size()); }

  double& operator[](long i) { return data[static_cast<size_t>(i)]; }
  double operator[](long i) const { return data[static_cast<size_t>(i)]; }

  // 2D [H,W]
  double& at(int y, int x) { return data[static_cast<size_t>(y) * shape[1] + x]; }
  double at(int y, int x) const { return data[static_cast<size_t>(y) * shape[1] + x]; }

  // 3D [C,H,W]
  double& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  // 4D [N,C,H,W] (conv weights [Co,Ci,kh,kw])
  double& at(int n, int c, int y, int x) {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  double at(int n, int c, int y, int x) const {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s), 0.0); }
  static Tensor full(std::vector<int> s, double v) { return Tensor(std::move(s), v); }
  static Tensor scalar(double v) { return Tensor({1}, v); }

  double min() const { return *std::min_element(data.begin(), data.end()); }
  double max() const { return *std::max_element(data.begin(), data.end()); }
  double sum() const { return std::accumulate(data.begin(), data.end(), 0.0); }
  double mean() const { return empty() ? 0.0 : sum() / static_cast<double>(numel()); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + "]";
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
}

// Boolean mask stored as bytes, shape [H,W] unless noted.
struct Mask {
  std::vector<int> shape;
  std::vector<uint8_t> data;

  Mask() = default;
  explicit Mask(std::vector<int> s, bool fill = false) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(Tensor::numel_of(shape)), fill ? 1 : 0);
  }

  long numel() const { return static_cast<long>(data.size()); }
  uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * shape[1] + x]; }
  uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * shape[1] + x]; }
  uint8_t& operator[](long i) { return data[static_cast<size_t>(i)]; }
  uint8_t operator[](long i) const { return data[static_cast<size_t>(i)]; }

  long count() const {
    long n = 0;
    for (uint8_t v : data) n += v ? 1 : 0;
    return n;
  }
};

// Seeded RNG wrapper; all stochastic choices in the project go through one
// of these so runs are reproducible from a single seed.
struct Rng {
  std::mt19937_64 gen;
  explicit Rng(uint64_t seed = 0) : gen(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(gen);
  }
  double normal(double mu = 0.0, double sigma = 1.0) {
    return std::normal_distribution<double>(mu, sigma)(gen);
  }
  int64_t randint(int64_t lo, int64_t hi) {  // inclusive bounds
    return std::uniform_int_distribution<int64_t>(lo, hi)(gen);
  }
  uint64_t derive(uint64_t stream) {
    // independent child seed for a named sub-stream
    return std::mt19937_64(gen() ^ (0x9e3779b97f4a7c15ULL * (stream + 1)))();
  }
};

}  // namespace flowdepth
