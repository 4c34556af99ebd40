#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace adios {

using Shape = std::vector<int64_t>;

class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

/// Dense row-major tensor. The scalar type is float for training and
/// double for finite-difference gradient checks.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
  Tensor(Shape s, T fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    check(static_cast<int64_t>(data.size()) == shape_numel(shape),
          "tensor value count " + std::to_string(data.size()) +
              " does not match shape " + shape_str(shape));
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape.size()); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.same_shape(b), "max_abs_diff: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace adios
