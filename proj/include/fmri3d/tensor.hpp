#pragma once

// Dense row-major tensors and the arithmetic every other module builds on.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fmri3d/errors.hpp"

namespace fmri3d {

class Shape {
 public:
  static constexpr std::size_t kMaxRank = 6;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  std::size_t numel() const noexcept {
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
  }

  /// Shape with the leading axis removed.
  Shape drop_leading() const {
    if (rank() < 2) throw Error(ErrorKind::RankError, "cannot drop the only axis of " + str());
    return Shape(std::vector<std::size_t>(dims_.begin() + 1, dims_.end()));
  }

  /// Shape with `extent` prepended.
  Shape prepend(std::size_t extent) const {
    std::vector<std::size_t> d;
    d.reserve(rank() + 1);
    d.push_back(extent);
    d.insert(d.end(), dims_.begin(), dims_.end());
    return Shape(std::move(d));
  }

  /// "30x14x14x14x64"
  std::string str() const {
    std::string out;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) out += 'x';
      out += std::to_string(dims_[i]);
    }
    return out;
  }

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  void validate() const {
    if (dims_.empty() || dims_.size() > kMaxRank)
      throw Error(ErrorKind::RankError, "rank must be in [1, 6], got " + std::to_string(dims_.size()));
    std::size_t count = 1;
    for (auto d : dims_) {
      if (d == 0) throw Error(ErrorKind::ShapeMismatch, "zero extent in shape");
      if (count > std::numeric_limits<std::size_t>::max() / d)
        throw Error(ErrorKind::ShapeMismatch, "element count overflows");
      count *= d;
    }
  }

  std::vector<std::size_t> dims_;
};

inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << s.str(); }

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{1}, data_(1, T{0}) {}
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw Error(ErrorKind::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                                " does not match shape " + shape_.str());
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }
  static Tensor vector(std::vector<T> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.rank(); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  /// Row-major linear index of a multi-index.
  std::size_t offset(std::span<const std::size_t> idx) const {
    if (idx.size() != rank()) throw Error(ErrorKind::RankError, "index rank mismatch");
    std::size_t off = 0;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      if (idx[a] >= shape_[a]) throw Error(ErrorKind::IndexOutOfRange, "index out of range on axis " + std::to_string(a));
      off = off * shape_[a] + idx[a];
    }
    return off;
  }
  T at(std::initializer_list<std::size_t> idx) const {
    return data_[offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
  }
  T& at(std::initializer_list<std::size_t> idx) {
    return data_[offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
  }

  T item() const {
    if (size() != 1) throw Error(ErrorKind::ShapeMismatch, "item() on tensor of shape " + shape_.str());
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

enum class Binary { Add, Sub, Mul, Div, Max };
enum class Unary { Relu, Sigmoid, Tanh, Exp, Log, Neg };

template <class T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

template <class T>
T apply(Unary op, T x) {
  switch (op) {
    case Unary::Relu: return x > T{0} || std::isnan(x) ? x : T{0};
    case Unary::Sigmoid: return sigmoid(x);
    case Unary::Tanh: return std::tanh(x);
    case Unary::Exp: return std::exp(x);
    case Unary::Log: return std::log(x);
    case Unary::Neg: return -x;
  }
  return x;
}

template <class T>
T apply(Binary op, T a, T b) {
  switch (op) {
    case Binary::Add: return a + b;
    case Binary::Sub: return a - b;
    case Binary::Mul: return a * b;
    case Binary::Div: return a / b;
    case Binary::Max: return std::max(a, b);
  }
  return a;
}

/// Elementwise binary op; `b` may be a single-element tensor broadcast over `a`.
template <class T>
Tensor<T> elementwise(Binary op, const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(op, x[i], y[i]);
  } else if (b.size() == 1) {
    const T s = y[0];
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(op, x[i], s);
  } else {
    throw Error(ErrorKind::ShapeMismatch, a.shape().str() + " vs " + b.shape().str());
  }
  return out;
}

template <class T>
Tensor<T> map_unary(Unary op, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(op, x[i]);
  return out;
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(Binary::Add, a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(Binary::Sub, a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(Binary::Mul, a, b); }

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return out;
}

/// In-place accumulate `b` into `a` (same shape).
template <class T>
void add_into(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw Error(ErrorKind::ShapeMismatch, a.shape().str() + " vs " + b.shape().str());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

template <class T>
T sum(const Tensor<T>& a) {
  T s{0};
  for (T v : a.data()) s += v;
  return s;
}

template <class T>
T l2_norm(const Tensor<T>& a) {
  T s{0};
  for (T v : a.data()) s += v * v;
  return std::sqrt(s);
}

/// [m x k] * [k x n] -> [m x n], row-major, fixed i-k-j reduction order.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw Error(ErrorKind::RankError, "matmul expects rank-2 operands");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw Error(ErrorKind::ShapeMismatch, "matmul " + a.shape().str() + " by " + b.shape().str());
  Tensor<T> out(Shape{m, n});
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = A[i * k + p];
      const T* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw Error(ErrorKind::RankError, "transpose expects rank 2");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor<T> out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape.numel() != a.size())
    throw Error(ErrorKind::ShapeMismatch, "reshape " + a.shape().str() + " to " + shape.str());
  return Tensor<T>(std::move(shape), a.values());
}

template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 1 || b.rank() != 1) throw Error(ErrorKind::RankError, "concat expects rank-1 operands");
  std::vector<T> out(a.values());
  out.insert(out.end(), b.data().begin(), b.data().end());
  return Tensor<T>::vector(std::move(out));
}

/// Sub-tensor at leading index `t`.
template <class T>
Tensor<T> slice_time(const Tensor<T>& a, std::size_t t) {
  if (a.rank() < 2) throw Error(ErrorKind::RankError, "slice_time expects rank >= 2");
  if (t >= a.shape()[0])
    throw Error(ErrorKind::IndexOutOfRange,
                "timestep " + std::to_string(t) + " out of range for " + a.shape().str());
  Shape inner = a.shape().drop_leading();
  const std::size_t n = inner.numel();
  auto src = a.data().subspan(t * n, n);
  return Tensor<T>(std::move(inner), std::vector<T>(src.begin(), src.end()));
}

/// Stack equal-shaped tensors along a new leading axis.
template <class T>
Tensor<T> stack(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw Error(ErrorKind::EmptyInput, "stack of nothing");
  const Shape& inner = parts[0].shape();
  std::vector<T> out;
  out.reserve(inner.numel() * parts.size());
  for (const auto& p : parts) {
    if (p.shape() != inner) throw Error(ErrorKind::ShapeMismatch, "stack " + p.shape().str() + " vs " + inner.str());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return Tensor<T>(inner.prepend(parts.size()), std::move(out));
}

template <class T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  return stack(std::span<const Tensor<T>>(parts));
}

// Debug dump: little-endian u32 rank, u32 extents[rank], f64 data[numel].

namespace detail {

template <class U>
U byteswap(U v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<U>(bytes);
}

template <class U>
void write_le(std::ostream& os, U v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U read_le(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw Error(ErrorKind::TruncatedFile, "tensor dump ended early");
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  return v;
}

}  // namespace detail

template <class T>
void write_dump(std::ostream& os, const Tensor<T>& t) {
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape().dims()) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (T v : t.data()) detail::write_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
}

template <class T>
Tensor<T> read_dump(std::istream& is) {
  const auto rank = detail::read_le<std::uint32_t>(is);
  if (rank == 0 || rank > Shape::kMaxRank) throw Error(ErrorKind::RankError, "bad rank in tensor dump");
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) d = detail::read_le<std::uint32_t>(is);
  Shape shape(std::move(dims));
  std::vector<T> data(shape.numel());
  for (auto& v : data) v = static_cast<T>(std::bit_cast<double>(detail::read_le<std::uint64_t>(is)));
  return Tensor<T>(std::move(shape), std::move(data));
}

template <class T>
void save_dump(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path);
  write_dump(os, t);
  if (!os) throw Error(ErrorKind::Io, "write failed for " + path);
}

template <class T>
Tensor<T> load_dump(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot read " + path);
  return read_dump<T>(is);
}

}  // namespace fmri3d
