#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ffdconv/errors.hpp"
#include "ffdconv/rng.hpp"

namespace ffdconv {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Counts tensor buffer allocations. Tests use snapshots to assert that fused
// kernels do not materialize intermediate buffers.
struct AllocStats {
  inline static std::atomic<std::uint64_t> allocations{0};
  inline static std::atomic<std::uint64_t> bytes{0};

  struct Snapshot {
    std::uint64_t allocations;
    std::uint64_t bytes;
  };
  static Snapshot snapshot() {
    return {allocations.load(std::memory_order_relaxed), bytes.load(std::memory_order_relaxed)};
  }
  static Snapshot since(const Snapshot& s) {
    Snapshot now = snapshot();
    return {now.allocations - s.allocations, now.bytes - s.bytes};
  }
};

// Toggles the per-op finiteness scan. On by default in debug builds; tests and
// the CLI can force it in release builds.
struct DebugChecks {
  static std::atomic<bool>& flag() {
#ifdef NDEBUG
    static std::atomic<bool> enabled{std::getenv("FFDCONV_CHECK_FINITE") != nullptr};
#else
    static std::atomic<bool> enabled{true};
#endif
    return enabled;
  }
  static bool enabled() { return flag().load(std::memory_order_relaxed); }
  static void set(bool on) { flag().store(on, std::memory_order_relaxed); }
};

// Dense row-major N-dimensional array. Value semantics; ops never alias.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {
    note_alloc();
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
    note_alloc();
  }

  Tensor(const Tensor& other) : shape_(other.shape_), data_(other.data_) { note_alloc(); }
  Tensor(Tensor&&) noexcept = default;
  Tensor& operator=(const Tensor& other) {
    if (this != &other) {
      shape_ = other.shape_;
      data_ = other.data_;
      note_alloc();
    }
    return *this;
  }
  Tensor& operator=(Tensor&&) noexcept = default;

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-d accessors for the canonical [batch, channel, time, frequency] layout
  T& at4(std::size_t b, std::size_t c, std::size_t t, std::size_t f) {
    return data_[((b * shape_[1] + c) * shape_[2] + t) * shape_[3] + f];
  }
  const T& at4(std::size_t b, std::size_t c, std::size_t t, std::size_t f) const {
    return data_[((b * shape_[1] + c) * shape_[2] + t) * shape_[3] + f];
  }
  T& at3(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  T& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  void fill(T value) {
    for (T& x : data_) x = value;
  }

  Tensor reshaped(Shape shape) const& {
    check_reshape(shape);
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }
  Tensor reshaped(Shape shape) && {
    check_reshape(shape);
    shape_ = std::move(shape);
    return std::move(*this);
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (T x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void fill_uniform(Rng& rng, T lo, T hi) {
    for (T& x : data_) x = static_cast<T>(rng.uniform(lo, hi));
  }

  void fill_normal(Rng& rng, T mean = T(0), T stddev = T(1)) {
    for (T& x : data_) x = static_cast<T>(mean + stddev * rng.normal());
  }

 private:
  void note_alloc() {
    if (!data_.empty()) {
      AllocStats::allocations.fetch_add(1, std::memory_order_relaxed);
      AllocStats::bytes.fetch_add(data_.size() * sizeof(T), std::memory_order_relaxed);
    }
  }
  void check_reshape(const Shape& shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!DebugChecks::enabled()) return;
  if (!t.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite value in output tensor " +
                       shape_str(t.shape()));
  }
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff: shapes differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    T d = std::abs(a[i] - b[i]);
    if (d > worst) worst = d;
  }
  return worst;
}

}  // namespace ffdconv
