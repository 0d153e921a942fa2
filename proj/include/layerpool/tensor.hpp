#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace layerpool {

using Real = double;
using Shape = std::vector<std::size_t>;

// Error taxonomy shared by every module.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

/// Dense row-major array of reals. Rank 0 (shape {}) holds a single scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0.0);
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows);
  static Tensor row(std::span<const Real> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix view of any tensor: rank 0 is 1x1, rank 1 is a single row.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  Real operator[](std::size_t i) const noexcept { return data_[i]; }
  Real& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }
  Real item() const;

  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  std::span<const Real> row_span(std::size_t r) const noexcept {
    return std::span<const Real>(data_).subspan(r * cols(), cols());
  }
  std::vector<Real>& storage() noexcept { return data_; }
  const std::vector<Real>& storage() const noexcept { return data_; }

  void fill(Real v) noexcept;
  Tensor& operator+=(const Tensor& other);
  Tensor transposed() const;
  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

Real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace layerpool
