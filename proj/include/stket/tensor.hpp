#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace stket {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles. Rank-2 tensors are the working currency
// of the autograd engine; higher ranks only appear in stored feature maps.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);
  static Tensor row(std::span<const double> values);
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 accessors; a rank-1 tensor is viewed as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row_span(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  Tensor reshaped(Shape shape) const;
  void fill(double value);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class DType : std::uint8_t { kFloat64 = 0, kFloat32 = 1 };

// Binary tensor container: "STKT", u32 version, u8 dtype, u32 rank,
// u64 dims[rank], then a little-endian row-major payload.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t, DType dtype = DType::kFloat64);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t,
                 DType dtype = DType::kFloat64);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace stket
