#include "stket/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "stket/errors.hpp"

namespace stket {

static_assert(std::endian::native == std::endian::little,
              "tensor files are written with native little-endian byte order");

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() == 2) return shape_[0];
  throw DimensionError("rows() requires rank 1 or 2, got " + shape_string(shape_));
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() == 2) return shape_[1];
  throw DimensionError("cols() requires rank 1 or 2, got " + shape_string(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                         shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("truncated tensor stream");
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t, DType dtype) {
  out.write("STKT", 4);
  put<std::uint32_t>(out, kTensorFormatVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(out, d);
  if (dtype == DType::kFloat64) {
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    std::vector<float> narrow(t.data().begin(), t.data().end());
    out.write(reinterpret_cast<const char*>(narrow.data()),
              static_cast<std::streamsize>(narrow.size() * sizeof(float)));
  }
  if (!out) throw DataError("failed writing tensor stream");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "STKT", 4) != 0) throw DataError("bad tensor magic");
  const auto version = get<std::uint32_t>(in);
  if (version != kTensorFormatVersion) {
    throw DataError("unsupported tensor format version " + std::to_string(version));
  }
  const auto dtype = get<std::uint8_t>(in);
  if (dtype > 1) throw DataError("unknown tensor dtype " + std::to_string(dtype));
  const auto rank = get<std::uint32_t>(in);
  if (rank > 8) throw DataError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in));
  Tensor t(shape);
  if (dtype == 0) {
    in.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    std::vector<float> narrow(t.size());
    in.read(reinterpret_cast<char*>(narrow.data()),
            static_cast<std::streamsize>(narrow.size() * sizeof(float)));
    std::copy(narrow.begin(), narrow.end(), t.data().begin());
  }
  if (!in) throw DataError("truncated tensor payload");
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(out, t, dtype);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tensor file " + path.string());
  try {
    return read_tensor(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace stket
