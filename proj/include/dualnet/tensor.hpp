#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualnet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

enum class Dtype { f32, f64 };

const char* dtype_name(Dtype dt);
Dtype dtype_from_name(const std::string& name);
std::size_t dtype_bytes(Dtype dt);

// Dense row-major tensor with value semantics. A rank-0 tensor holds one
// scalar. Values are kept as doubles; tensors tagged f32 are snapped to
// single precision after every operation that produces them.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(std::vector<std::size_t> shape, Dtype dt = Dtype::f64);

  static Tensor scalar(double v, Dtype dt = Dtype::f64);
  static Tensor zeros(std::vector<std::size_t> shape, Dtype dt = Dtype::f64);
  static Tensor full(std::vector<std::size_t> shape, double v,
                     Dtype dt = Dtype::f64);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values,
                     Dtype dt = Dtype::f64);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const { return data_.size(); }
  Dtype dtype() const { return dtype_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double operator()(std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i) { return data_[i]; }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // snap values to the tensor's precision (no-op for f64)
  void quantize();
  Tensor cast(Dtype dt) const;

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

  bool requires_grad = false;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  Dtype dtype_ = Dtype::f64;
};

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace dualnet
