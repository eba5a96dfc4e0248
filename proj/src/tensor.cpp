#include "dualnet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace dualnet {

const char* dtype_name(Dtype dt) { return dt == Dtype::f32 ? "f32" : "f64"; }

Dtype dtype_from_name(const std::string& name) {
  if (name == "f32" || name == "single") return Dtype::f32;
  if (name == "f64" || name == "double") return Dtype::f64;
  throw ConfigError("unknown precision '" + name + "' (expected single or double)");
}

std::size_t dtype_bytes(Dtype dt) { return dt == Dtype::f32 ? 4 : 8; }

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, Dtype dt)
    : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0), dtype_(dt) {}

Tensor Tensor::scalar(double v, Dtype dt) {
  Tensor t({}, dt);
  t.data_[0] = v;
  t.quantize();
  return t;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, Dtype dt) {
  return Tensor(std::move(shape), dt);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v, Dtype dt) {
  Tensor t(std::move(shape), dt);
  for (double& x : t.data_) x = v;
  t.quantize();
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values,
                    Dtype dt) {
  Tensor t(std::move(shape), dt);
  if (values.size() != t.data_.size())
    throw ShapeError("tensor: " + std::to_string(values.size()) +
                     " values for shape " + t.shape_str());
  t.data_ = std::move(values);
  t.quantize();
  return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("tensor: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str());
  return shape_[axis];
}

void Tensor::quantize() {
  if (dtype_ == Dtype::f64) return;
  for (double& x : data_) x = static_cast<double>(static_cast<float>(x));
}

Tensor Tensor::cast(Dtype dt) const {
  Tensor t = *this;
  if (dt != dtype_) {
    Tensor out(shape_, dt);
    out.data_ = data_;
    out.requires_grad = requires_grad;
    out.quantize();
    return out;
  }
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const { return dualnet::shape_str(shape_); }

}  // namespace dualnet
