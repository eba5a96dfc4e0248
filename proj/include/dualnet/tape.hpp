#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualnet/tensor.hpp"

namespace dualnet {

using ValueId = std::size_t;
using GradMap = std::unordered_map<ValueId, Tensor>;

enum class Act { relu, sigmoid, tanh };

// Records every primitive application in execution order, which is a
// topological order of the value graph. Reverse-mode differentiation walks
// the record backwards from a scalar loss.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, ValueId self, const Tensor& grad)>;

  ValueId leaf(Tensor value);
  ValueId record(const char* op, std::vector<ValueId> inputs, Tensor value,
                 BackwardFn backward);

  const Tensor& value(ValueId id) const;
  bool requires_grad(ValueId id) const { return node(id).requires_grad; }
  bool is_leaf(ValueId id) const { return node(id).leaf; }
  std::size_t size() const { return nodes_.size(); }

  // Gradients of a scalar loss for every requires_grad leaf. Leaves the
  // loss does not reach get zero gradients.
  GradMap backward(ValueId loss);

  // Usable inside backward closures: gradient accumulation buffer for a
  // value that participates in differentiation, nullptr otherwise.
  Tensor* maybe_grad(ValueId id);

  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

 private:
  struct Node {
    std::string op;
    std::vector<ValueId> inputs;
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  const Node& node(ValueId id) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> has_grad_;
  bool in_backward_ = false;
  bool check_finite_ = false;
};

namespace ops {

// a[m,k] x b[k,n] -> [m,n]
ValueId matmul(Tape& t, ValueId a, ValueId b);
// a[B,m,k] x b[B,k,n] -> [B,m,n]
ValueId bmm(Tape& t, ValueId a, ValueId b);
// [m,n] -> [n,m]
ValueId transpose2d(Tape& t, ValueId x);
// [B,m,n] -> [B,n,m]
ValueId transpose_last2(Tape& t, ValueId x);
ValueId add(Tape& t, ValueId a, ValueId b);
ValueId mul(Tape& t, ValueId a, ValueId b);
// s * x + c elementwise
ValueId affine_scalar(Tape& t, ValueId x, double s, double c);
// x[m,n] + bias[n] broadcast over rows
ValueId add_bias_rows(Tape& t, ValueId x, ValueId bias);
// concatenate along the last axis; all leading extents must agree
ValueId concat_channels(Tape& t, const std::vector<ValueId>& xs);
ValueId activation(Tape& t, ValueId x, Act kind);
ValueId relu(Tape& t, ValueId x);
ValueId sigmoid(Tape& t, ValueId x);
ValueId tanh_(Tape& t, ValueId x);
// row-wise softmax on [m,n], max-subtracted
ValueId softmax_rows(Tape& t, ValueId x);
ValueId reshape(Tape& t, ValueId x, std::vector<std::size_t> shape);
// x[b,L,c] -> [b,c] at position p
ValueId slice_time(Tape& t, ValueId x, std::size_t p);
// L tensors [b,c] -> [b,L,c]
ValueId stack_time(Tape& t, const std::vector<ValueId>& steps);
// mean over positions: [b,L,c] -> [b,c]
ValueId mean_time(Tape& t, ValueId x);
// per-channel conv along positions, zero padded to keep L; kernel [K,c], K odd
ValueId depthwise_conv1d(Tape& t, ValueId x, ValueId kernel);
// windowed max along positions, right-padded with -inf to keep output
// length at ceil(L/stride)
ValueId maxpool1d(Tape& t, ValueId x, std::size_t size, std::size_t stride);
// batch statistics over (batch, position) per channel; biased variance.
// Writes the batch statistics to *mean_out / *var_out when non-null.
ValueId batchnorm_train(Tape& t, ValueId x, ValueId gamma, ValueId beta,
                        double eps, std::vector<double>* mean_out,
                        std::vector<double>* var_out);
// normalize with fixed statistics (not differentiated through)
ValueId batchnorm_infer(Tape& t, ValueId x, ValueId gamma, ValueId beta,
                        const std::vector<double>& mean,
                        const std::vector<double>& var, double eps);
// probs[b,n] -> [b], element i is probs[i, labels[i]]
ValueId pick_class(Tape& t, ValueId probs,
                   const std::vector<std::size_t>& labels);
ValueId clamp_min(Tape& t, ValueId x, double lo);
ValueId log_(Tape& t, ValueId x);
ValueId sum_all(Tape& t, ValueId x);
ValueId mean_all(Tape& t, ValueId x);

}  // namespace ops

}  // namespace dualnet
