#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dualnet/rng.hpp"
#include "dualnet/tape.hpp"
#include "dualnet/tensor.hpp"

namespace dualnet {

enum class Mode { train, infer };

struct StagedParam {
  std::string name;
  Tensor* tensor;
  ValueId id;
};

// Per-forward context. Layers stage their parameters onto the tape as they
// run; the staged list (when requested) maps parameter names to tape leaves
// for the optimizer.
struct FwdCtx {
  Tape& tape;
  Mode mode = Mode::infer;
  Rng* rng = nullptr;
  std::vector<StagedParam>* staged = nullptr;
  std::vector<ValueId>* attention_maps = nullptr;

  ValueId stage(const std::string& name, Tensor& t);
};

struct ParamInit {
  enum class Kind { weight, bias, gain } kind = Kind::weight;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

using ParamVisitor =
    std::function<void(const std::string&, Tensor&, const ParamInit&)>;
using StateVisitor =
    std::function<void(const std::string&, std::vector<double>&)>;

// Fan-scaled uniform for weights, zeros for biases, ones for gains. The
// stream is derived from (seed, parameter name), so initialization does not
// depend on traversal order.
void init_param_tensor(const std::string& name, Tensor& t, const ParamInit& pi,
                       std::uint64_t seed);

template <typename LayerT>
void init_layer(LayerT& layer, std::uint64_t seed) {
  layer.visit_params([seed](const std::string& name, Tensor& t,
                            const ParamInit& pi) {
    init_param_tensor(name, t, pi, seed);
  });
}

// Depthwise separable convolution along positions: per-channel kernel
// (no bias) followed by a pointwise channel mix (with bias).
struct DscLayer {
  std::string name;
  std::size_t c_in = 0, c_out = 0, kernel = 3;
  Tensor depthwise;  // [K, c_in]
  Tensor pointwise;  // [c_in, c_out]
  Tensor bias;       // [c_out]

  static DscLayer make(std::string name, std::size_t c_in, std::size_t c_out,
                       std::size_t kernel, Dtype dt = Dtype::f64);
  ValueId forward(FwdCtx& ctx, ValueId x);
  void visit_params(const ParamVisitor& fn);
  std::size_t param_count() const {
    return kernel * c_in + c_in * c_out + c_out;
  }
};

// Gated recurrent unit over positions, zero initial state, returns the full
// hidden sequence [b, L, c_out].
struct GruLayer {
  std::string name;
  std::size_t c_in = 0, c_out = 0;
  Tensor w_z, u_z, b_z;
  Tensor w_r, u_r, b_r;
  Tensor w_h, u_h, b_h;

  static GruLayer make(std::string name, std::size_t c_in, std::size_t c_out,
                       Dtype dt = Dtype::f64);
  ValueId forward(FwdCtx& ctx, ValueId x);
  void visit_params(const ParamVisitor& fn);
  std::size_t param_count() const {
    return 3 * (c_in * c_out + c_out * c_out + c_out);
  }
};

struct BatchNormLayer {
  std::string name;
  std::size_t channels = 0;
  double momentum = 0.99;
  double eps = 1e-5;
  Tensor gamma, beta;
  std::vector<double> running_mean, running_var;

  static BatchNormLayer make(std::string name, std::size_t channels,
                             Dtype dt = Dtype::f64);
  ValueId forward(FwdCtx& ctx, ValueId x);
  void visit_params(const ParamVisitor& fn);
  void visit_state(const StateVisitor& fn);
  std::size_t param_count() const { return 2 * channels; }
};

struct MaxPoolLayer {
  std::size_t size = 2;
  std::size_t stride = 1;

  ValueId forward(FwdCtx& ctx, ValueId x) const;
};

// Inverted dropout: inference is the exact identity.
struct DropoutLayer {
  double rate = 0.4;

  static DropoutLayer make(double rate);
  ValueId forward(FwdCtx& ctx, ValueId x) const;
};

// Affine map; position-wise when applied to [b, L, c].
struct LinearLayer {
  std::string name;
  std::size_t c_in = 0, c_out = 0;
  Tensor w;  // [c_in, c_out]
  Tensor b;  // [c_out]

  static LinearLayer make(std::string name, std::size_t c_in,
                          std::size_t c_out, Dtype dt = Dtype::f64);
  ValueId forward_rows(FwdCtx& ctx, ValueId x);      // [m, c_in]
  ValueId forward_positions(FwdCtx& ctx, ValueId x);  // [b, L, c_in]
  void visit_params(const ParamVisitor& fn);
  std::size_t param_count() const { return c_in * c_out + c_out; }
};

// Scaled dot-product self-attention over positions. With projections off
// the queries, keys and values are the input itself.
struct AttentionLayer {
  std::string name;
  std::size_t c_in = 0, width = 0;
  bool projections = true;
  Tensor w_q, w_k, w_v;  // [c_in, width], no biases

  static AttentionLayer make(std::string name, std::size_t c_in,
                             std::size_t width, bool projections,
                             Dtype dt = Dtype::f64);
  struct Out {
    ValueId value;    // [b, L, width]
    ValueId weights;  // [b, L, L], rows sum to one
  };
  Out forward(FwdCtx& ctx, ValueId x);
  void visit_params(const ParamVisitor& fn);
  std::size_t param_count() const {
    return projections ? 3 * c_in * width : 0;
  }
  std::size_t out_width() const { return projections ? width : c_in; }
};

// The recurring 7-layer unit: DSC, GRU, BatchNorm, ReLU, MaxPool, Dropout,
// position-wise affine bridge. Four of the seven carry parameters.
struct PlainBlock {
  static constexpr std::size_t kLayers = 7;
  static constexpr std::size_t kParamLayers = 4;

  std::string name;
  std::size_t c_in = 0, c_out = 0;
  DscLayer dsc;
  GruLayer gru;
  BatchNormLayer bn;
  MaxPoolLayer pool;
  DropoutLayer drop;
  LinearLayer bridge;

  static PlainBlock make(std::string name, std::size_t c_in, std::size_t c_out,
                         std::size_t kernel, MaxPoolLayer pool,
                         double dropout_rate, Dtype dt = Dtype::f64);
  ValueId forward(FwdCtx& ctx, ValueId x);
  void visit_params(const ParamVisitor& fn);
  void visit_state(const StateVisitor& fn);
  std::size_t param_count() const;
};

}  // namespace dualnet
