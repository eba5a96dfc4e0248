#include "dualnet/layers.hpp"

#include <cmath>

namespace dualnet {

ValueId FwdCtx::stage(const std::string& name, Tensor& t) {
  ValueId id = tape.leaf(t);
  if (staged) staged->push_back({name, &t, id});
  return id;
}

void init_param_tensor(const std::string& name, Tensor& t, const ParamInit& pi,
                       std::uint64_t seed) {
  switch (pi.kind) {
    case ParamInit::Kind::bias:
      for (std::size_t i = 0; i < t.numel(); ++i) t(i) = 0.0;
      break;
    case ParamInit::Kind::gain:
      for (std::size_t i = 0; i < t.numel(); ++i) t(i) = 1.0;
      break;
    case ParamInit::Kind::weight: {
      Rng rng(mix_seed(seed, fnv1a64(name)));
      const double limit =
          std::sqrt(6.0 / double(pi.fan_in + pi.fan_out));
      for (std::size_t i = 0; i < t.numel(); ++i)
        t(i) = rng.uniform(-limit, limit);
      break;
    }
  }
  t.quantize();
}

static Tensor make_param(std::vector<std::size_t> shape, Dtype dt) {
  Tensor t(std::move(shape), dt);
  t.requires_grad = true;
  return t;
}

// ---- DscLayer

DscLayer DscLayer::make(std::string name, std::size_t c_in, std::size_t c_out,
                        std::size_t kernel, Dtype dt) {
  if (kernel % 2 == 0)
    throw ConfigError("dsc '" + name + "': kernel size must be odd, got " +
                      std::to_string(kernel));
  DscLayer l;
  l.name = std::move(name);
  l.c_in = c_in;
  l.c_out = c_out;
  l.kernel = kernel;
  l.depthwise = make_param({kernel, c_in}, dt);
  l.pointwise = make_param({c_in, c_out}, dt);
  l.bias = make_param({c_out}, dt);
  return l;
}

ValueId DscLayer::forward(FwdCtx& ctx, ValueId x) {
  const Tensor& xv = ctx.tape.value(x);
  if (xv.rank() != 3 || xv.extent(2) != c_in)
    throw ShapeError("dsc '" + name + "': expected [batch, L, " +
                     std::to_string(c_in) + "], got " + xv.shape_str());
  const std::size_t b = xv.extent(0), L = xv.extent(1);
  ValueId dw = ctx.stage(name + "/depthwise", depthwise);
  ValueId pw = ctx.stage(name + "/pointwise", pointwise);
  ValueId bs = ctx.stage(name + "/bias", bias);
  ValueId y = ops::depthwise_conv1d(ctx.tape, x, dw);
  ValueId flat = ops::reshape(ctx.tape, y, {b * L, c_in});
  ValueId mixed = ops::add_bias_rows(ctx.tape, ops::matmul(ctx.tape, flat, pw), bs);
  return ops::reshape(ctx.tape, mixed, {b, L, c_out});
}

void DscLayer::visit_params(const ParamVisitor& fn) {
  fn(name + "/depthwise", depthwise,
     {ParamInit::Kind::weight, kernel, kernel});
  fn(name + "/pointwise", pointwise, {ParamInit::Kind::weight, c_in, c_out});
  fn(name + "/bias", bias, {ParamInit::Kind::bias, 0, 0});
}

// ---- GruLayer

GruLayer GruLayer::make(std::string name, std::size_t c_in, std::size_t c_out,
                        Dtype dt) {
  GruLayer l;
  l.name = std::move(name);
  l.c_in = c_in;
  l.c_out = c_out;
  l.w_z = make_param({c_in, c_out}, dt);
  l.u_z = make_param({c_out, c_out}, dt);
  l.b_z = make_param({c_out}, dt);
  l.w_r = make_param({c_in, c_out}, dt);
  l.u_r = make_param({c_out, c_out}, dt);
  l.b_r = make_param({c_out}, dt);
  l.w_h = make_param({c_in, c_out}, dt);
  l.u_h = make_param({c_out, c_out}, dt);
  l.b_h = make_param({c_out}, dt);
  return l;
}

ValueId GruLayer::forward(FwdCtx& ctx, ValueId x) {
  const Tensor& xv = ctx.tape.value(x);
  if (xv.rank() != 3 || xv.extent(2) != c_in)
    throw ShapeError("gru '" + name + "': expected [batch, L, " +
                     std::to_string(c_in) + "], got " + xv.shape_str());
  const std::size_t b = xv.extent(0), L = xv.extent(1);
  Tape& t = ctx.tape;
  ValueId wz = ctx.stage(name + "/w_z", w_z), uz = ctx.stage(name + "/u_z", u_z),
          bz = ctx.stage(name + "/b_z", b_z);
  ValueId wr = ctx.stage(name + "/w_r", w_r), ur = ctx.stage(name + "/u_r", u_r),
          br = ctx.stage(name + "/b_r", b_r);
  ValueId wh = ctx.stage(name + "/w_h", w_h), uh = ctx.stage(name + "/u_h", u_h),
          bh = ctx.stage(name + "/b_h", b_h);

  ValueId h = t.leaf(Tensor::zeros({b, c_out}, xv.dtype()));
  std::vector<ValueId> steps;
  steps.reserve(L);
  for (std::size_t p = 0; p < L; ++p) {
    ValueId xt = ops::slice_time(t, x, p);
    ValueId z = ops::sigmoid(
        t, ops::add_bias_rows(
               t, ops::add(t, ops::matmul(t, xt, wz), ops::matmul(t, h, uz)),
               bz));
    ValueId r = ops::sigmoid(
        t, ops::add_bias_rows(
               t, ops::add(t, ops::matmul(t, xt, wr), ops::matmul(t, h, ur)),
               br));
    ValueId cand = ops::tanh_(
        t, ops::add_bias_rows(
               t,
               ops::add(t, ops::matmul(t, xt, wh),
                        ops::matmul(t, ops::mul(t, r, h), uh)),
               bh));
    ValueId keep = ops::mul(t, ops::affine_scalar(t, z, -1.0, 1.0), h);
    h = ops::add(t, keep, ops::mul(t, z, cand));
    steps.push_back(h);
  }
  return ops::stack_time(t, steps);
}

void GruLayer::visit_params(const ParamVisitor& fn) {
  const ParamInit w{ParamInit::Kind::weight, c_in, c_out};
  const ParamInit u{ParamInit::Kind::weight, c_out, c_out};
  const ParamInit b{ParamInit::Kind::bias, 0, 0};
  fn(name + "/w_z", w_z, w);
  fn(name + "/u_z", u_z, u);
  fn(name + "/b_z", b_z, b);
  fn(name + "/w_r", w_r, w);
  fn(name + "/u_r", u_r, u);
  fn(name + "/b_r", b_r, b);
  fn(name + "/w_h", w_h, w);
  fn(name + "/u_h", u_h, u);
  fn(name + "/b_h", b_h, b);
}

// ---- BatchNormLayer

BatchNormLayer BatchNormLayer::make(std::string name, std::size_t channels,
                                    Dtype dt) {
  BatchNormLayer l;
  l.name = std::move(name);
  l.channels = channels;
  l.gamma = make_param({channels}, dt);
  l.beta = make_param({channels}, dt);
  l.running_mean.assign(channels, 0.0);
  l.running_var.assign(channels, 1.0);
  return l;
}

ValueId BatchNormLayer::forward(FwdCtx& ctx, ValueId x) {
  ValueId g = ctx.stage(name + "/gamma", gamma);
  ValueId b = ctx.stage(name + "/beta", beta);
  if (ctx.mode == Mode::train) {
    std::vector<double> bm, bv;
    ValueId y = ops::batchnorm_train(ctx.tape, x, g, b, eps, &bm, &bv);
    for (std::size_t j = 0; j < channels; ++j) {
      running_mean[j] = momentum * running_mean[j] + (1.0 - momentum) * bm[j];
      running_var[j] = momentum * running_var[j] + (1.0 - momentum) * bv[j];
    }
    return y;
  }
  return ops::batchnorm_infer(ctx.tape, x, g, b, running_mean, running_var,
                              eps);
}

void BatchNormLayer::visit_params(const ParamVisitor& fn) {
  fn(name + "/gamma", gamma, {ParamInit::Kind::gain, 0, 0});
  fn(name + "/beta", beta, {ParamInit::Kind::bias, 0, 0});
}

void BatchNormLayer::visit_state(const StateVisitor& fn) {
  fn(name + "/running_mean", running_mean);
  fn(name + "/running_var", running_var);
}

// ---- MaxPoolLayer

ValueId MaxPoolLayer::forward(FwdCtx& ctx, ValueId x) const {
  return ops::maxpool1d(ctx.tape, x, size, stride);
}

// ---- DropoutLayer

DropoutLayer DropoutLayer::make(double rate) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout: rate must be in [0, 1), got " +
                      std::to_string(rate));
  return DropoutLayer{rate};
}

ValueId DropoutLayer::forward(FwdCtx& ctx, ValueId x) const {
  if (ctx.mode == Mode::infer || rate == 0.0) return x;
  if (!ctx.rng)
    throw Error("dropout: train mode forward needs a random stream");
  const Tensor& xv = ctx.tape.value(x);
  Tensor mask(xv.shape(), xv.dtype());
  const double scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.numel(); ++i)
    mask(i) = ctx.rng->bernoulli(rate) ? 0.0 : scale;
  return ops::mul(ctx.tape, x, ctx.tape.leaf(std::move(mask)));
}

// ---- LinearLayer

LinearLayer LinearLayer::make(std::string name, std::size_t c_in,
                              std::size_t c_out, Dtype dt) {
  LinearLayer l;
  l.name = std::move(name);
  l.c_in = c_in;
  l.c_out = c_out;
  l.w = make_param({c_in, c_out}, dt);
  l.b = make_param({c_out}, dt);
  return l;
}

ValueId LinearLayer::forward_rows(FwdCtx& ctx, ValueId x) {
  ValueId wi = ctx.stage(name + "/w", w);
  ValueId bi = ctx.stage(name + "/b", b);
  return ops::add_bias_rows(ctx.tape, ops::matmul(ctx.tape, x, wi), bi);
}

ValueId LinearLayer::forward_positions(FwdCtx& ctx, ValueId x) {
  const Tensor& xv = ctx.tape.value(x);
  if (xv.rank() != 3 || xv.extent(2) != c_in)
    throw ShapeError("linear '" + name + "': expected [batch, L, " +
                     std::to_string(c_in) + "], got " + xv.shape_str());
  const std::size_t b3 = xv.extent(0), L = xv.extent(1);
  ValueId flat = ops::reshape(ctx.tape, x, {b3 * L, c_in});
  ValueId y = forward_rows(ctx, flat);
  return ops::reshape(ctx.tape, y, {b3, L, c_out});
}

void LinearLayer::visit_params(const ParamVisitor& fn) {
  fn(name + "/w", w, {ParamInit::Kind::weight, c_in, c_out});
  fn(name + "/b", b, {ParamInit::Kind::bias, 0, 0});
}

// ---- AttentionLayer

AttentionLayer AttentionLayer::make(std::string name, std::size_t c_in,
                                    std::size_t width, bool projections,
                                    Dtype dt) {
  AttentionLayer l;
  l.name = std::move(name);
  l.c_in = c_in;
  l.projections = projections;
  if (projections) {
    if (width == 0)
      throw ConfigError("attention '" + l.name + "': width must be positive");
    l.width = width;
    l.w_q = make_param({c_in, width}, dt);
    l.w_k = make_param({c_in, width}, dt);
    l.w_v = make_param({c_in, width}, dt);
  } else {
    if (width != 0 && width != c_in)
      throw ConfigError("attention '" + l.name +
                        "': without projections the width is the input "
                        "width " +
                        std::to_string(c_in));
    l.width = c_in;
  }
  return l;
}

AttentionLayer::Out AttentionLayer::forward(FwdCtx& ctx, ValueId x) {
  Tape& t = ctx.tape;
  const Tensor& xv = t.value(x);
  if (xv.rank() != 3 || xv.extent(2) != c_in)
    throw ShapeError("attention '" + name + "': expected [batch, L, " +
                     std::to_string(c_in) + "], got " + xv.shape_str());
  const std::size_t b = xv.extent(0), L = xv.extent(1);
  ValueId q = x, k = x, v = x;
  if (projections) {
    ValueId wq = ctx.stage(name + "/w_q", w_q);
    ValueId wk = ctx.stage(name + "/w_k", w_k);
    ValueId wv = ctx.stage(name + "/w_v", w_v);
    ValueId flat = ops::reshape(t, x, {b * L, c_in});
    q = ops::reshape(t, ops::matmul(t, flat, wq), {b, L, width});
    k = ops::reshape(t, ops::matmul(t, flat, wk), {b, L, width});
    v = ops::reshape(t, ops::matmul(t, flat, wv), {b, L, width});
  }
  const double scale = 1.0 / std::sqrt(double(out_width()));
  ValueId scores = ops::affine_scalar(
      t, ops::bmm(t, q, ops::transpose_last2(t, k)), scale, 0.0);
  ValueId a = ops::reshape(
      t, ops::softmax_rows(t, ops::reshape(t, scores, {b * L, L})),
      {b, L, L});
  if (ctx.attention_maps) ctx.attention_maps->push_back(a);
  return {ops::bmm(t, a, v), a};
}

void AttentionLayer::visit_params(const ParamVisitor& fn) {
  if (!projections) return;
  const ParamInit w{ParamInit::Kind::weight, c_in, width};
  fn(name + "/w_q", w_q, w);
  fn(name + "/w_k", w_k, w);
  fn(name + "/w_v", w_v, w);
}

// ---- PlainBlock

PlainBlock PlainBlock::make(std::string name, std::size_t c_in,
                            std::size_t c_out, std::size_t kernel,
                            MaxPoolLayer pool, double dropout_rate, Dtype dt) {
  PlainBlock b;
  b.name = name;
  b.c_in = c_in;
  b.c_out = c_out;
  b.dsc = DscLayer::make(name + "/dsc", c_in, c_out, kernel, dt);
  b.gru = GruLayer::make(name + "/gru", c_out, c_out, dt);
  b.bn = BatchNormLayer::make(name + "/bn", c_out, dt);
  b.pool = pool;
  b.drop = DropoutLayer::make(dropout_rate);
  b.bridge = LinearLayer::make(name + "/bridge", c_out, c_out, dt);
  return b;
}

ValueId PlainBlock::forward(FwdCtx& ctx, ValueId x) {
  ValueId y = dsc.forward(ctx, x);
  y = gru.forward(ctx, y);
  y = bn.forward(ctx, y);
  y = ops::relu(ctx.tape, y);
  y = pool.forward(ctx, y);
  y = drop.forward(ctx, y);
  return bridge.forward_positions(ctx, y);
}

void PlainBlock::visit_params(const ParamVisitor& fn) {
  dsc.visit_params(fn);
  gru.visit_params(fn);
  bn.visit_params(fn);
  bridge.visit_params(fn);
}

void PlainBlock::visit_state(const StateVisitor& fn) { bn.visit_state(fn); }

std::size_t PlainBlock::param_count() const {
  return dsc.param_count() + gru.param_count() + bn.param_count() +
         bridge.param_count();
}

}  // namespace dualnet
