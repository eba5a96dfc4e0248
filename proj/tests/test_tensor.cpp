#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dualnet/gradcheck.hpp"
#include "dualnet/rng.hpp"
#include "dualnet/tape.hpp"
#include "dualnet/tensor.hpp"

using namespace dualnet;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t(i) = rng.uniform(lo, hi);
  return t;
}

// FD check of one primitive: loss = sum(op(x)), x random. The body must be
// a fixed function of x, so any constants have to be drawn outside it.
void check_primitive(const std::string& what,
                     const std::function<ValueId(Tape&, ValueId)>& body,
                     const Tensor& x, double tol = 1e-6) {
  auto f = [&](Tape& t, ValueId xid) {
    return ops::sum_all(t, body(t, xid));
  };
  GradCheckReport rep = gradient_check(f, x, {.tol = tol});
  INFO(what, ": max rel err ", rep.max_rel_err, " at ", rep.worst);
  CHECK(rep.pass);
}

}  // namespace

TEST_CASE("tensor shape and data invariants") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(Tensor::scalar(4.5).numel() == 1);
  CHECK(Tensor::scalar(4.5).rank() == 0);
  CHECK_THROWS_AS(Tensor({2, 0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("f32 tensors snap values to single precision") {
  const double v = 0.1;
  Tensor t = Tensor::from({2}, {v, 1.0 / 3.0}, Dtype::f32);
  CHECK(t(0) == double(float(v)));
  CHECK(t(1) == double(float(1.0 / 3.0)));
  Tensor d = t.cast(Dtype::f64);
  CHECK(d(0) == double(float(v)));
}

TEST_CASE("matmul matches hand-computed product") {
  Tape tape;
  ValueId a = tape.leaf(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}));
  ValueId b = tape.leaf(Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12}));
  ValueId c = ops::matmul(tape, a, b);
  const Tensor& cv = tape.value(c);
  CHECK(cv.shape() == std::vector<std::size_t>{2, 2});
  CHECK(cv(0, 0) == 58.0);
  CHECK(cv(0, 1) == 64.0);
  CHECK(cv(1, 0) == 139.0);
  CHECK(cv(1, 1) == 154.0);
}

TEST_CASE("matmul rejects mismatched inner extents") {
  Tape tape;
  ValueId a = tape.leaf(Tensor({2, 3}));
  ValueId b = tape.leaf(Tensor({4, 2}));
  CHECK_THROWS_WITH_AS(ops::matmul(tape, a, b),
                       doctest::Contains("matmul"), ShapeError);
}

TEST_CASE("add rejects shape mismatch with both shapes in the message") {
  Tape tape;
  ValueId a = tape.leaf(Tensor({4, 8}));
  ValueId b = tape.leaf(Tensor({4, 9}));
  try {
    ops::add(tape, a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(4, 8)") != std::string::npos);
    CHECK(msg.find("(4, 9)") != std::string::npos);
  }
}

TEST_CASE("concat_channels concatenates along the channel axis") {
  Tape tape;
  Rng rng(11);
  ValueId a = tape.leaf(random_tensor({5, 3}, rng));
  ValueId b = tape.leaf(random_tensor({5, 2}, rng));
  ValueId c = tape.leaf(random_tensor({5, 3}, rng));
  ValueId out = ops::concat_channels(tape, {a, b, c});
  const Tensor& ov = tape.value(out);
  CHECK(ov.shape() == std::vector<std::size_t>{5, 8});
  CHECK(ov(2, 0) == tape.value(a)(2, 0));
  CHECK(ov(2, 3) == tape.value(b)(2, 0));
  CHECK(ov(2, 5) == tape.value(c)(2, 0));
}

TEST_CASE("concat_channels names the offending input on mismatch") {
  Tape tape;
  ValueId a = tape.leaf(Tensor({5, 3}));
  ValueId b = tape.leaf(Tensor({6, 2}));
  try {
    ops::concat_channels(tape, {a, b});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("input 1") != std::string::npos);
  }
}

TEST_CASE("softmax rows sum to one and equal logits give uniform rows") {
  Tape tape;
  Rng rng(7);
  ValueId x = tape.leaf(random_tensor({6, 9}, rng, -4, 4));
  ValueId y = ops::softmax_rows(tape, x);
  const Tensor& yv = tape.value(y);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 9; ++j) s += yv(i, j);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  ValueId u = tape.leaf(Tensor::full({2, 5}, 3.25));
  const Tensor& uv = tape.value(ops::softmax_rows(tape, u));
  for (std::size_t j = 0; j < 5; ++j) CHECK(uv(0, j) == doctest::Approx(0.2));
}

TEST_CASE("softmax is stable under large logits") {
  Tape tape;
  ValueId x = tape.leaf(Tensor::from({1, 3}, {1000.0, 1000.0, 999.0}));
  const Tensor& yv = tape.value(ops::softmax_rows(tape, x));
  CHECK(yv.all_finite());
  CHECK(yv(0, 0) == doctest::Approx(yv(0, 1)));
  CHECK(yv(0, 2) < yv(0, 0));
}

TEST_CASE("maxpool keeps length with stride 1 and right pad") {
  Tape tape;
  ValueId x = tape.leaf(Tensor::from({1, 3, 1}, {1, 3, 2}));
  ValueId y = ops::maxpool1d(tape, x, 2, 1);
  const Tensor& yv = tape.value(y);
  CHECK(yv.shape() == std::vector<std::size_t>{1, 3, 1});
  CHECK(yv(0, 0, 0) == 3.0);
  CHECK(yv(0, 1, 0) == 3.0);
  CHECK(yv(0, 2, 0) == 2.0);
}

TEST_CASE("maxpool stride 2 halves length rounding up") {
  Tape tape;
  Rng rng(3);
  ValueId x = tape.leaf(random_tensor({2, 7, 3}, rng));
  const Tensor& yv = tape.value(ops::maxpool1d(tape, x, 2, 2));
  CHECK(yv.shape() == std::vector<std::size_t>{2, 4, 3});
}

TEST_CASE("depthwise conv applies same padding per channel") {
  Tape tape;
  // kernel (1, 0, 0) shifts the sequence right by one with zero fill
  ValueId x = tape.leaf(Tensor::from({1, 4, 1}, {1, 2, 3, 4}));
  ValueId k = tape.leaf(Tensor::from({3, 1}, {1, 0, 0}));
  const Tensor& yv = tape.value(ops::depthwise_conv1d(tape, x, k));
  CHECK(yv(0, 0, 0) == 0.0);
  CHECK(yv(0, 1, 0) == 1.0);
  CHECK(yv(0, 2, 0) == 2.0);
  CHECK(yv(0, 3, 0) == 3.0);
}

TEST_CASE("backward accumulates over reused values") {
  // y = sum(x * x + x): dy/dx = 2x + 1
  Tape tape;
  Tensor x = Tensor::from({3}, {0.5, -1.0, 2.0});
  x.requires_grad = true;
  ValueId xid = tape.leaf(x);
  ValueId y = ops::sum_all(tape, ops::add(tape, ops::mul(tape, xid, xid), xid));
  GradMap g = tape.backward(y);
  const Tensor& gx = g.at(xid);
  CHECK(gx(0) == doctest::Approx(2.0));
  CHECK(gx(1) == doctest::Approx(-1.0));
  CHECK(gx(2) == doctest::Approx(5.0));
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  Tensor x = Tensor({2, 2});
  x.requires_grad = true;
  ValueId xid = tape.leaf(x);
  CHECK_THROWS_AS(tape.backward(xid), ShapeError);
}

TEST_CASE("leaves untouched by the loss get zero gradients") {
  Tape tape;
  Tensor a = Tensor::full({2}, 1.0);
  a.requires_grad = true;
  Tensor b = Tensor::full({3}, 2.0);
  b.requires_grad = true;
  ValueId aid = tape.leaf(a);
  ValueId bid = tape.leaf(b);
  ValueId loss = ops::sum_all(tape, aid);
  GradMap g = tape.backward(loss);
  CHECK(g.at(aid)(0) == 1.0);
  const Tensor& gb = g.at(bid);
  CHECK(gb.shape() == std::vector<std::size_t>{3});
  for (std::size_t i = 0; i < 3; ++i) CHECK(gb(i) == 0.0);
}

TEST_CASE("non-grad leaves are excluded from the gradient map") {
  Tape tape;
  Tensor a = Tensor::full({2}, 1.0);
  ValueId aid = tape.leaf(a);
  ValueId loss = ops::sum_all(tape, aid);
  GradMap g = tape.backward(loss);
  CHECK(g.find(aid) == g.end());
}

TEST_CASE("finite checks are opt-in and name the op") {
  Tensor x = Tensor::from({2}, {1e308, 1e308});
  {
    Tape tape;
    ValueId xid = tape.leaf(x);
    CHECK_NOTHROW(ops::add(tape, xid, xid));
  }
  {
    Tape tape;
    tape.set_check_finite(true);
    ValueId xid = tape.leaf(x);
    CHECK_THROWS_WITH_AS(ops::add(tape, xid, xid),
                         doctest::Contains("add"), NumericError);
  }
}

TEST_CASE("primitive gradients match central differences") {
  Rng rng(92);
  Tensor x23 = random_tensor({2, 3}, rng);
  Tensor x34 = random_tensor({3, 4}, rng);
  Tensor x243 = random_tensor({2, 4, 3}, rng);
  Tensor c34 = random_tensor({3, 4}, rng);
  Tensor c43 = random_tensor({4, 3}, rng);
  Tensor c23 = random_tensor({2, 3}, rng);
  Tensor c242 = random_tensor({2, 4, 2}, rng);
  Tensor c3 = random_tensor({3}, rng);
  Tensor c54 = random_tensor({5, 4}, rng);
  Tensor c22 = random_tensor({2, 2}, rng);

  check_primitive("matmul lhs", [&](Tape& t, ValueId x) {
    ValueId b = t.leaf(c34);
    return ops::matmul(t, x, b);
  }, x23);
  check_primitive("matmul rhs", [&](Tape& t, ValueId x) {
    ValueId a = t.leaf(c43);
    return ops::matmul(t, a, x);
  }, x34);
  check_primitive("bmm", [&](Tape& t, ValueId x) {
    ValueId b = t.leaf(c242);
    return ops::bmm(t, ops::transpose_last2(t, x), b);
  }, x243);
  check_primitive("transpose2d", [&](Tape& t, ValueId x) {
    return ops::transpose2d(t, x);
  }, x23);
  check_primitive("add", [&](Tape& t, ValueId x) {
    ValueId b = t.leaf(c23);
    return ops::add(t, x, b);
  }, x23);
  check_primitive("mul", [&](Tape& t, ValueId x) {
    ValueId b = t.leaf(c23);
    return ops::mul(t, x, b);
  }, x23);
  check_primitive("affine_scalar", [&](Tape& t, ValueId x) {
    return ops::affine_scalar(t, x, -2.5, 0.75);
  }, x23);
  check_primitive("add_bias_rows x", [&](Tape& t, ValueId x) {
    ValueId b = t.leaf(c3);
    return ops::add_bias_rows(t, x, b);
  }, x23);
  check_primitive("add_bias_rows bias", [&](Tape& t, ValueId x) {
    ValueId a = t.leaf(c54);
    return ops::add_bias_rows(t, a, x);
  }, random_tensor({4}, rng));
  check_primitive("concat_channels", [&](Tape& t, ValueId x) {
    ValueId b = t.leaf(c22);
    return ops::concat_channels(t, {x, b});
  }, x23);
  check_primitive("relu", [&](Tape& t, ValueId x) {
    return ops::relu(t, x);
  }, x23);
  check_primitive("sigmoid", [&](Tape& t, ValueId x) {
    return ops::sigmoid(t, x);
  }, x23);
  check_primitive("tanh", [&](Tape& t, ValueId x) {
    return ops::tanh_(t, x);
  }, x23);
  Tensor w23 = random_tensor({2, 3}, rng);
  check_primitive("softmax_rows", [&](Tape& t, ValueId x) {
    // weighted sum, otherwise the row-sum of one hides errors
    ValueId y = ops::softmax_rows(t, x);
    ValueId w = t.leaf(w23);
    return ops::mul(t, y, w);
  }, x23);
  check_primitive("reshape", [&](Tape& t, ValueId x) {
    return ops::reshape(t, x, {3, 2});
  }, x23);
  check_primitive("slice/stack time", [&](Tape& t, ValueId x) {
    std::vector<ValueId> steps;
    for (std::size_t p = 0; p < 4; ++p)
      steps.push_back(ops::slice_time(t, x, p));
    std::reverse(steps.begin(), steps.end());
    return ops::stack_time(t, steps);
  }, x243);
  check_primitive("mean_time", [&](Tape& t, ValueId x) {
    return ops::mean_time(t, x);
  }, x243);
  Tensor k33 = random_tensor({3, 3}, rng);
  Tensor c253 = random_tensor({2, 5, 3}, rng);
  check_primitive("depthwise_conv1d x", [&](Tape& t, ValueId x) {
    ValueId k = t.leaf(k33);
    return ops::depthwise_conv1d(t, x, k);
  }, x243);
  check_primitive("depthwise_conv1d kernel", [&](Tape& t, ValueId x) {
    ValueId a = t.leaf(c253);
    return ops::depthwise_conv1d(t, a, x);
  }, random_tensor({3, 3}, rng));
  check_primitive("maxpool1d", [&](Tape& t, ValueId x) {
    return ops::maxpool1d(t, x, 2, 1);
  }, x243);
  check_primitive("clamp_min", [&](Tape& t, ValueId x) {
    return ops::clamp_min(t, x, 0.25);
  }, random_tensor({4, 4}, rng));
  check_primitive("log", [&](Tape& t, ValueId x) {
    return ops::log_(t, x);
  }, random_tensor({4, 4}, rng, 0.2, 2.0));
  check_primitive("mean_all", [&](Tape& t, ValueId x) {
    return ops::mean_all(t, x);
  }, x23);
}

TEST_CASE("batchnorm gradients match central differences") {
  Rng rng(15);
  Tensor x = random_tensor({3, 4, 2}, rng);
  Tensor gamma = random_tensor({2}, rng, 0.5, 1.5);
  Tensor beta = random_tensor({2}, rng);

  check_primitive("batchnorm_train x", [&](Tape& t, ValueId xid) {
    ValueId g = t.leaf(gamma);
    ValueId b = t.leaf(beta);
    return ops::batchnorm_train(t, xid, g, b, 1e-5, nullptr, nullptr);
  }, x, 2e-6);
  check_primitive("batchnorm_train gamma", [&](Tape& t, ValueId gid) {
    ValueId xid = t.leaf(x);
    ValueId b = t.leaf(beta);
    return ops::batchnorm_train(t, xid, gid, b, 1e-5, nullptr, nullptr);
  }, gamma, 2e-6);
  std::vector<double> mean{0.1, -0.2}, var{0.9, 1.1};
  check_primitive("batchnorm_infer x", [&](Tape& t, ValueId xid) {
    ValueId g = t.leaf(gamma);
    ValueId b = t.leaf(beta);
    return ops::batchnorm_infer(t, xid, g, b, mean, var, 1e-5);
  }, x);
}

TEST_CASE("pick_class selects labelled probabilities and checks range") {
  Tape tape;
  ValueId p = tape.leaf(Tensor::from({2, 3}, {0.2, 0.3, 0.5, 0.7, 0.1, 0.2}));
  ValueId out = ops::pick_class(tape, p, {2, 0});
  CHECK(tape.value(out)(0) == 0.5);
  CHECK(tape.value(out)(1) == 0.7);
  CHECK_THROWS_WITH_AS(ops::pick_class(tape, p, {3, 0}),
                       doctest::Contains("out of range"), DataError);
}

TEST_CASE("gradient_check flags a wrong backward rule") {
  // loss = sum(x*x) but pretend the gradient is x instead of 2x
  Tensor x = Tensor::from({3}, {0.4, 1.2, -0.7});
  auto eval = [&](std::vector<Tensor>* grads) -> double {
    double s = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x(i) * x(i);
    if (grads) grads->assign(1, x);
    return s;
  };
  GradCheckReport rep = gradient_check_params(eval, {{"x", &x}});
  CHECK_FALSE(rep.pass);
  CHECK(rep.max_rel_err > 0.1);
}
