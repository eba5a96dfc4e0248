#include "dualnet/gradcheck.hpp"

#include <cmath>

namespace dualnet {

void GradCheckReport::merge(const GradCheckReport& other) {
  checked += other.checked;
  if (other.max_rel_err > max_rel_err) {
    max_rel_err = other.max_rel_err;
    worst = other.worst;
  }
  pass = pass && other.pass;
}

static double element_error(double analytic, double numeric,
                            const GradCheckOptions& opts) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < opts.zero_band) return 0.0;
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport gradient_check_params(
    const std::function<double(std::vector<Tensor>* grads)>& eval,
    const std::vector<std::pair<std::string, Tensor*>>& params,
    const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.pass = true;
  std::vector<Tensor> analytic;
  eval(&analytic);
  if (analytic.size() != params.size())
    throw Error("gradient_check: eval produced " +
                std::to_string(analytic.size()) + " gradients for " +
                std::to_string(params.size()) + " parameters");
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi].second;
    const Tensor& g = analytic[pi];
    if (!g.same_shape(p))
      throw Error("gradient_check: gradient shape " + g.shape_str() +
                  " vs parameter shape " + p.shape_str() + " for " +
                  params[pi].first);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double keep = p(i);
      const double h = opts.step * std::max(1.0, std::abs(keep));
      p(i) = keep + h;
      const double up = eval(nullptr);
      p(i) = keep - h;
      const double down = eval(nullptr);
      p(i) = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double err = element_error(g(i), numeric, opts);
      ++rep.checked;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst = params[pi].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  rep.pass = rep.max_rel_err <= opts.tol;
  return rep;
}

GradCheckReport gradient_check(
    const std::function<ValueId(Tape&, ValueId)>& f, const Tensor& x,
    const GradCheckOptions& opts) {
  Tensor input = x;
  input.requires_grad = true;
  auto eval = [&](std::vector<Tensor>* grads) -> double {
    Tape tape;
    ValueId xid = tape.leaf(input);
    ValueId loss = f(tape, xid);
    const double value = tape.value(loss)(0);
    if (grads) {
      GradMap gm = tape.backward(loss);
      grads->clear();
      grads->push_back(gm.at(xid));
    }
    return value;
  };
  return gradient_check_params(eval, {{"x", &input}}, opts);
}

}  // namespace dualnet
