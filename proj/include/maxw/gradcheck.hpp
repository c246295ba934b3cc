#pragma once

#include <functional>
#include <string>
#include <vector>

#include "maxw/rng.hpp"
#include "maxw/tensor.hpp"

namespace maxw {

struct GradReport {
  double max_rel_err = 0.0;
  std::size_t checks = 0;
  bool pass = true;
  std::string worst;  // "input 2 element 7: analytic=..., numeric=..."
};

// Central-difference check of reverse-mode gradients.
//
// `build` constructs a scalar loss from freshly created leaves; it is called
// once per perturbed evaluation, so it must be a pure function of the leaf
// values. Relative error uses max(|analytic|, |numeric|, floor) to stay
// meaningful near zero.
inline GradReport check_gradients(
    const std::vector<Shape>& shapes, const std::vector<std::vector<double>>& values,
    const std::function<Tensor(Graph&, const std::vector<Tensor>&)>& build, double h = 1e-5,
    double tol = 1e-4, double floor = 1e-6) {
  auto eval = [&](const std::vector<std::vector<double>>& vals, bool want_grad,
                  std::vector<std::vector<double>>* grads) -> double {
    Graph g;
    std::vector<Tensor> leaves;
    leaves.reserve(shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) leaves.push_back(g.leaf(shapes[i], vals[i]));
    Tensor loss = build(g, leaves);
    const double lv = loss.item();
    if (want_grad) {
      g.backward(loss);
      grads->clear();
      for (const Tensor& t : leaves) grads->push_back(t.grad());
    }
    return lv;
  };

  std::vector<std::vector<double>> analytic;
  eval(values, true, &analytic);

  GradReport rep;
  std::vector<std::vector<double>> work = values;
  for (std::size_t t = 0; t < shapes.size(); ++t) {
    for (std::size_t i = 0; i < values[t].size(); ++i) {
      const double orig = work[t][i];
      work[t][i] = orig + h;
      const double up = eval(work, false, nullptr);
      work[t][i] = orig - h;
      const double down = eval(work, false, nullptr);
      work[t][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++rep.checks;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "input " + std::to_string(t) + " element " + std::to_string(i) +
                    ": analytic=" + std::to_string(a) + ", numeric=" + std::to_string(numeric);
      }
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

// Random linear functional: reduces a tensor output to a scalar whose gradient
// exercises the full Jacobian action, not just the row sums.
inline Tensor probe_loss(const Tensor& y, Rng& rng) {
  std::vector<double> r(y.size());
  for (double& v : r) v = rng.uniform(-1.0, 1.0);
  return sum(mul(y, y.graph()->constant(y.shape(), r)));
}

// Random tensor filler for gradcheck fixtures.
inline std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace maxw
