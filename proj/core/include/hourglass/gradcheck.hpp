#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "hourglass/graph.hpp"

namespace hourglass {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double autodiff = 0;
  double numeric = 0;
};

namespace detail {

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

template <typename T>
T eval_scalar(const std::function<Var<T>(Graph<T>&, Var<T>)>& f, const Tensor<T>& x) {
  Graph<T> g;
  Var<T> out = f(g, g.leaf(x, false));
  if (out.value().size() != 1) throw UsageError("finite_diff_check: f must return a scalar");
  return out.value()[0];
}

// Fourth-order central difference (8 (f(+h) - f(-h)) - (f(+2h) - f(-2h))) / 12h.
// Truncation error is O(h^4), which allows steps large enough to keep
// round-off small even for near-zero derivatives. Pairing the differences
// makes an unaffected f give exactly 0.
template <typename Eval>
double central_difference(const Eval& at, double h) {
  const double near = at(h) - at(-h);
  const double far = at(2 * h) - at(-2 * h);
  return (8 * near - far) / (12 * h);
}

}  // namespace detail

// Compares the autodiff gradient of scalar f at x with central differences,
// coordinate by coordinate. Returns the largest relative error
// |a - b| / max(|a|, |b|, 1e-8).
template <typename T>
GradCheckResult finite_diff_check(const std::function<Var<T>(Graph<T>&, Var<T>)>& f, const Tensor<T>& x,
                                  T eps = T(1e-3)) {
  if (!(eps > T(0))) throw UsageError("finite_diff_check: eps must be positive");
  const T base = detail::eval_scalar(f, x);
  if (detail::eval_scalar(f, x) != base) throw AuditError("finite_diff_check: f is not deterministic");

  Tensor<T> grad(x.shape());
  {
    Graph<T> g;
    Var<T> in = g.leaf(x, true);
    Var<T> out = f(g, in);
    g.backward(out);
    if (const Tensor<T>* gi = g.grad(in)) grad = *gi;
  }

  GradCheckResult res;
  Tensor<T> xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto at = [&](double d) {
      xp[i] = x[i] + static_cast<T>(d);
      const double v = detail::eval_scalar(f, xp);
      xp[i] = x[i];
      return v;
    };
    const double numeric = detail::central_difference(at, static_cast<double>(eps));
    const double err = detail::rel_error(static_cast<double>(grad[i]), numeric);
    if (i == 0 || err > res.max_rel_error) res = {err, i, static_cast<double>(grad[i]), numeric};
  }
  return res;
}

// Same comparison for a registry parameter read by `f`; perturbs the
// parameter in place and restores it.
template <typename T>
GradCheckResult finite_diff_check_param(const std::function<Var<T>(Graph<T>&)>& f, Parameter<T>& p,
                                        T eps = T(1e-3)) {
  if (!(eps > T(0))) throw UsageError("finite_diff_check_param: eps must be positive");
  auto eval = [&] {
    Graph<T> g;
    return static_cast<double>(f(g).value()[0]);
  };
  p.zero_grad();
  {
    Graph<T> g;
    g.backward(f(g));
  }
  // A parameter the loss never reached has zero gradient.
  const Tensor<T> grad = p.grad.shape() == p.value.shape() ? p.grad : Tensor<T>(p.value.shape());
  GradCheckResult res;
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const T orig = p.value[i];
    const auto at = [&](double d) {
      p.value[i] = orig + static_cast<T>(d);
      const double v = eval();
      p.value[i] = orig;
      return v;
    };
    const double numeric = detail::central_difference(at, static_cast<double>(eps));
    const double err = detail::rel_error(static_cast<double>(grad[i]), numeric);
    if (i == 0 || err > res.max_rel_error) res = {err, i, static_cast<double>(grad[i]), numeric};
  }
  return res;
}

}  // namespace hourglass
