#include "tinyrl/finite_diff.hpp"

#include <algorithm>
#include <cmath>

#include "tinyrl/error.hpp"

namespace tinyrl {

namespace {

double central(const std::function<double()>& f, double& x, double step) {
  const double saved = x;
  x = saved + step;
  const double up = f();
  x = saved - step;
  const double down = f();
  x = saved;
  if (!std::isfinite(up) || !std::isfinite(down)) {
    throw NumericError("finite_diff: function is non-finite at a perturbed point");
  }
  return (up - down) / (2.0 * step);
}

void check_step(double step) {
  if (!(step > 0.0) || !std::isfinite(step)) throw ValueError("finite_diff: step must be positive");
}

}  // namespace

std::vector<Tensor> finite_diff_grad(const std::function<double()>& f, const std::vector<Tensor*>& params,
                                     double step) {
  check_step(step);
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (Tensor* p : params) {
    Tensor g(p->shape());
    for (std::size_t i = 0; i < p->size(); ++i) g[i] = central(f, (*p)[i], step);
    grads.push_back(std::move(g));
  }
  return grads;
}

std::vector<double> finite_diff_at(const std::function<double()>& f, const std::vector<Tensor*>& params,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& coords, double step) {
  check_step(step);
  std::vector<double> out;
  out.reserve(coords.size());
  for (const auto& [t, i] : coords) {
    if (t >= params.size() || i >= params[t]->size()) throw ValueError("finite_diff: coordinate out of range");
    out.push_back(central(f, (*params[t])[i], step));
  }
  return out;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

}  // namespace tinyrl
