#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcrn/rng.hpp"
#include "tcrn/tensor.hpp"

namespace tcrn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // analytic gradient at the worst coordinate
  double numeric = 0.0;   // central difference at the worst coordinate
};

/// Central-difference verification of an analytic gradient. `f` is evaluated
/// at params +/- h along `n_coords` randomly chosen coordinates (seeded, so
/// reruns probe the same coordinates). Relative error uses a 1e-8 denominator
/// floor to avoid 0/0 at exact-zero gradients. Evaluate in double; float
/// finite differences are too noisy to verify anything.
template <class F>
GradCheckReport finite_diff_check(F&& f, Tensor<double> params,
                                  const Tensor<double>& analytic_grad,
                                  double h = 1e-5, std::size_t n_coords = 10,
                                  std::uint64_t seed = 17) {
  if (params.size() != analytic_grad.size())
    throw std::invalid_argument("finite_diff_check: gradient shape mismatch");
  if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be > 0");

  std::vector<std::size_t> coords;
  if (n_coords >= params.size()) {
    coords.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) coords[i] = i;
  } else {
    Rng rng(seed);
    std::vector<std::size_t> all(params.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    rng.shuffle(all);
    coords.assign(all.begin(), all.begin() + static_cast<long>(n_coords));
  }

  GradCheckReport report;
  for (std::size_t idx : coords) {
    const double saved = params[idx];
    params[idx] = saved + h;
    const double fp = f(params);
    params[idx] = saved - h;
    const double fm = f(params);
    params[idx] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_check: non-finite f at probe");
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = analytic_grad[idx];
    const double denom =
        std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = idx;
      report.analytic = analytic;
      report.numeric = numeric;
    }
  }
  return report;
}

namespace detail {

template <class Tensorish>
double project(const Tensorish& a, const Tensor<double>& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * r[i];
  return acc;
}

}  // namespace detail

/// Verifies one named parameter gradient of a double-precision layer against
/// central differences, using sum(projection .* forward(input)) as the
/// scalar objective. `prepare` runs before every forward (state resets).
template <class Layer>
GradCheckReport check_layer_param(Layer& layer, const std::string& name,
                                  const Tensor<double>& input,
                                  const Tensor<double>& projection,
                                  const std::function<void()>& prepare = {},
                                  double h = 1e-5, std::size_t n_coords = 10,
                                  std::uint64_t seed = 17) {
  auto params = layer.params();
  Tensor<double>* value = nullptr;
  Tensor<double>* grad = nullptr;
  for (auto& p : params)
    if (p.name == name) {
      value = p.value;
      grad = p.grad;
    }
  if (!value) throw std::invalid_argument("check_layer_param: no parameter " + name);

  layer.zero_grads();
  if (prepare) prepare();
  layer.forward(input);
  layer.backward(projection);
  Tensor<double> analytic = *grad;

  auto f = [&](const Tensor<double>& cand) {
    Tensor<double> saved = *value;
    *value = cand;
    if (prepare) prepare();
    auto out = layer.forward(input);
    *value = saved;
    return detail::project(out, projection);
  };
  return finite_diff_check(f, *value, analytic, h, n_coords, seed);
}

/// Same scheme for the gradient with respect to the layer input.
template <class Layer>
GradCheckReport check_layer_input(Layer& layer, const Tensor<double>& input,
                                  const Tensor<double>& projection,
                                  const std::function<void()>& prepare = {},
                                  double h = 1e-5, std::size_t n_coords = 10,
                                  std::uint64_t seed = 17) {
  layer.zero_grads();
  if (prepare) prepare();
  layer.forward(input);
  Tensor<double> analytic = layer.backward(projection);

  auto f = [&](const Tensor<double>& cand) {
    if (prepare) prepare();
    auto out = layer.forward(cand);
    return detail::project(out, projection);
  };
  return finite_diff_check(f, input, analytic, h, n_coords, seed);
}

}  // namespace tcrn
