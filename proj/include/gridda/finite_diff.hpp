#pragma once

// Central finite-difference gradient checking (64-bit mode). The loss builder
// reconstructs the graph from the current parameter values on every call, so
// the check stays independent of any cached forward state.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gridda/graph.hpp"

namespace gridda::ad {

struct FdResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t worst_coord = -1;
};

// build: constructs the scalar loss in a fresh graph from current param values.
// Checks every coordinate unless max_coords_per_param > 0, in which case an
// evenly strided subset is used (deterministic).
inline FdResult finite_diff_check(const std::vector<Parameter<double>*>& params,
                                  const std::function<Value<double>(Graph<double>&)>& build, double epsilon = 1e-3,
                                  std::int64_t max_coords_per_param = -1) {
  // Analytic gradients at the base point.
  for (auto* p : params) p->zero_grad();
  {
    Graph<double> g;
    Value<double> loss = build(g);
    g.backward(loss);
  }
  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  auto eval = [&]() {
    Graph<double> g;
    return build(g).item();
  };

  FdResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<double>& p = *params[pi];
    const std::int64_t n = p.value.numel();
    std::int64_t stride = 1;
    if (max_coords_per_param > 0 && n > max_coords_per_param) stride = n / max_coords_per_param;
    for (std::int64_t i = 0; i < n; i += stride) {
      const double orig = p.value[i];
      p.value[i] = orig + epsilon;
      const double up = eval();
      p.value[i] = orig - epsilon;
      const double down = eval();
      p.value[i] = orig;
      const double fd = (up - down) / (2.0 * epsilon);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - fd) / std::max(1.0, std::abs(a));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = p.name;
        res.worst_coord = i;
      }
    }
  }
  return res;
}

}  // namespace gridda::ad
