#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "nemo/params.hpp"
#include "nemo/tensor.hpp"

// Central-difference gradient oracle. Callers run forward+backward once to
// populate analytic gradients, then hand over the value/grad pairs plus a
// loss closure; every element is wiggled by ±eps and compared. All checks
// run in f64 so truncation error stays far below the tolerance.

namespace nemo {

struct GradSlot {
  std::string name;
  Tensor<double>* value;
  const Tensor<double>* grad;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_name;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double grad_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

inline std::vector<GradSlot> slots_from(ParamStore<double>& store) {
  std::vector<GradSlot> slots;
  for (auto& e : store.entries())
    if (e.trainable) slots.push_back({e.name, e.value, e.grad});
  return slots;
}

inline GradCheckReport grad_check(const std::function<double()>& loss_fn,
                                  const std::vector<GradSlot>& slots,
                                  double eps = 1e-5) {
  GradCheckReport report;
  for (const auto& slot : slots) {
    Tensor<double>& v = *slot.value;
    const Tensor<double>& g = *slot.grad;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
      const double saved = v[i];
      v[i] = saved + eps;
      const double lp = loss_fn();
      v[i] = saved - eps;
      const double lm = loss_fn();
      v[i] = saved;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double err = grad_rel_err(g[i], numeric);
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_name = slot.name;
        report.worst_index = i;
        report.worst_analytic = g[i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace nemo
