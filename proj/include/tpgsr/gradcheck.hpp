#pragma once
// Central finite-difference verification of analytic gradients (f64 only —
// f32 rounding swamps the h^2 truncation error).

#include "tpgsr/tensor.hpp"

namespace tpgsr {

struct FdReport {
  double max_rel = 0.0;
  int64_t checked = 0;
};

// Relative error with a floor so near-zero gradient entries compare on an
// absolute scale: |a-f| / max(|a|, |f|, floor).
inline double rel_err(double a, double f, double floor_ = 1e-2) {
  return std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor_});
}

// forward() must rebuild the graph from the current contents of `inputs` and
// return a scalar. Every input is a leaf with requires_grad set by the caller;
// only those are checked. `stride` subsamples coordinates for big inputs.
template <class F>
FdReport fd_check(std::vector<Tensor<double>> inputs, F&& forward,
                  double h = 1e-5, int64_t stride = 1) {
  for (auto& in : inputs) in.zero_grad();
  Tensor<double> loss = forward();
  check(loss.numel() == 1, "fd_check: forward must return a scalar");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs)
    analytic.push_back(in.has_grad() ? in.grad()
                                     : std::vector<double>(size_t(in.numel()), 0.0));

  FdReport rep;
  NoGradGuard ng;
  for (size_t t = 0; t < inputs.size(); ++t) {
    if (!inputs[t].requires_grad()) continue;
    auto& x = inputs[t].data();
    for (size_t i = 0; i < x.size(); i += size_t(stride)) {
      const double orig = x[i];
      x[i] = orig + h;
      const double fp = forward().item();
      x[i] = orig - h;
      const double fm = forward().item();
      x[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      rep.max_rel = std::max(rep.max_rel, rel_err(analytic[t][i], fd));
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace tpgsr
