#pragma once
// Adam optimizer over a NamedState. Moment buffers are keyed by parameter
// name so state survives freeze/unfreeze cycles and checkpoint reloads.

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "tpgsr/nn.hpp"

namespace tpgsr {

template <class T>
class Adam {
 public:
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit Adam(double learning_rate = 1e-3) : lr(learning_rate) {}

  // Applies one update to every trainable parameter that received a gradient,
  // then clears those gradients. Parameters without gradients are untouched.
  void step(NamedState<T>& st) {
    for (auto& [name, p] : st.params) {
      if (!p.requires_grad() || !p.has_grad()) continue;
      auto& slot = state_[name];
      size_t n = size_t(p.numel());
      if (slot.m.size() != n) {
        slot.m.assign(n, T(0));
        slot.v.assign(n, T(0));
        slot.t = 0;
      }
      slot.t += 1;
      double bc1 = 1.0 - std::pow(beta1, double(slot.t));
      double bc2 = 1.0 - std::pow(beta2, double(slot.t));
      T* w = p.data().data();
      const T* g = p.grad().data();
      for (size_t i = 0; i < n; ++i) {
        double gi = double(g[i]);
        double m = beta1 * double(slot.m[i]) + (1.0 - beta1) * gi;
        double v = beta2 * double(slot.v[i]) + (1.0 - beta2) * gi * gi;
        slot.m[i] = T(m);
        slot.v[i] = T(v);
        double mhat = m / bc1;
        double vhat = v / bc2;
        w[i] = T(double(w[i]) - lr * mhat / (std::sqrt(vhat) + eps));
      }
      p.zero_grad();
    }
  }

 private:
  struct Slot {
    std::vector<T> m, v;
    int64_t t = 0;
  };
  std::unordered_map<std::string, Slot> state_;
};

}  // namespace tpgsr
