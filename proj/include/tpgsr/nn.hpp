#pragma once
// Module layer: thin parameter-owning wrappers over the ops, with
// hierarchical parameter naming for optimizers and checkpoints.

#include <string>
#include <utility>
#include <vector>

#include "tpgsr/ops.hpp"

namespace tpgsr {

// Named view over a network's learnable tensors and persistent buffers
// (batch-norm running statistics). Collection order is the serialization
// and optimizer-iteration order, so it must be deterministic.
template <class T>
struct NamedState {
  std::vector<std::pair<std::string, Tensor<T>>> params;
  struct Buf {
    std::string name;
    std::vector<T>* data;
    int64_t size;
  };
  std::vector<Buf> buffers;

  Tensor<T>* find(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return &t;
    return nullptr;
  }
};

template <class T>
void set_trainable(NamedState<T>& st, bool trainable) {
  for (auto& [n, t] : st.params) t.set_requires_grad(trainable);
}

template <class T>
struct Conv2dM {
  Tensor<T> w, b;
  int64_t sh = 1, sw = 1, ph = 0, pw = 0;
  bool use_bias = true;

  Conv2dM() = default;
  Conv2dM(int64_t cin, int64_t cout, int64_t k, int64_t stride_h,
          int64_t stride_w, int64_t pad, Rng& rng, bool bias = true)
      : sh(stride_h), sw(stride_w), ph(pad), pw(pad), use_bias(bias) {
    double stddev = std::sqrt(2.0 / double(cin * k * k));
    w = Tensor<T>::randn({cout, cin, k, k}, rng, stddev);
    if (bias) b = Tensor<T>::zeros({cout});
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d<T>(x, w, use_bias ? std::optional<Tensor<T>>(b) : std::nullopt,
                     sh, sw, ph, pw);
  }

  void collect(const std::string& prefix, NamedState<T>& st) {
    st.params.emplace_back(prefix + ".w", w);
    if (use_bias) st.params.emplace_back(prefix + ".b", b);
  }
};

template <class T>
struct Deconv2dM {
  Tensor<T> w, b;  // w is [Cin, Cout, 3, 3]
  int64_t sh = 1, sw = 1, oph = 0, opw = 0;

  Deconv2dM() = default;
  Deconv2dM(int64_t cin, int64_t cout, int64_t stride_h, int64_t stride_w,
            int64_t out_pad_h, int64_t out_pad_w, Rng& rng)
      : sh(stride_h), sw(stride_w), oph(out_pad_h), opw(out_pad_w) {
    double stddev = std::sqrt(2.0 / double(cin * 9));
    w = Tensor<T>::randn({cin, cout, 3, 3}, rng, stddev);
    b = Tensor<T>::zeros({cout});
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return deconv2d<T>(x, w, sh, sw, 1, 1, oph, opw,
                       std::optional<Tensor<T>>(b));
  }

  void collect(const std::string& prefix, NamedState<T>& st) {
    st.params.emplace_back(prefix + ".w", w);
    st.params.emplace_back(prefix + ".b", b);
  }
};

template <class T>
struct BatchNorm2dM {
  Tensor<T> gamma, beta;
  std::vector<T> running_mean, running_var;

  BatchNorm2dM() = default;
  explicit BatchNorm2dM(int64_t channels) {
    gamma = Tensor<T>::full({channels}, T(1));
    beta = Tensor<T>::zeros({channels});
    running_mean.assign(size_t(channels), T(0));
    running_var.assign(size_t(channels), T(1));
  }

  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    return batchnorm2d<T>(x, gamma, beta, running_mean, running_var, training);
  }

  void collect(const std::string& prefix, NamedState<T>& st) {
    st.params.emplace_back(prefix + ".gamma", gamma);
    st.params.emplace_back(prefix + ".beta", beta);
    st.buffers.push_back({prefix + ".running_mean", &running_mean,
                          int64_t(running_mean.size())});
    st.buffers.push_back(
        {prefix + ".running_var", &running_var, int64_t(running_var.size())});
  }
};

template <class T>
struct LinearM {
  Tensor<T> w, b;  // w is [out_features, in_features]

  LinearM() = default;
  LinearM(int64_t in_features, int64_t out_features, Rng& rng) {
    double stddev = std::sqrt(1.0 / double(in_features));
    w = Tensor<T>::randn({out_features, in_features}, rng, stddev);
    b = Tensor<T>::zeros({out_features});
  }

  // x: [B, L, in_features] -> [B, L, out_features]
  Tensor<T> operator()(const Tensor<T>& x) const {
    return linear_frames(x, w, b);
  }

  void collect(const std::string& prefix, NamedState<T>& st) {
    st.params.emplace_back(prefix + ".w", w);
    st.params.emplace_back(prefix + ".b", b);
  }
};

}  // namespace tpgsr
