#pragma once
// Loss stack: stage loss (image L1 + TP L1 + TP KL divergence) and the
// lambda-weighted multi-stage combination.

#include "tpgsr/ops.hpp"

namespace tpgsr {

struct LossConfig {
  double alpha = 1.0;    // weight of the TP L1 term
  double beta = 1.0;     // weight of the TP KL term
  double epsilon = 1e-6; // KL division guard

  void validate() const {
    check(alpha >= 0, "alpha must be >= 0, got ", alpha);
    check(beta >= 0, "beta must be >= 0, got ", beta);
    check(epsilon > 0, "epsilon must be > 0, got ", epsilon);
  }
};

// L = L1(sr, hr) + alpha * L1(t_L, t_H) + beta * KL(t_L || t_H).
// t_H is a fixed target: it is detached here so no gradient reaches its
// producer. Image and TP L1 terms are means over all elements.
template <class T>
Tensor<T> stage_loss(const Tensor<T>& sr_img, const Tensor<T>& hr_img,
                     const Tensor<T>& t_l, const Tensor<T>& t_h,
                     const LossConfig& cfg) {
  cfg.validate();
  auto t_h_const = t_h.detach();
  auto img_term = l1_loss(sr_img, hr_img);
  auto tp_term = l1_loss(t_l, t_h_const);
  auto kl_term = kl_tp(t_l, t_h_const, T(cfg.epsilon));
  return weighted_sum<T>({img_term, tp_term, kl_term},
                         {T(1), T(cfg.alpha), T(cfg.beta)});
}

// Same computation, but also reports the unweighted term magnitudes so
// training logs can expose each contribution.
template <class T>
struct StageLossTerms {
  Tensor<T> total;
  double img_l1 = 0;
  double tp_l1 = 0;
  double tp_kl = 0;
};

template <class T>
StageLossTerms<T> stage_loss_terms(const Tensor<T>& sr_img,
                                   const Tensor<T>& hr_img,
                                   const Tensor<T>& t_l, const Tensor<T>& t_h,
                                   const LossConfig& cfg) {
  cfg.validate();
  auto t_h_const = t_h.detach();
  auto img_term = l1_loss(sr_img, hr_img);
  auto tp_term = l1_loss(t_l, t_h_const);
  auto kl_term = kl_tp(t_l, t_h_const, T(cfg.epsilon));
  StageLossTerms<T> out;
  out.img_l1 = double(img_term.item());
  out.tp_l1 = double(tp_term.item());
  out.tp_kl = double(kl_term.item());
  out.total = weighted_sum<T>({img_term, tp_term, kl_term},
                              {T(1), T(cfg.alpha), T(cfg.beta)});
  return out;
}

// Eq.-style weighted combination; the weights must sum to one.
template <class T>
Tensor<T> multistage_loss(const std::vector<Tensor<T>>& stage_losses,
                          const std::vector<double>& lambdas) {
  check(!stage_losses.empty(), "multistage loss needs at least one stage");
  check(stage_losses.size() == lambdas.size(), "got ", stage_losses.size(),
        " stage losses but ", lambdas.size(), " weights");
  double sum = 0;
  for (double l : lambdas) sum += l;
  check(std::fabs(sum - 1.0) <= 1e-9,
        "stage weights must sum to 1 within 1e-9, got ", sum);
  std::vector<T> w(lambdas.size());
  for (size_t i = 0; i < lambdas.size(); ++i) w[i] = T(lambdas[i]);
  return weighted_sum<T>(stage_losses, w);
}

}  // namespace tpgsr
