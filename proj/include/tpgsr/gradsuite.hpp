#pragma once
// Finite-difference gradient suite: central-difference checks (f64) for every
// differentiable primitive, plus a miniature end-to-end two-stage pipeline.
// Primitives must stay under 1e-4 max relative error, the pipeline under
// 1e-3.

#include <chrono>

#include "tpgsr/gradcheck.hpp"
#include "tpgsr/losses.hpp"
#include "tpgsr/network.hpp"

namespace tpgsr {

struct GradCheckCase {
  std::string name;
  double max_rel = 0;
  int64_t checked = 0;
  double tol = 0;
  bool pass = false;
  double seconds = 0;
};

namespace detail {

using DT = Tensor<double>;

inline DT probe_sum(const DT& y, uint64_t seed) {
  Rng rng(seed);
  auto r = DT::randn(y.shape(), rng);
  return sum_all(mul(y, r));
}

inline DT uniform_t(const Shape& s, Rng& rng, double lo, double hi) {
  auto t = DT::empty(s);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline DT rows_t(const Shape& s, Rng& rng) {
  auto t = uniform_t(s, rng, 0.05, 1.0);
  int64_t a = s.back();
  int64_t rows = numel_of(s) / a;
  for (int64_t r = 0; r < rows; ++r) {
    double sum = 0;
    for (int64_t j = 0; j < a; ++j) sum += t.data()[size_t(r * a + j)];
    for (int64_t j = 0; j < a; ++j) t.data()[size_t(r * a + j)] /= sum;
  }
  return t;
}

template <class F>
GradCheckCase run_case(const std::string& name, double tol, F&& fn) {
  auto t0 = std::chrono::steady_clock::now();
  FdReport rep = fn();
  auto t1 = std::chrono::steady_clock::now();
  GradCheckCase c;
  c.name = name;
  c.max_rel = rep.max_rel;
  c.checked = rep.checked;
  c.tol = tol;
  c.pass = rep.max_rel < tol && rep.checked > 0;
  c.seconds = std::chrono::duration<double>(t1 - t0).count();
  return c;
}

}  // namespace detail

// Miniature pipeline check: two stages without the gradient cut so every
// parameter of every module sits on one differentiable path.
inline GradCheckCase grad_check_pipeline() {
  using detail::DT;
  return detail::run_case("pipeline_mini_2stage", 1e-3, [] {
    ModelConfig mc = ModelConfig::mini();
    StagePlan plan = StagePlan::make(2);
    plan.stop_grad_between_stages = false;
    Rng rng(91);
    TpgsrModel<double> model(mc, plan, rng);
    auto st = model.state();
    set_trainable(st, true);
    Rng srng(92);
    Recognizer<double> scorer(mc.rec, srng);
    Rng drng(93);
    auto lr = detail::uniform_t({2, 1, 8, 16}, drng, 0.05, 0.95);
    auto hr = detail::uniform_t({2, 1, 16, 32}, drng, 0.05, 0.95);
    DT t_h;
    {
      NoGradGuard ng;
      t_h = scorer.tp(hr, false).detach();
    }
    lr.set_requires_grad(true);
    std::vector<DT> inputs = {lr};
    int64_t total = lr.numel();
    for (auto& [name, p] : st.params) {
      inputs.push_back(p);
      total += p.numel();
    }
    LossConfig lc;
    int64_t stride = std::max<int64_t>(1, total / 700);
    // Small h keeps ReLU-kink crossings out of the estimate.
    return fd_check(
        inputs,
        [&] {
          auto stages = multistage_forward(model, lr, true, true);
          std::vector<DT> losses;
          for (const auto& s : stages)
            losses.push_back(stage_loss(s.sr_img, hr, s.tp, t_h, lc));
          return multistage_loss(losses, model.plan.lambdas);
        },
        1e-6, stride);
  });
}

// Every differentiable primitive, each against central differences.
inline std::vector<GradCheckCase> run_grad_suite() {
  using detail::DT;
  using detail::probe_sum;
  using detail::rows_t;
  using detail::uniform_t;
  std::vector<GradCheckCase> cases;
  const double kTol = 1e-4;

  cases.push_back(detail::run_case("conv2d", kTol, [] {
    Rng rng(1);
    auto x = DT::randn({2, 3, 6, 7}, rng);
    auto w = DT::randn({4, 3, 3, 3}, rng, 0.5);
    auto b = DT::randn({4}, rng, 0.1);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    return fd_check({x, w, b}, [&] {
      return probe_sum(
          conv2d(x, w, std::optional<DT>(b), 1, 1, 1, 1), 2);
    });
  }));

  cases.push_back(detail::run_case("deconv2d", kTol, [] {
    Rng rng(3);
    auto x = DT::randn({1, 3, 4, 5}, rng);
    auto w = DT::randn({3, 4, 3, 3}, rng, 0.5);
    auto b = DT::randn({4}, rng, 0.1);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    return fd_check({x, w, b}, [&] {
      return probe_sum(
          deconv2d(x, w, 2, 2, 1, 1, 1, 1, std::optional<DT>(b)), 4);
    });
  }));

  cases.push_back(detail::run_case("batchnorm2d", kTol, [] {
    Rng rng(5);
    auto x = DT::randn({3, 4, 5, 6}, rng);
    auto gamma = DT::full({4}, 1.0);
    auto beta = DT::full({4}, 0.0);
    auto rm = std::make_shared<std::vector<double>>(4, 0.0);
    auto rv = std::make_shared<std::vector<double>>(4, 1.0);
    x.set_requires_grad(true);
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
    return fd_check({x, gamma, beta}, [&] {
      return probe_sum(batchnorm2d(x, gamma, beta, *rm, *rv, true), 6);
    });
  }));

  cases.push_back(detail::run_case("maxpool2d", kTol, [] {
    Rng rng(7);
    auto x = DT::randn({2, 3, 6, 8}, rng);
    x.set_requires_grad(true);
    return fd_check({x}, [&] { return probe_sum(maxpool2d(x, 2, 2), 8); });
  }));

  cases.push_back(detail::run_case("elementwise_relu_add_mul", kTol, [] {
    Rng rng(9);
    auto x = DT::randn({2, 3, 4, 5}, rng);
    auto y = DT::randn({2, 3, 4, 5}, rng);
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    return fd_check(
        {x, y},
        [&] {
          return probe_sum(relu(add(mul(x, y), mul_scalar(x, 0.7))), 10);
        },
        1e-6);  // small h keeps ReLU-kink crossings out of the estimate
  }));

  cases.push_back(detail::run_case("concat_channels", kTol, [] {
    Rng rng(11);
    auto a = DT::randn({2, 2, 4, 5}, rng);
    auto b = DT::randn({2, 3, 4, 5}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    return fd_check({a, b},
                    [&] { return probe_sum(concat_channels(a, b), 12); });
  }));

  cases.push_back(detail::run_case("softmax_lastdim", kTol, [] {
    Rng rng(13);
    auto x = DT::randn({2, 4, 6}, rng);
    x.set_requires_grad(true);
    return fd_check({x}, [&] { return probe_sum(softmax_lastdim(x), 14); });
  }));

  cases.push_back(detail::run_case("l1_loss", kTol, [] {
    Rng rng(15);
    auto a = DT::randn({2, 3, 4, 5}, rng);
    auto b = DT::randn({2, 3, 4, 5}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    return fd_check({a, b}, [&] { return l1_loss(a, b); }, 1e-6);
  }));

  cases.push_back(detail::run_case("weighted_sum", kTol, [] {
    Rng rng(17);
    auto a = DT::randn({}, rng);
    auto b = DT::randn({}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    return fd_check({a, b}, [&] {
      return weighted_sum<double>({a, b}, {0.25, 0.75});
    });
  }));

  cases.push_back(detail::run_case("bicubic_resize", kTol, [] {
    Rng rng(19);
    auto x = DT::randn({1, 2, 6, 8}, rng);
    x.set_requires_grad(true);
    return fd_check({x},
                    [&] { return probe_sum(bicubic_resize(x, 13, 19), 20); });
  }));

  cases.push_back(detail::run_case("pixel_shuffle", kTol, [] {
    Rng rng(21);
    auto x = DT::randn({2, 8, 3, 4}, rng);
    x.set_requires_grad(true);
    return fd_check({x}, [&] { return probe_sum(pixel_shuffle(x, 2), 22); });
  }));

  cases.push_back(detail::run_case("frame_layout_linear", kTol, [] {
    Rng rng(23);
    auto x = DT::randn({2, 3, 1, 5}, rng);
    auto w = DT::randn({4, 3}, rng, 0.5);
    auto b = DT::randn({4}, rng, 0.1);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    return fd_check({x, w, b}, [&] {
      auto frames = frames_from_map(x);
      auto out = linear_frames(frames, w, b);
      return probe_sum(map_from_frames(out), 24);
    });
  }));

  cases.push_back(detail::run_case("softmax_xent_frames", kTol, [] {
    Rng rng(25);
    auto x = DT::randn({2, 3, 5}, rng);
    x.set_requires_grad(true);
    std::vector<int> labels = {1, 0, 4, 2, 3, 0};
    return fd_check({x}, [&] { return softmax_xent_frames(x, labels); });
  }));

  cases.push_back(detail::run_case("kl_tp", kTol, [] {
    Rng rng(27);
    auto tl = rows_t({2, 3, 6}, rng);
    auto th = rows_t({2, 3, 6}, rng);
    tl.set_requires_grad(true);
    th.set_requires_grad(true);
    return fd_check({tl, th}, [&] { return kl_tp(tl, th, 1e-6); });
  }));

  cases.push_back(detail::run_case("stage_loss", kTol, [] {
    Rng rng(29);
    auto sr = uniform_t({1, 1, 4, 5}, rng, 0, 1);
    auto hr = uniform_t({1, 1, 4, 5}, rng, 0, 1);
    auto tl = rows_t({1, 3, 6}, rng);
    auto th = rows_t({1, 3, 6}, rng);
    sr.set_requires_grad(true);
    tl.set_requires_grad(true);
    LossConfig lc;
    lc.alpha = 0.7;
    lc.beta = 1.3;
    return fd_check(
        {sr, tl}, [&] { return stage_loss(sr, hr, tl, th, lc); }, 1e-6);
  }));

  cases.push_back(grad_check_pipeline());
  return cases;
}

inline bool grad_suite_passed(const std::vector<GradCheckCase>& cases) {
  for (const auto& c : cases)
    if (!c.pass) return false;
  return !cases.empty();
}

}  // namespace tpgsr
