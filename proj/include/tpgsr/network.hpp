#pragma once
// The TPGSR network: TP Transformer, TP-guided SR blocks, the SR module,
// and the multi-stage pipeline with its sharing and stop-gradient rules.

#include <optional>
#include <vector>

#include "tpgsr/recognizer.hpp"

namespace tpgsr {

// ---------------------------------------------------------------------------
// model configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
  int64_t lr_h = kLrH, lr_w = kLrW;    // SR input size
  int64_t classes = kAlphabetSize;
  int64_t sr_c = 64;                   // SR feature channels
  int64_t sr_blocks = 5;
  int64_t tpt_mid = 64;                // TP Transformer hidden channels
  RecognizerConfig rec;

  static ModelConfig standard() { return ModelConfig{}; }

  // Miniature variant for finite-difference checks: 8x16 images, C=8, L=4.
  static ModelConfig mini() {
    ModelConfig c;
    c.lr_h = 8;
    c.lr_w = 16;
    c.sr_c = 8;
    c.sr_blocks = 2;
    c.tpt_mid = 8;
    c.rec.in_h = 16;
    c.rec.in_w = 32;
    c.rec.channels = {1, 8, 8, 8, 8};
    c.rec.pools = {{2, 2}, {2, 2}, {2, 2}, {2, 1}};
    return c;
  }

  int64_t frames() const { return rec.frames(); }
};

// ---------------------------------------------------------------------------
// TP Transformer
// ---------------------------------------------------------------------------

// Four deconvolution blocks (deconv k3 + BN + ReLU) with strides
// (2,2),(2,2),(2,2),(2,1): [B,classes,1,L] -> [B,32,16,8L].
template <class T>
struct TpTransformer {
  static constexpr int64_t kOutChannels = 32;
  int64_t l = 0;
  std::vector<Deconv2dM<T>> deconvs;
  std::vector<BatchNorm2dM<T>> bns;

  TpTransformer() = default;
  TpTransformer(int64_t frames, int64_t classes, int64_t mid, Rng& rng)
      : l(frames) {
    std::vector<int64_t> ch = {classes, mid, mid, mid, kOutChannels};
    for (int i = 0; i < 4; ++i) {
      int64_t sw = i < 3 ? 2 : 1;
      deconvs.emplace_back(ch[size_t(i)], ch[size_t(i) + 1], 2, sw, 1,
                           sw - 1, rng);
      bns.emplace_back(ch[size_t(i) + 1]);
    }
  }

  // tp: [B, L, classes] probability rows.
  Tensor<T> operator()(const Tensor<T>& tp, bool training) {
    check(tp.rank() == 3, "TP transformer expects [B,L,classes], got ",
          shape_str(tp.shape()));
    check(tp.dim(1) == l, "TP transformer configured for L=", l,
          " frames, got L=", tp.dim(1));
    auto h = map_from_frames(tp);  // [B, classes, 1, L]
    for (size_t i = 0; i < deconvs.size(); ++i)
      h = relu(bns[i](deconvs[i](h), training));
    return h;
  }

  void collect(const std::string& prefix, NamedState<T>& st) {
    for (size_t i = 0; i < deconvs.size(); ++i) {
      deconvs[i].collect(prefix + ".deconv" + std::to_string(i + 1), st);
      bns[i].collect(prefix + ".bn" + std::to_string(i + 1), st);
    }
  }
};

// ---------------------------------------------------------------------------
// TP-guided SR block
// ---------------------------------------------------------------------------

// Base residual block (conv-BN-ReLU-conv-BN + residual add) with additive
// TP fusion in front: the TP feature map is resized to the image-feature
// size, concatenated, projected back to C channels by a 1x1 convolution, and
// added to the block input. A zero projection makes fusion an exact no-op.
template <class T>
struct TpGuidedSrBlock {
  Conv2dM<T> proj;  // (C+32) -> C, 1x1
  Conv2dM<T> conv1, conv2;
  BatchNorm2dM<T> bn1, bn2;

  TpGuidedSrBlock() = default;
  TpGuidedSrBlock(int64_t c, Rng& rng)
      : proj(c + TpTransformer<T>::kOutChannels, c, 1, 1, 1, 0, rng),
        conv1(c, c, 3, 1, 1, 1, rng),
        conv2(c, c, 3, 1, 1, 1, rng),
        bn1(c),
        bn2(c) {}

  // tp_feat must already be resized to the image-feature spatial size (the
  // alignment is shared across blocks, so the caller hoists it).
  Tensor<T> operator()(const Tensor<T>& img_feat,
                       const std::optional<Tensor<T>>& tp_feat,
                       bool training) {
    Tensor<T> fused = img_feat;
    if (tp_feat.has_value()) {
      check(tp_feat->rank() == 4 &&
                tp_feat->dim(1) == TpTransformer<T>::kOutChannels &&
                tp_feat->dim(2) == img_feat.dim(2) &&
                tp_feat->dim(3) == img_feat.dim(3),
            "aligned TP feature must be [B,32,Hf,Wf], got ",
            shape_str(tp_feat->shape()));
      fused = add(img_feat, proj(concat_channels(img_feat, *tp_feat)));
    }
    auto h = relu(bn1(conv1(fused), training));
    h = bn2(conv2(h), training);
    return add(fused, h);
  }

  void collect(const std::string& prefix, NamedState<T>& st) {
    proj.collect(prefix + ".proj", st);
    conv1.collect(prefix + ".conv1", st);
    conv2.collect(prefix + ".conv2", st);
    bn1.collect(prefix + ".bn1", st);
    bn2.collect(prefix + ".bn2", st);
  }

  void zero_projection() {
    std::fill(proj.w.data().begin(), proj.w.data().end(), T(0));
    std::fill(proj.b.data().begin(), proj.b.data().end(), T(0));
  }
};

// ---------------------------------------------------------------------------
// SR module
// ---------------------------------------------------------------------------

// head conv+ReLU -> TP-guided blocks -> body conv+BN with a long skip from
// the head output -> sub-pixel x2 upsampler -> 1-channel tail.
template <class T>
struct SrModule {
  Conv2dM<T> head;
  std::vector<TpGuidedSrBlock<T>> blocks;
  Conv2dM<T> body;
  BatchNorm2dM<T> body_bn;
  Conv2dM<T> up;
  Conv2dM<T> tail;

  SrModule() = default;
  SrModule(int64_t c, int64_t n_blocks, Rng& rng)
      : head(1, c, 3, 1, 1, 1, rng),
        body(c, c, 3, 1, 1, 1, rng),
        body_bn(c),
        up(c, 4 * c, 3, 1, 1, 1, rng),
        tail(c, 1, 3, 1, 1, 1, rng) {
    for (int64_t i = 0; i < n_blocks; ++i) blocks.emplace_back(c, rng);
  }

  Tensor<T> operator()(const Tensor<T>& lr_img,
                       const std::optional<Tensor<T>>& tp_feat,
                       bool training) {
    check(lr_img.rank() == 4 && lr_img.dim(1) == 1,
          "SR module expects [B,1,H,W] input, got ", shape_str(lr_img.shape()));
    auto h0 = relu(head(lr_img));
    // One bicubic alignment of the TP feature serves every block.
    std::optional<Tensor<T>> aligned;
    if (tp_feat.has_value()) {
      check(tp_feat->rank() == 4 &&
                tp_feat->dim(1) == TpTransformer<T>::kOutChannels,
            "TP feature must be [B,32,h,w], got ", shape_str(tp_feat->shape()));
      aligned = bicubic_resize(*tp_feat, h0.dim(2), h0.dim(3));
    }
    auto h = h0;
    for (auto& blk : blocks) h = blk(h, aligned, training);
    h = add(body_bn(body(h), training), h0);
    h = pixel_shuffle(up(h), 2);
    return tail(h);
  }

  void collect(const std::string& prefix, NamedState<T>& st) {
    head.collect(prefix + ".head", st);
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(prefix + ".block" + std::to_string(i + 1), st);
    body.collect(prefix + ".body", st);
    body_bn.collect(prefix + ".body_bn", st);
    up.collect(prefix + ".up", st);
    tail.collect(prefix + ".tail", st);
  }

  void zero_projections() {
    for (auto& blk : blocks) blk.zero_projection();
  }
};

// ---------------------------------------------------------------------------
// stage plan + full model
// ---------------------------------------------------------------------------

struct StagePlan {
  int64_t n = 1;
  std::vector<double> lambdas;  // empty -> default_lambdas(n)
  bool share_sr = true;
  bool share_tpg = false;
  bool stop_grad_between_stages = true;

  // N=1 -> (1); N=2 -> (1/3, 2/3); N=3 -> (1/4, 1/4, 1/2):
  // equal weights 1/(N+1) on all stages except the last, which gets 2/(N+1).
  static std::vector<double> default_lambdas(int64_t n) {
    check(n >= 1, "stage count must be >= 1, got ", n);
    std::vector<double> l(size_t(n), 1.0 / double(n + 1));
    l.back() = 2.0 / double(n + 1);
    return l;
  }

  void validate() const {
    check(n >= 1, "stage count must be >= 1, got ", n);
    check(int64_t(lambdas.size()) == n, "plan has ", lambdas.size(),
          " stage weights for ", n, " stages");
    double sum = 0;
    for (double l : lambdas) sum += l;
    check(std::fabs(sum - 1.0) <= 1e-9,
          "stage weights must sum to 1 within 1e-9, got ", sum);
  }

  static StagePlan make(int64_t n_stages, std::vector<double> lam = {}) {
    StagePlan p;
    p.n = n_stages;
    p.lambdas = lam.empty() ? default_lambdas(n_stages) : std::move(lam);
    p.validate();
    return p;
  }
};

template <class T>
struct TpgsrModel {
  ModelConfig cfg;
  StagePlan plan;
  SrModule<T> sr;
  std::vector<Recognizer<T>> recs;      // one per stage, or one if share_tpg
  std::vector<TpTransformer<T>> tpts;

  TpgsrModel() = default;
  TpgsrModel(const ModelConfig& config, const StagePlan& stage_plan, Rng& rng)
      : cfg(config), plan(stage_plan) {
    plan.validate();
    check(plan.share_sr, "per-stage SR modules are not supported");
    sr = SrModule<T>(cfg.sr_c, cfg.sr_blocks, rng);
    int64_t copies = plan.share_tpg ? 1 : plan.n;
    for (int64_t k = 0; k < copies; ++k) {
      recs.emplace_back(cfg.rec, rng);
      tpts.emplace_back(cfg.frames(), cfg.classes, cfg.tpt_mid, rng);
    }
  }

  Recognizer<T>& rec_for_stage(int64_t k) {  // k is 1-based
    return recs[size_t(plan.share_tpg ? 0 : k - 1)];
  }
  TpTransformer<T>& tpt_for_stage(int64_t k) {
    return tpts[size_t(plan.share_tpg ? 0 : k - 1)];
  }

  NamedState<T> state() {
    NamedState<T> st;
    sr.collect("tpg.shared.sr", st);
    for (size_t i = 0; i < recs.size(); ++i) {
      std::string stage = "tpg.stage" + std::to_string(i + 1);
      recs[i].collect(stage + ".rec", st);
      tpts[i].collect(stage + ".tpt", st);
    }
    return st;
  }

  NamedState<T> sr_state() {
    NamedState<T> st;
    sr.collect("tpg.shared.sr", st);
    return st;
  }

  NamedState<T> tp_state() {
    NamedState<T> st;
    for (size_t i = 0; i < recs.size(); ++i) {
      std::string stage = "tpg.stage" + std::to_string(i + 1);
      recs[i].collect(stage + ".rec", st);
      tpts[i].collect(stage + ".tpt", st);
    }
    return st;
  }
};

template <class T>
struct StageResult {
  Tensor<T> sr_img;
  Tensor<T> tp;
};

// One stage: the TP branch reads the bicubically upscaled LR image at stage 1
// and the previous stage's SR image afterwards; the SR branch always consumes
// the raw LR image. use_tp=false skips the TP branch entirely (the
// without-TP ablation arm).
template <class T>
StageResult<T> stage_forward(TpgsrModel<T>& model, int64_t k,
                             const Tensor<T>& lr_img,
                             const std::optional<Tensor<T>>& prev_sr,
                             bool training, bool use_tp = true) {
  check(k >= 1 && k <= model.plan.n, "stage index ", k, " out of range for ",
        model.plan.n, " stages");
  check((k == 1) == !prev_sr.has_value(),
        "stage 1 takes no previous SR image; later stages require one");
  StageResult<T> out;
  std::optional<Tensor<T>> tp_feat;
  if (use_tp) {
    auto& rec = model.rec_for_stage(k);
    Tensor<T> tp_input =
        k == 1 ? bicubic_resize(lr_img, rec.cfg.in_h, rec.cfg.in_w) : *prev_sr;
    out.tp = rec.tp(tp_input, training);
    tp_feat = model.tpt_for_stage(k)(out.tp, training);
  }
  out.sr_img = model.sr(lr_img, tp_feat, training);
  return out;
}

template <class T>
std::vector<StageResult<T>> multistage_forward(TpgsrModel<T>& model,
                                               const Tensor<T>& lr_img,
                                               bool training,
                                               bool use_tp = true) {
  model.plan.validate();
  std::vector<StageResult<T>> results;
  for (int64_t k = 1; k <= model.plan.n; ++k) {
    std::optional<Tensor<T>> prev;
    if (k > 1) {
      prev = results.back().sr_img;
      if (model.plan.stop_grad_between_stages) prev = prev->detach();
    }
    results.push_back(
        stage_forward(model, k, lr_img, prev, training, use_tp));
  }
  return results;
}

// Builds an N-stage model from a single-stage checkpoint: the shared SR
// module is loaded once, the stage-1 TP branch is duplicated into every
// stage. Missing parameters are reported by their first absent path.
template <class T>
TpgsrModel<T> init_multistage_from_single(const CkptData& single,
                                          const ModelConfig& cfg,
                                          const StagePlan& plan, Rng& rng) {
  TpgsrModel<T> model(cfg, plan, rng);
  CkptData remapped;
  remapped.meta = single.meta;
  for (const auto& [name, entry] : single.entries) {
    remapped.entries[name] = entry;
    const std::string stage1 = "tpg.stage1.";
    if (name.rfind(stage1, 0) == 0) {
      for (int64_t k = 2; k <= (plan.share_tpg ? 1 : plan.n); ++k)
        remapped.entries["tpg.stage" + std::to_string(k) + "." +
                         name.substr(stage1.size())] = entry;
    }
  }
  auto st = model.state();
  load_into(remapped, st);
  return model;
}

}  // namespace tpgsr
