#include <gtest/gtest.h>

#include "tpgsr/gradcheck.hpp"
#include "tpgsr/network.hpp"

using namespace tpgsr;

namespace {

template <class T>
std::vector<const SamplePair*> ptrs(const std::vector<SamplePair>& v) {
  std::vector<const SamplePair*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

std::vector<SamplePair> tiny_corpus(int64_t n, uint64_t seed) {
  std::vector<SamplePair> out;
  for (int64_t i = 0; i < n; ++i) out.push_back(make_sample(seed, uint64_t(i), -1));
  return out;
}

template <class T>
bool params_bitwise_equal(NamedState<T>& a, NamedState<T>& b) {
  if (a.params.size() != b.params.size()) return false;
  for (size_t i = 0; i < a.params.size(); ++i) {
    const auto& x = a.params[i].second.data();
    const auto& y = b.params[i].second.data();
    if (x.size() != y.size()) return false;
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) != 0) return false;
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// recognizer
// ---------------------------------------------------------------------------

TEST(Recognizer, FrameCountInvariantToInputResolution) {
  Rng rng(1);
  Recognizer<float> rec(RecognizerConfig{}, rng);
  EXPECT_EQ(rec.frames(), 16);
  auto hr = Tensor<float>::zeros({2, 1, 32, 128});
  auto lr = Tensor<float>::zeros({2, 1, 16, 64});
  NoGradGuard ng;
  auto a = rec.tp(hr, false);
  auto b = rec.tp(lr, false);  // bicubically upscaled internally
  EXPECT_EQ(a.shape(), (Shape{2, 16, 37}));
  EXPECT_EQ(b.shape(), (Shape{2, 16, 37}));
}

TEST(Recognizer, TpRowsAreStochastic) {
  Rng rng(2);
  Recognizer<float> rec(RecognizerConfig{}, rng);
  Rng rng2(3);
  auto img = Tensor<float>::randn({2, 1, 32, 128}, rng2, 0.3);
  for (auto& v : img.data()) v = std::clamp(v + 0.5f, 0.0f, 1.0f);
  NoGradGuard ng;
  auto tp = rec.tp(img, false);
  for (int64_t r = 0; r < 2 * 16; ++r) {
    double sum = 0;
    for (int64_t a = 0; a < 37; ++a) {
      float p = tp.data()[size_t(r * 37 + a)];
      EXPECT_GE(p, 0.0f);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Recognizer, UntrainedZeroInputIsNearUniform) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Recognizer<float> rec(RecognizerConfig{}, rng);
    auto img = Tensor<float>::zeros({1, 1, 32, 128});
    NoGradGuard ng;
    auto tp = rec.tp(img, false);
    float mx = 0;
    for (float v : tp.data()) mx = std::max(mx, v);
    EXPECT_LT(mx, 0.5f) << "seed " << seed;
  }
}

TEST(Recognizer, EvalIsDeterministic) {
  Rng rng(4);
  Recognizer<float> rec(RecognizerConfig{}, rng);
  Rng rng2(5);
  auto img = Tensor<float>::randn({1, 1, 32, 128}, rng2, 0.2);
  NoGradGuard ng;
  auto a = rec.tp(img, false);
  auto b = rec.tp(img, false);
  EXPECT_EQ(a.data(), b.data());
}

TEST(Recognizer, DecodeFollowsCollapseRule) {
  // build a TP by hand: frames argmax to [a, a, blank, b]
  int a = char_to_class('a'), b = char_to_class('b');
  auto tp = Tensor<float>::zeros({1, 4, 37});
  auto set_peak = [&](int64_t frame, int cls) {
    for (int64_t j = 0; j < 37; ++j)
      tp.data()[size_t(frame * 37 + j)] = j == cls ? 0.9f : 0.1f / 36.0f;
  };
  set_peak(0, a);
  set_peak(1, a);
  set_peak(2, kBlankClass);
  set_peak(3, b);
  EXPECT_EQ(decode_tp(tp), (std::vector<std::string>{"ab"}));
}

TEST(Recognizer, PretrainZeroEpochsIsIdentity) {
  auto corpus = tiny_corpus(8, 11);
  auto train = ptrs<float>(corpus);
  Rng rng(6);
  Recognizer<float> rec(RecognizerConfig{}, rng);
  NamedState<float> before;
  rec.collect("rec", before);
  auto saved = serialize_checkpoint(before, CkptMeta{});
  auto rep = pretrain(rec, train, train, 0, 1e-3, 4, 123);
  NamedState<float> after;
  rec.collect("rec", after);
  EXPECT_EQ(saved, serialize_checkpoint(after, CkptMeta{}));
  EXPECT_EQ(rep.best_epoch, -1);
}

TEST(Recognizer, PretrainReducesLossWithinRun) {
  auto corpus = tiny_corpus(48, 12);
  auto val = tiny_corpus(12, 13);
  Rng rng(7);
  Recognizer<float> rec(RecognizerConfig{}, rng);
  auto rep = pretrain(rec, ptrs<float>(corpus), ptrs<float>(val), 2, 1e-3, 16, 5);
  ASSERT_EQ(rep.epoch_loss_start.size(), 2u);
  EXPECT_LT(rep.epoch_loss_end.back(), rep.epoch_loss_start.front());
}

TEST(Recognizer, PretrainRejectsEmptyDataset) {
  Rng rng(8);
  Recognizer<float> rec(RecognizerConfig{}, rng);
  std::vector<const SamplePair*> empty;
  EXPECT_THROW(pretrain(rec, empty, empty, 1, 1e-3, 4, 1), Error);
}

// ---------------------------------------------------------------------------
// TP transformer
// ---------------------------------------------------------------------------

TEST(TpTransformer, StandardShape) {
  Rng rng(20);
  TpTransformer<float> tpt(16, 37, 64, rng);
  Rng rng2(21);
  auto logits = Tensor<float>::randn({2, 16, 37}, rng2);
  auto tp = softmax_lastdim(logits);
  NoGradGuard ng;
  auto feat = tpt(tp, false);
  EXPECT_EQ(feat.shape(), (Shape{2, 32, 16, 128}));

  auto bad = Tensor<float>::zeros({1, 8, 37});
  EXPECT_THROW(tpt(bad, false), Error);
}

TEST(TpTransformer, BatchIndependenceInEval) {
  Rng rng(22);
  TpTransformer<float> tpt(4, 37, 8, rng);
  Rng rng2(23);
  auto tp = softmax_lastdim(Tensor<float>::randn({2, 4, 37}, rng2));
  NoGradGuard ng;
  auto both = tpt(tp, false);
  for (int64_t b = 0; b < 2; ++b) {
    auto one = Tensor<float>::zeros({1, 4, 37});
    for (int64_t i = 0; i < 4 * 37; ++i)
      one.data()[size_t(i)] = tp.data()[size_t(b * 4 * 37 + i)];
    auto fb = tpt(one, false);
    int64_t n = fb.numel();
    for (int64_t i = 0; i < n; ++i)
      EXPECT_NEAR(fb.data()[size_t(i)], both.data()[size_t(b * n + i)], 1e-6);
  }
}

TEST(TpTransformer, MiniGradcheck) {
  Rng rng(24);
  TpTransformer<double> tpt(4, 37, 8, rng);
  NamedState<double> st;
  tpt.collect("tpt", st);
  set_trainable(st, true);
  Rng rng2(25);
  auto tp = softmax_lastdim(Tensor<double>::randn({2, 4, 37}, rng2)).detach();
  tp.set_requires_grad(true);
  std::vector<Tensor<double>> inputs = {tp};
  for (auto& [n, t] : st.params) inputs.push_back(t);
  auto rep = fd_check(
      inputs,
      [&] {
        Rng probe(26);
        auto r = Tensor<double>::randn({2, 32, 16, 32}, probe);
        return sum_all(mul(tpt(tp, true), r));
      },
      1e-6, 7);  // small h keeps ReLU-kink crossings out of the estimate
  EXPECT_LT(rep.max_rel, 1e-4);
  EXPECT_GT(rep.checked, 500);
}

// ---------------------------------------------------------------------------
// TP-guided SR block + SR module
// ---------------------------------------------------------------------------

TEST(Fusion, ZeroProjectionIsExactIdentity) {
  Rng rng(30);
  TpGuidedSrBlock<float> blk(8, rng);
  Rng rng2(31);
  auto img = Tensor<float>::randn({2, 8, 4, 6}, rng2);
  auto tpf = Tensor<float>::randn({2, 32, 4, 6}, rng2);
  blk.zero_projection();
  NoGradGuard ng;
  auto with_tp = blk(img, std::optional<Tensor<float>>(tpf), false);
  auto without = blk(img, std::nullopt, false);
  ASSERT_EQ(with_tp.shape(), without.shape());
  for (int64_t i = 0; i < with_tp.numel(); ++i)
    EXPECT_EQ(with_tp.data()[size_t(i)], without.data()[size_t(i)]);
}

TEST(Fusion, OutputShapeMatchesInput) {
  Rng rng(32);
  TpGuidedSrBlock<float> blk(8, rng);
  Rng rng2(33);
  auto img = Tensor<float>::randn({1, 8, 4, 4}, rng2);
  auto tpf = Tensor<float>::randn({1, 32, 4, 4}, rng2);
  NoGradGuard ng;
  auto out = blk(img, std::optional<Tensor<float>>(tpf), false);
  EXPECT_EQ(out.shape(), img.shape());
  auto bad_c = Tensor<float>::randn({1, 16, 4, 4}, rng2);
  EXPECT_THROW(blk(img, std::optional<Tensor<float>>(bad_c), false), Error);
  auto bad_hw = Tensor<float>::randn({1, 32, 16, 32}, rng2);
  EXPECT_THROW(blk(img, std::optional<Tensor<float>>(bad_hw), false), Error);
}

TEST(Fusion, GradcheckWrtTpFeature) {
  Rng rng(34);
  TpGuidedSrBlock<double> blk(8, rng);
  Rng rng2(35);
  auto img = Tensor<double>::randn({2, 8, 4, 4}, rng2);
  auto tpf = Tensor<double>::randn({2, 32, 4, 4}, rng2);
  img.set_requires_grad(true);
  tpf.set_requires_grad(true);
  auto rep = fd_check(
      {img, tpf},
      [&] {
        Rng probe(36);
        auto r = Tensor<double>::randn({2, 8, 4, 4}, probe);
        return sum_all(mul(blk(img, std::optional<Tensor<double>>(tpf), true), r));
      },
      1e-5, 3);
  EXPECT_LT(rep.max_rel, 1e-4);
}

TEST(SrModule, ShapeContract) {
  Rng rng(40);
  SrModule<float> sr(64, 5, rng);
  auto lr = Tensor<float>::zeros({1, 1, 16, 64});
  NoGradGuard ng;
  auto out = sr(lr, std::nullopt, false);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 32, 128}));

  SrModule<float> mini(8, 2, rng);
  auto mlr = Tensor<float>::zeros({2, 1, 8, 16});
  EXPECT_EQ(mini(mlr, std::nullopt, false).shape(), (Shape{2, 1, 16, 32}));
}

// ---------------------------------------------------------------------------
// stage plan + pipeline
// ---------------------------------------------------------------------------

TEST(StagePlan, LambdaRules) {
  auto p3 = StagePlan::make(3);
  ASSERT_EQ(p3.lambdas.size(), 3u);
  EXPECT_DOUBLE_EQ(p3.lambdas[0], 0.25);
  EXPECT_DOUBLE_EQ(p3.lambdas[1], 0.25);
  EXPECT_DOUBLE_EQ(p3.lambdas[2], 0.5);
  EXPECT_NO_THROW(StagePlan::make(3, {0.25, 0.25, 0.5}));
  EXPECT_THROW(StagePlan::make(3, {0.5, 0.5, 0.5}), Error);
  EXPECT_THROW(StagePlan::make(0), Error);
  EXPECT_THROW(StagePlan::make(2, {1.0}), Error);
  EXPECT_TRUE(StagePlan().share_sr);
  EXPECT_FALSE(StagePlan().share_tpg);
  EXPECT_TRUE(StagePlan().stop_grad_between_stages);
}

TEST(Pipeline, NamespacesAndSharedSr) {
  Rng rng(50);
  TpgsrModel<float> model(ModelConfig::mini(), StagePlan::make(3), rng);
  auto st = model.state();
  int sr_params = 0, s1 = 0, s2 = 0, s3 = 0;
  for (auto& [n, t] : st.params) {
    sr_params += n.rfind("tpg.shared.sr.", 0) == 0;
    s1 += n.rfind("tpg.stage1.", 0) == 0;
    s2 += n.rfind("tpg.stage2.", 0) == 0;
    s3 += n.rfind("tpg.stage3.", 0) == 0;
  }
  EXPECT_EQ(sr_params + s1 + s2 + s3, int(st.params.size()));
  EXPECT_GT(sr_params, 0);
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(s2, s3);

  // one SR copy regardless of N: state grows only by per-stage TP branches
  Rng rng2(50);
  TpgsrModel<float> one(ModelConfig::mini(), StagePlan::make(1), rng2);
  auto st1 = one.state();
  int sr1 = 0;
  for (auto& [n, t] : st1.params) sr1 += n.rfind("tpg.shared.sr.", 0) == 0;
  EXPECT_EQ(sr1, sr_params);
}

TEST(Pipeline, SingleStageEqualsDegenerateMultistage) {
  Rng rng(51);
  TpgsrModel<float> model(ModelConfig::mini(), StagePlan::make(1), rng);
  Rng rng2(52);
  auto lr = Tensor<float>::randn({2, 1, 8, 16}, rng2, 0.2);
  NoGradGuard ng;
  auto multi = multistage_forward(model, lr, false);
  ASSERT_EQ(multi.size(), 1u);
  auto single = stage_forward(model, 1, lr, std::optional<Tensor<float>>{}, false);
  EXPECT_EQ(multi[0].sr_img.data(), single.sr_img.data());
  EXPECT_EQ(multi[0].tp.data(), single.tp.data());
}

TEST(Pipeline, MultistageShapesAndTpChaining) {
  Rng rng(53);
  TpgsrModel<float> model(ModelConfig::mini(), StagePlan::make(3), rng);
  Rng rng2(54);
  auto lr = Tensor<float>::randn({2, 1, 8, 16}, rng2, 0.2);
  NoGradGuard ng;
  auto rs = multistage_forward(model, lr, false);
  ASSERT_EQ(rs.size(), 3u);
  for (auto& r : rs) {
    EXPECT_EQ(r.sr_img.shape(), (Shape{2, 1, 16, 32}));
    EXPECT_EQ(r.tp.shape(), (Shape{2, 4, 37}));
  }
}

TEST(Pipeline, ZeroProjectionMatchesNoTpArm) {
  Rng rng(55);
  TpgsrModel<float> model(ModelConfig::mini(), StagePlan::make(2), rng);
  model.sr.zero_projections();
  Rng rng2(56);
  auto lr = Tensor<float>::randn({2, 1, 8, 16}, rng2, 0.2);
  NoGradGuard ng;
  auto with_tp = multistage_forward(model, lr, false, true);
  auto without = multistage_forward(model, lr, false, false);
  for (size_t k = 0; k < 2; ++k) {
    const auto& a = with_tp[k].sr_img.data();
    const auto& b = without[k].sr_img.data();
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << k << ":" << i;
  }
}

TEST(Pipeline, StopGradientIsolatesEarlierStages) {
  for (bool stop : {true, false}) {
    Rng rng(57);
    auto plan = StagePlan::make(2);
    plan.stop_grad_between_stages = stop;
    TpgsrModel<float> model(ModelConfig::mini(), plan, rng);
    auto st = model.state();
    set_trainable(st, true);
    Rng rng2(58);
    auto lr = Tensor<float>::randn({2, 1, 8, 16}, rng2, 0.2);
    auto rs = multistage_forward(model, lr, true);
    // loss touches only the stage-2 SR image
    Rng probe(59);
    auto r = Tensor<float>::randn(rs[1].sr_img.shape(), probe);
    auto loss = sum_all(mul(rs[1].sr_img, r));
    loss.backward();
    bool stage1_has_grad = false;
    for (auto& [n, t] : st.params) {
      if (n.rfind("tpg.stage1.", 0) != 0) continue;
      if (!t.has_grad()) continue;
      for (float g : t.grad())
        if (g != 0.0f) {
          stage1_has_grad = true;
          break;
        }
    }
    EXPECT_EQ(stage1_has_grad, !stop);
  }
}

TEST(Pipeline, InitFromSingleStageCheckpoint) {
  Rng rng(60);
  TpgsrModel<float> single(ModelConfig::mini(), StagePlan::make(1), rng);
  auto sst = single.state();
  auto bytes = serialize_checkpoint(sst, CkptMeta{});
  auto ck = parse_checkpoint(bytes, "<memory>");

  Rng rng2(61);
  auto multi = init_multistage_from_single<float>(ck, ModelConfig::mini(),
                                                  StagePlan::make(3), rng2);
  // all three recognizer copies start bitwise equal to the single-stage one
  NamedState<float> s1, s2, s3;
  multi.recs[0].collect("r", s1);
  multi.recs[1].collect("r", s2);
  multi.recs[2].collect("r", s3);
  EXPECT_TRUE(params_bitwise_equal(s1, s2));
  EXPECT_TRUE(params_bitwise_equal(s2, s3));

  // round-trip of the multistage model is bitwise
  auto mst = multi.state();
  auto mbytes = serialize_checkpoint(mst, CkptMeta{});
  Rng rng3(62);
  TpgsrModel<float> fresh(ModelConfig::mini(), StagePlan::make(3), rng3);
  auto fst = fresh.state();
  load_into(parse_checkpoint(mbytes, "<memory>"), fst);
  EXPECT_TRUE(params_bitwise_equal(mst, fst));

  // missing parameters are reported by the first absent path
  auto broken = ck;
  std::string victim = "tpg.stage1.rec.conv1.w";
  broken.entries.erase(victim);
  Rng rng4(63);
  try {
    init_multistage_from_single<float>(broken, ModelConfig::mini(),
                                       StagePlan::make(3), rng4);
    FAIL() << "expected missing-parameter error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("rec.conv1.w"), std::string::npos)
        << e.what();
  }
}

TEST(Pipeline, StageCopiesDivergeAfterOneStep) {
  Rng rng(64);
  TpgsrModel<float> single(ModelConfig::mini(), StagePlan::make(1), rng);
  auto ck = parse_checkpoint(serialize_checkpoint(single.state(), CkptMeta{}),
                             "<memory>");
  Rng rng2(65);
  auto model = init_multistage_from_single<float>(ck, ModelConfig::mini(),
                                                  StagePlan::make(2), rng2);
  auto st = model.state();
  set_trainable(st, true);
  Adam<float> opt(1e-3);
  Rng rng3(66);
  auto lr = Tensor<float>::randn({2, 1, 8, 16}, rng3, 0.2);
  auto target = softmax_lastdim(Tensor<float>::randn({2, 4, 37}, rng3)).detach();
  auto rs = multistage_forward(model, lr, true);
  // per-stage TP losses: each stage's prior pulled toward the same target
  auto loss = add(l1_loss(rs[0].tp, target), l1_loss(rs[1].tp, target));
  loss.backward();
  opt.step(st);
  NamedState<float> s1, s2;
  model.recs[0].collect("r", s1);
  model.recs[1].collect("r", s2);
  EXPECT_FALSE(params_bitwise_equal(s1, s2));
}
