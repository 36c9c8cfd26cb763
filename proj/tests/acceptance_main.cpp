// Acceptance suite: eight end-to-end checks, one buffered PASS/FAIL line
// each, printed in order at the end. Fast in-process checks run first
// (gradients, loss oracles, shape/identity contracts, metric sanity); the
// heavy block then drives the real CLI to pretrain the recognizer, train the
// guidance/stage ablation arms over three seeds, and rerun a reduced
// two-phase config twice for bitwise determinism. Exit code 0 iff all pass.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tpgsr/gradsuite.hpp"
#include "tpgsr/train.hpp"

namespace fs = std::filesystem;
using namespace tpgsr;

namespace {

// ---------------------------------------------------------------------------
// schedule (one place to retune)
// ---------------------------------------------------------------------------

// Ablation-arm dataset: 2,000 train / 300 stratified test.
constexpr int64_t kStdTrain = 2000, kStdTest = 300;
constexpr uint64_t kStdSeed = 424242;
// Recognizer pretraining corpus; larger than the arm dataset because the
// frozen scorer must generalize, and generated text is free.
constexpr int64_t kRecTrain = 10000, kRecTest = 300;
constexpr uint64_t kRecSeed = 777;
constexpr int64_t kRecEpochs = 10, kRecBatch = 48;
constexpr double kRecLr = 1e-3;
constexpr uint64_t kRecRunSeed = 11;
// Table-arm schedule: three arms x three seeds at depth 1, then a depth-3
// fine-tune from each tuned checkpoint.
constexpr int64_t kArmEpochs = 2, kArmBatch = 48, kArmLrHalf = 2;
constexpr double kArmLr = 1e-3;
constexpr int64_t kN3Epochs = 1, kN3LrHalf = 2;
constexpr double kN3Lr = 5e-4;
const uint64_t kSeeds[3] = {1, 2, 3};
// Table-arm runtime budget: 45 min on 4 cores = 180 core-minutes.
constexpr double kTableCoreMinBudget = 180.0;

// ---------------------------------------------------------------------------
// verdicts + progress
// ---------------------------------------------------------------------------

struct Verdict {
  bool pass = false;
  std::string detail = "not evaluated";
};
Verdict verdicts[9];  // 1-based

void set_verdict(int i, bool pass, const std::string& detail) {
  verdicts[i].pass = pass;
  verdicts[i].detail = detail;
}

std::chrono::steady_clock::time_point t_start;

void progress(const std::string& msg) {
  double s = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                           t_start)
                 .count();
  std::fprintf(stderr, "[%7.1fs] %s\n", s, msg.c_str());
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------------------
// subprocess + artifact helpers
// ---------------------------------------------------------------------------

std::string work_dir() {
  static std::string dir = [] {
    std::string d = TPGSR_WORK_DIR;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct CliOut {
  int code = -1;
  std::string out;
};

CliOut cli(const std::string& args, const std::string& logname) {
  std::string log = work_dir() + "/" + logname + ".log";
  std::string cmd =
      std::string(TPGSR_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  progress("run: " + args);
  int rc = std::system(cmd.c_str());
  CliOut res;
  res.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream in(log, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  res.out = ss.str();
  return res;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(bool(in), "cannot open ", path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// report.csv row accessor: split,n,acc,psnr_db,ssim.
double report_acc(const std::string& run_dir, const std::string& split) {
  std::istringstream in(read_file(run_dir + "/report.csv"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(split + ",", 0) != 0) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    check(cells.size() >= 3, "short report row: ", line);
    return std::stod(cells[2]);
  }
  fail("report ", run_dir, "/report.csv has no \"", split, "\" row");
}

double parse_after(const std::string& text, const std::string& tag) {
  size_t p = text.find(tag);
  check(p != std::string::npos, "missing \"", tag, "\" in output");
  return std::stod(text.substr(p + tag.size()));
}

// ---------------------------------------------------------------------------
// criterion 1: finite-difference gradient suite
// ---------------------------------------------------------------------------

void criterion1() {
  progress("criterion 1: gradient suite");
  auto t0 = std::chrono::steady_clock::now();
  auto cases = run_grad_suite();
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t0)
                    .count();
  double worst_prim = 0, pipeline = 0;
  bool all_pass = true;
  std::string first_fail;
  for (const auto& c : cases) {
    if (c.name == "pipeline_mini_2stage")
      pipeline = c.max_rel;
    else
      worst_prim = std::max(worst_prim, c.max_rel);
    if (!c.pass && first_fail.empty()) first_fail = c.name;
    all_pass = all_pass && c.pass;
  }
  bool pass = all_pass && secs < 120.0;
  std::string detail = fmt(
      "primitives max rel %.2e (tol 1e-4), pipeline %.2e (tol 1e-3), %.1fs "
      "(budget 120s)",
      worst_prim, pipeline, secs);
  if (!first_fail.empty()) detail += "; first failing case: " + first_fail;
  set_verdict(1, pass, detail);
}

// ---------------------------------------------------------------------------
// criterion 2: loss oracles
// ---------------------------------------------------------------------------

using DT = Tensor<double>;

DT rows_stochastic(const Shape& s, Rng& rng) {
  auto t = DT::empty(s);
  for (auto& v : t.data()) v = rng.uniform(0.05, 1.0);
  int64_t a = s.back();
  int64_t rows = t.numel() / a;
  for (int64_t r = 0; r < rows; ++r) {
    double sum = 0;
    for (int64_t j = 0; j < a; ++j) sum += t.data()[size_t(r * a + j)];
    for (int64_t j = 0; j < a; ++j) t.data()[size_t(r * a + j)] /= sum;
  }
  return t;
}

template <class T = double>
Tensor<T> uniform_tensor(const Shape& s, Rng& rng, double lo, double hi) {
  auto t = Tensor<T>::empty(s);
  for (auto& v : t.data()) v = T(rng.uniform(lo, hi));
  return t;
}

double oracle_mean_abs(const DT& a, const DT& b) {
  double s = 0;
  for (size_t i = 0; i < a.data().size(); ++i)
    s += std::abs(a.data()[i] - b.data()[i]);
  return s / double(a.numel());
}

double oracle_kl(const DT& tl, const DT& th, double eps) {
  int64_t b = tl.rank() == 2 ? 1 : tl.dim(0);
  double total = 0;
  for (size_t i = 0; i < tl.data().size(); ++i)
    total += th.data()[i] *
             std::log((th.data()[i] + eps) / (tl.data()[i] + eps));
  return total / double(b);
}

void criterion2() {
  progress("criterion 2: loss oracles");
  const int kInstances = 120;
  const double kTol = 1e-9;
  Rng rng(20260822);
  double worst_kl = 0, worst_stage = 0, worst_multi = 0;

  for (int i = 0; i < kInstances; ++i) {
    int64_t b = rng.randint(1, 3), l = rng.randint(1, 5),
            a = rng.randint(2, 8);
    auto tl = rows_stochastic({b, l, a}, rng);
    auto th = rows_stochastic({b, l, a}, rng);
    double eps = std::pow(10.0, rng.uniform(-8, -4));
    worst_kl = std::max(
        worst_kl, std::abs(double(kl_tp(tl, th, eps).item()) -
                           oracle_kl(tl, th, eps)));

    int64_t h = rng.randint(4, 8), w = rng.randint(4, 8);
    auto sr = uniform_tensor({b, 1, h, w}, rng, 0, 1);
    auto hr = uniform_tensor({b, 1, h, w}, rng, 0, 1);
    LossConfig lc;
    lc.alpha = rng.uniform(0, 2);
    lc.beta = rng.uniform(0, 2);
    lc.epsilon = eps;
    double want = oracle_mean_abs(sr, hr) +
                  lc.alpha * oracle_mean_abs(tl, th) +
                  lc.beta * oracle_kl(tl, th, eps);
    worst_stage = std::max(
        worst_stage,
        std::abs(double(stage_loss(sr, hr, tl, th, lc).item()) - want));

    int64_t n = rng.randint(1, 4);
    std::vector<DT> losses;
    std::vector<double> lam(static_cast<size_t>(n), 0.0);
    double lam_sum = 0;
    for (auto& v : lam) {
      v = rng.uniform(0.1, 1.0);
      lam_sum += v;
    }
    for (auto& v : lam) v /= lam_sum;
    double want_multi = 0;
    for (int64_t k = 0; k < n; ++k) {
      double lv = rng.uniform(0, 3);
      losses.push_back(DT::full({}, lv));
      want_multi += lam[size_t(k)] * lv;
    }
    worst_multi = std::max(
        worst_multi,
        std::abs(double(multistage_loss(losses, lam).item()) - want_multi));
  }

  // Self-divergence must vanish exactly, not approximately.
  auto t = rows_stochastic({2, 3, 7}, rng);
  bool self_zero = double(kl_tp(t, t, 1e-6).item()) == 0.0;

  bool sum_enforced = false;
  try {
    multistage_loss<double>({DT::full({}, 1.0), DT::full({}, 2.0)},
                            {0.5, 0.4});
  } catch (const Error&) {
    sum_enforced = true;
  }

  bool pass = worst_kl <= kTol && worst_stage <= kTol && worst_multi <= kTol &&
              self_zero && sum_enforced;
  set_verdict(
      2, pass,
      fmt("%d instances each: |kl| dev %.1e, |stage| dev %.1e, |multi| dev "
          "%.1e (tol 1e-9); kl(t,t)==0 %s; bad lambda sum rejected %s",
          kInstances, worst_kl, worst_stage, worst_multi,
          self_zero ? "yes" : "NO", sum_enforced ? "yes" : "NO"));
}

// ---------------------------------------------------------------------------
// criterion 3: shape and identity contracts
// ---------------------------------------------------------------------------

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(),
                     a.data().size() * sizeof(T)) == 0;
}

void criterion3() {
  progress("criterion 3: shape/identity contracts");
  std::vector<std::string> fails;

  {  // TP transformer mapping [B,37,1,16] -> [B,32,16,128]
    Rng rng(301);
    TpTransformer<float> tpt(16, kAlphabetSize, 64, rng);
    Rng rng2(302);
    auto tp = Tensor<float>::randn({2, 16, kAlphabetSize}, rng2);
    auto conv_in = map_from_frames(tp);
    if (conv_in.shape() != Shape{2, kAlphabetSize, 1, 16})
      fails.push_back("tpt input map " + shape_str(conv_in.shape()));
    NoGradGuard ng;
    auto out = tpt(tp, false);
    if (out.shape() != Shape{2, 32, 16, 128})
      fails.push_back("tpt output " + shape_str(out.shape()));
  }

  {  // zero projections make the guided pass equal the TP-free pass bitwise
    Rng rng(303);
    TpgsrModel<float> model(ModelConfig::standard(), StagePlan::make(1), rng);
    model.sr.zero_projections();
    Rng rng2(304);
    auto lr = uniform_tensor<float>({2, 1, kLrH, kLrW}, rng2, 0, 1);
    NoGradGuard ng;
    auto with_tp = multistage_forward(model, lr, false, true);
    auto without = multistage_forward(model, lr, false, false);
    if (!bitwise_equal(with_tp.back().sr_img, without.back().sr_img))
      fails.push_back("zero-projection != TP-free");
  }

  {  // depth-1 pipeline equals a single stage bitwise
    Rng rng(305);
    TpgsrModel<float> model(ModelConfig::standard(), StagePlan::make(1), rng);
    Rng rng2(306);
    auto lr = uniform_tensor<float>({2, 1, kLrH, kLrW}, rng2, 0, 1);
    NoGradGuard ng;
    auto multi = multistage_forward(model, lr, false, true);
    auto single =
        stage_forward(model, 1, lr, std::optional<Tensor<float>>{}, false,
                      true);
    if (multi.size() != 1 ||
        !bitwise_equal(multi[0].sr_img, single.sr_img) ||
        !bitwise_equal(multi[0].tp, single.tp))
      fails.push_back("multistage(N=1) != single stage");
  }

  {  // stop-gradient: stage-2-only loss leaves stage-1 branch grads at zero
    ModelConfig mc = ModelConfig::mini();
    StagePlan plan = StagePlan::make(2, {0.0, 1.0});
    Rng rng(307);
    TpgsrModel<double> model(mc, plan, rng);
    auto st = model.state();
    set_trainable(st, true);
    Rng rng2(308);
    auto lr = uniform_tensor({1, 1, mc.lr_h, mc.lr_w}, rng2, 0.05, 0.95);
    auto hr = uniform_tensor({1, 1, 2 * mc.lr_h, 2 * mc.lr_w}, rng2, 0.05,
                             0.95);
    auto th = rows_stochastic({1, mc.frames(), mc.classes}, rng2);
    auto stages = multistage_forward(model, lr, true, true);
    std::vector<DT> losses;
    LossConfig lc;
    for (const auto& s : stages)
      losses.push_back(stage_loss(s.sr_img, hr, s.tp, th, lc));
    multistage_loss(losses, plan.lambdas).backward();

    auto grad_mass = [&](const std::string& prefix) {
      double m = 0;
      for (auto& [name, p] : st.params) {
        if (name.rfind(prefix, 0) != 0 || !p.has_grad()) continue;
        for (double g : p.grad()) m += std::abs(g);
      }
      return m;
    };
    if (grad_mass("tpg.stage1.") != 0.0)
      fails.push_back("stage-1 branch grads nonzero under stop-grad");
    if (grad_mass("tpg.stage2.") == 0.0)
      fails.push_back("stage-2 branch got no gradient");
    if (grad_mass("tpg.shared.sr.") == 0.0)
      fails.push_back("shared SR got no gradient");
  }

  if (fails.empty()) {
    set_verdict(3, true,
                "tpt [B,37,1,16]->[B,32,16,128]; zero-proj == TP-free "
                "bitwise; N=1 == single stage bitwise; stop-grad isolation "
                "exact");
  } else {
    std::string d;
    for (const auto& f : fails) d += (d.empty() ? "" : "; ") + f;
    set_verdict(3, false, d);
  }
}

// ---------------------------------------------------------------------------
// criterion 7: metric sanity
// ---------------------------------------------------------------------------

void criterion7() {
  progress("criterion 7: metric sanity");
  Rng rng(701);
  auto x = uniform_tensor({2, 1, kHrH, kHrW}, rng, 0, 1);
  double s_self = ssim(x, x);
  double p_self = psnr(x, x);
  auto z = DT::full({1, 1, kHrH, kHrW}, 0.0);
  auto h = DT::full({1, 1, kHrH, kHrW}, 0.5);
  double p_const = psnr(z, h);
  bool pass = std::abs(s_self - 1.0) <= 1e-6 && p_self == 100.0 &&
              std::abs(p_const - 6.0206) <= 0.001;
  set_verdict(7, pass,
              fmt("ssim(x,x)=%.8f; psnr(x,x)=%.1f dB (cap); "
                  "psnr(0,0.5)=%.4f dB (want 6.0206 +/- 0.001)",
                  s_self, p_self, p_const));
}

// ---------------------------------------------------------------------------
// criteria 4/5/6/8: CLI-driven runs over shared artifacts
// ---------------------------------------------------------------------------

struct ArmAccs {
  double notp = 0, fixed = 0, tuned = 0, n3 = 0;
};

std::string train_args(const std::string& ds, const std::string& rec,
                       uint64_t seed, const std::string& run_dir) {
  return fmt(
      "train --dataset %s --rec-ckpt %s --seed %llu --epochs %lld --batch "
      "%lld --lr %g --lr-half-epoch %lld --run-dir %s",
      ds.c_str(), rec.c_str(), (unsigned long long)seed,
      (long long)kArmEpochs, (long long)kArmBatch, kArmLr,
      (long long)kArmLrHalf, run_dir.c_str());
}

void heavy_block() {
  std::string w = work_dir();
  std::string ds = w + "/ds.bin";
  std::string ds_rec = w + "/ds_rec.bin";
  std::string rec = w + "/pre/rec.ckpt";

  // Shared artifacts: the two datasets and the pretrained recognizer.
  auto gen1 = cli(fmt("gen-data --train %lld --test %lld --seed %llu --out %s",
                      (long long)kStdTrain, (long long)kStdTest,
                      (unsigned long long)kStdSeed, ds.c_str()),
                  "gen_std");
  auto gen2 = cli(fmt("gen-data --train %lld --test %lld --seed %llu --out %s",
                      (long long)kRecTrain, (long long)kRecTest,
                      (unsigned long long)kRecSeed, ds_rec.c_str()),
                  "gen_rec");
  if (gen1.code != 0 || gen2.code != 0) {
    for (int i : {4, 5, 6, 8})
      set_verdict(i, false, "dataset generation failed (see gen_*.log)");
    return;
  }

  auto pre = cli(fmt("pretrain-rec --dataset %s --epochs %lld --batch %lld "
                     "--lr %g --seed %llu --run-dir %s/pre",
                     ds_rec.c_str(), (long long)kRecEpochs,
                     (long long)kRecBatch, kRecLr,
                     (unsigned long long)kRecRunSeed, w.c_str()),
                 "pretrain");
  if (pre.code != 0) {
    for (int i : {4, 5, 6, 8})
      set_verdict(i, false, "recognizer pretraining failed (see pretrain.log)");
    return;
  }
  double exact = parse_after(pre.out, "val exact-match acc ");

  // Criterion 4: three arms x three seeds at depth 1, timed as a block.
  ArmAccs acc[3];
  auto t_table0 = std::chrono::steady_clock::now();
  bool runs_ok = true;
  for (int si = 0; si < 3 && runs_ok; ++si) {
    uint64_t seed = kSeeds[si];
    struct Arm {
      const char* tag;
      const char* flags;
      double ArmAccs::*slot;
    };
    const Arm arms[3] = {{"notp", "--no-tp", &ArmAccs::notp},
                         {"fixed", "--fixed-tpg", &ArmAccs::fixed},
                         {"tuned", "--tuned-tpg", &ArmAccs::tuned}};
    for (const auto& arm : arms) {
      std::string dir = fmt("%s/s%llu_%s", w.c_str(),
                            (unsigned long long)seed, arm.tag);
      std::string name = fmt("s%llu_%s", (unsigned long long)seed, arm.tag);
      auto r = cli(train_args(ds, rec, seed, dir) + " " + arm.flags, name);
      if (r.code != 0) {
        set_verdict(4, false, "arm " + name + " failed (see " + name + ".log)");
        runs_ok = false;
        break;
      }
      acc[si].*arm.slot = report_acc(dir, "average");
    }
  }
  double table_min = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - t_table0)
                         .count() /
                     60.0;
  unsigned cores = std::max(1u, std::thread::hardware_concurrency());
  double core_min = table_min * double(cores);

  if (runs_ok) {
    double m_notp = 0, m_fixed = 0, m_tuned = 0;
    int tuned_wins = 0;
    for (int si = 0; si < 3; ++si) {
      m_notp += acc[si].notp / 3;
      m_fixed += acc[si].fixed / 3;
      m_tuned += acc[si].tuned / 3;
      if (acc[si].tuned > acc[si].fixed) ++tuned_wins;
    }
    bool order = m_fixed > m_notp && m_tuned > m_fixed;
    bool in_budget = core_min <= kTableCoreMinBudget;
    set_verdict(
        4, order && tuned_wins >= 2 && in_budget,
        fmt("mean acc no-TP %.3f < fixed %.3f < tuned %.3f %s; tuned wins "
            "%d/3 seeds; %.1f min on %u core(s) = %.0f core-min (budget 180 "
            "= 45 min x 4 cores)",
            m_notp, m_fixed, m_tuned, order ? "holds" : "VIOLATED",
            tuned_wins, table_min, cores, core_min));
  }

  // Criterion 6: scorer quality + bicubic-row gap, read off the arm reports.
  if (runs_ok) {
    double bicubic = report_acc(fmt("%s/s%llu_tuned", w.c_str(),
                                    (unsigned long long)kSeeds[0]),
                                "bicubic");
    bool pass = exact >= 0.85 && bicubic >= 0.20 && bicubic <= 0.60;
    set_verdict(6, pass,
                fmt("pretrained exact-match %.4f (need >= 0.85); bicubic row "
                    "acc %.3f (need within [0.20, 0.60])",
                    exact, bicubic));
  } else {
    set_verdict(6, false, "table arms incomplete; see criterion 4");
  }

  // Criterion 5: depth-3 fine-tune from each tuned depth-1 checkpoint.
  if (runs_ok) {
    bool n3_ok = true;
    for (int si = 0; si < 3 && n3_ok; ++si) {
      uint64_t seed = kSeeds[si];
      std::string init = fmt("%s/s%llu_tuned/final.ckpt", w.c_str(),
                             (unsigned long long)seed);
      std::string dir = fmt("%s/s%llu_n3", w.c_str(),
                            (unsigned long long)seed);
      std::string name = fmt("s%llu_n3", (unsigned long long)seed);
      auto r = cli(
          fmt("train --dataset %s --rec-ckpt %s --seed %llu --stages 3 "
              "--tuned-tpg --init-from %s --epochs %lld --batch %lld --lr %g "
              "--lr-half-epoch %lld --run-dir %s",
              ds.c_str(), rec.c_str(), (unsigned long long)seed, init.c_str(),
              (long long)kN3Epochs, (long long)kArmBatch, kN3Lr,
              (long long)kN3LrHalf, dir.c_str()),
          name);
      if (r.code != 0) {
        set_verdict(5, false, "run " + name + " failed (see " + name + ".log)");
        n3_ok = false;
        break;
      }
      acc[si].n3 = report_acc(dir, "average");
    }
    if (n3_ok) {
      double m1 = 0, m3 = 0;
      bool all_within_half_pt = true, all_strictly_worse = true;
      for (int si = 0; si < 3; ++si) {
        m1 += acc[si].tuned / 3;
        m3 += acc[si].n3 / 3;
        all_within_half_pt = all_within_half_pt &&
                             std::abs(acc[si].n3 - acc[si].tuned) <= 0.005;
        all_strictly_worse = all_strictly_worse &&
                             acc[si].n3 < acc[si].tuned;
      }
      // Mean must not drop; a uniform sub-half-point tie only fails when
      // every seed moved strictly down.
      bool pass = m3 >= m1 || (all_within_half_pt && !all_strictly_worse);
      set_verdict(5, pass,
                  fmt("mean acc N=1 %.3f vs N=3 %.3f; per-seed N=3-N=1: "
                      "%+.3f %+.3f %+.3f",
                      m1, m3, acc[0].n3 - acc[0].tuned,
                      acc[1].n3 - acc[1].tuned, acc[2].n3 - acc[2].tuned));
    }
  } else {
    set_verdict(5, false, "table arms incomplete; see criterion 4");
  }

  // Criterion 8: reduced two-phase config run twice, compared bitwise.
  {
    std::string ds8 = w + "/ds_small.bin";
    auto gen = cli(fmt("gen-data --train 96 --test 12 --seed 5 --out %s",
                       ds8.c_str()),
                   "gen_small");
    bool ok = gen.code == 0;
    for (const char* tag : {"X", "Y"}) {
      if (!ok) break;
      std::string p1 = w + "/det_phase1" + tag;
      std::string p2 = w + "/det_phase2" + tag;
      auto r1 = cli(fmt("train --dataset %s --rec-ckpt %s --seed 9 "
                        "--tuned-tpg --epochs 1 --batch 24 --lr 1e-3 "
                        "--run-dir %s",
                        ds8.c_str(), rec.c_str(), p1.c_str()),
                    std::string("det_p1") + tag);
      auto r2 = cli(fmt("train --dataset %s --rec-ckpt %s --seed 9 "
                        "--tuned-tpg --stages 2 --init-from %s/final.ckpt "
                        "--epochs 1 --batch 24 --lr 1e-3 --run-dir %s",
                        ds8.c_str(), rec.c_str(), p1.c_str(), p2.c_str()),
                    std::string("det_p2") + tag);
      ok = ok && r1.code == 0 && r2.code == 0;
    }
    if (!ok) {
      set_verdict(8, false, "determinism runs failed (see det_*.log)");
    } else {
      std::vector<std::string> mismatches;
      for (const char* phase : {"det_phase1", "det_phase2"}) {
        for (const char* f : {"/final.ckpt", "/metrics.csv", "/report.csv"}) {
          std::string a = w + "/" + phase + "X" + f;
          std::string b = w + "/" + phase + "Y" + f;
          if (read_file(a) != read_file(b))
            mismatches.push_back(std::string(phase) + f);
        }
      }
      if (mismatches.empty()) {
        set_verdict(8, true,
                    "two identical two-phase runs: checkpoints and metrics "
                    "CSVs bitwise equal (both phases)");
      } else {
        std::string d = "bitwise mismatch:";
        for (const auto& m : mismatches) d += " " + m;
        set_verdict(8, false, d);
      }
    }
  }
}

}  // namespace

int main() {
  t_start = std::chrono::steady_clock::now();
  auto guard = [](int idx, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      set_verdict(idx, false, std::string("exception: ") + e.what());
    }
  };
  guard(1, criterion1);
  guard(2, criterion2);
  guard(3, criterion3);
  guard(7, criterion7);
  try {
    if (!std::getenv("TPGSR_ACCEPT_FAST_ONLY")) heavy_block();
  } catch (const std::exception& e) {
    for (int i : {4, 5, 6, 8})
      if (verdicts[i].detail == "not evaluated")
        set_verdict(i, false, std::string("exception: ") + e.what());
  }

  bool all = true;
  for (int i = 1; i <= 8; ++i) {
    std::printf("criterion %d: %s - %s\n", i,
                verdicts[i].pass ? "PASS" : "FAIL",
                verdicts[i].detail.c_str());
    all = all && verdicts[i].pass;
  }
  std::printf("acceptance: %s\n", all ? "PASS" : "FAIL");
  return all ? 0 : 1;
}
