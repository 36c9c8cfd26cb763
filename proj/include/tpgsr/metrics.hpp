#pragma once
// Image quality metrics (PSNR, single-scale SSIM) and the evaluation report:
// per-difficulty recognition accuracy + PSNR/SSIM, an aggregate row, and
// bicubic / ground-truth reference rows.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "tpgsr/network.hpp"
#include "tpgsr/recognizer.hpp"
#include "tpgsr/synth.hpp"

namespace tpgsr {

namespace detail {

// Interprets rank-4 [B,C,H,W] as B samples; lower ranks as a single sample.
template <class T>
inline int64_t metric_batch(const Tensor<T>& a, const Tensor<T>& b,
                            size_t* per_sample) {
  check(a.shape() == b.shape(), "metric shape mismatch: ",
        shape_str(a.shape()), " vs ", shape_str(b.shape()));
  check(a.numel() > 0, "metric on empty tensor");
  int64_t batch = a.rank() == 4 ? a.dim(0) : 1;
  *per_sample = size_t(a.numel() / batch);
  return batch;
}

}  // namespace detail

// Per-sample PSNR in dB for unit dynamic range, capped at 100 dB when the
// MSE underflows 1e-10. Accumulation is in double regardless of T.
template <class T>
std::vector<double> psnr_per_sample(const Tensor<T>& a, const Tensor<T>& b) {
  size_t n = 0;
  int64_t batch = detail::metric_batch(a, b, &n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  std::vector<double> out(static_cast<size_t>(batch));
  for (int64_t s = 0; s < batch; ++s) {
    double mse = 0;
    for (size_t i = 0; i < n; ++i) {
      double d = double(pa[size_t(s) * n + i]) - double(pb[size_t(s) * n + i]);
      mse += d * d;
    }
    mse /= double(n);
    out[size_t(s)] = mse < 1e-10 ? 100.0 : 10.0 * std::log10(1.0 / mse);
  }
  return out;
}

template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  auto v = psnr_per_sample(a, b);
  double sum = 0;
  for (double x : v) sum += x;
  return sum / double(v.size());
}

namespace detail {

// 11x11 Gaussian window, sigma 1.5, normalized to sum 1.
inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> win(121);
    double sum = 0;
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 11; ++x) {
        double dy = y - 5, dx = x - 5;
        double v = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
        win[size_t(y) * 11 + size_t(x)] = v;
        sum += v;
      }
    for (double& v : win) v /= sum;
    return win;
  }();
  return w;
}

// SSIM of one H x W plane: Gaussian-weighted moments, constants for unit
// dynamic range (K1=0.01, K2=0.03), averaged over the window-valid region.
inline double ssim_plane(const double* a, const double* b, int64_t h,
                         int64_t w) {
  check(h >= 11 && w >= 11, "ssim needs images at least 11x11, got ", h, "x",
        w);
  const auto& win = ssim_window();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  int64_t count = 0;
  for (int64_t y = 0; y + 11 <= h; ++y) {
    for (int64_t x = 0; x + 11 <= w; ++x) {
      double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
      for (int wy = 0; wy < 11; ++wy) {
        const double* ra = a + (y + wy) * w + x;
        const double* rb = b + (y + wy) * w + x;
        const double* rw = win.data() + wy * 11;
        for (int wx = 0; wx < 11; ++wx) {
          double va = ra[wx], vb = rb[wx], k = rw[wx];
          mu_a += k * va;
          mu_b += k * vb;
          aa += k * va * va;
          bb += k * vb * vb;
          ab += k * va * vb;
        }
      }
      double var_a = aa - mu_a * mu_a;
      double var_b = bb - mu_b * mu_b;
      double cov = ab - mu_a * mu_b;
      double num = (2 * mu_a * mu_b + c1) * (2 * cov + c2);
      double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
      total += num / den;
      ++count;
    }
  }
  return total / double(count);
}

}  // namespace detail

// Per-sample single-scale SSIM; channels of a sample are averaged.
template <class T>
std::vector<double> ssim_per_sample(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& s = a.shape();
  check(s.size() >= 2, "ssim expects at least 2-D images, got ",
        shape_str(s));
  size_t n = 0;
  int64_t batch = detail::metric_batch(a, b, &n);
  int64_t w = s[s.size() - 1];
  int64_t h = s[s.size() - 2];
  size_t plane = size_t(h) * size_t(w);
  size_t planes_per_sample = n / plane;
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  std::vector<double> da(plane), db(plane), out(static_cast<size_t>(batch));
  for (int64_t sidx = 0; sidx < batch; ++sidx) {
    double acc = 0;
    for (size_t c = 0; c < planes_per_sample; ++c) {
      size_t off = size_t(sidx) * n + c * plane;
      for (size_t i = 0; i < plane; ++i) {
        da[i] = double(pa[off + i]);
        db[i] = double(pb[off + i]);
      }
      acc += detail::ssim_plane(da.data(), db.data(), h, w);
    }
    out[size_t(sidx)] = acc / double(planes_per_sample);
  }
  return out;
}

template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  auto v = ssim_per_sample(a, b);
  double sum = 0;
  for (double x : v) sum += x;
  return sum / double(v.size());
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string split;
  int64_t n = 0;
  double acc = 0;      // exact-match recognition accuracy in [0,1]
  double psnr_db = 0;  // mean PSNR vs ground truth
  double ssim = 0;     // mean SSIM vs ground truth
};

struct EvalReport {
  std::vector<EvalRow> rows;

  const EvalRow* find(const std::string& split) const {
    for (const auto& r : rows)
      if (r.split == split) return &r;
    return nullptr;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "split,n,acc,psnr_db,ssim\n";
    for (const auto& r : rows) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s,%lld,%.6f,%.4f,%.6f\n",
                    r.split.c_str(), static_cast<long long>(r.n), r.acc,
                    r.psnr_db, r.ssim);
      os << buf;
    }
    return os.str();
  }

  std::string to_text() const {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "  %-8s %5s %8s %9s %8s\n", "split", "n",
                  "acc", "psnr_db", "ssim");
    os << buf;
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "  %-8s %5lld %7.2f%% %9.2f %8.4f\n",
                    r.split.c_str(), static_cast<long long>(r.n),
                    100.0 * r.acc, r.psnr_db, r.ssim);
      os << buf;
    }
    return os.str();
  }
};

namespace detail {

inline std::string lower_ascii(std::string s) {
  for (char& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

struct SplitAccum {
  int64_t n = 0;
  double acc = 0, psnr = 0, ssim = 0;
  EvalRow row(const std::string& name) const {
    EvalRow r;
    r.split = name;
    r.n = n;
    r.acc = acc / double(n);
    r.psnr_db = psnr / double(n);
    r.ssim = ssim / double(n);
    return r;
  }
};

// Scores a batch of candidate images against ground truth + labels.
template <class T>
inline void score_batch(Recognizer<T>& scorer, const Tensor<T>& imgs,
                        const Tensor<T>& hr,
                        const std::vector<const SamplePair*>& batch,
                        SplitAccum* acc) {
  auto preds = decode_tp(scorer.tp(imgs, /*training=*/false));
  auto ps = psnr_per_sample(imgs, hr);
  auto ss = ssim_per_sample(imgs, hr);
  for (size_t i = 0; i < batch.size(); ++i) {
    acc->n += 1;
    acc->acc += lower_ascii(preds[i]) == lower_ascii(batch[i]->label) ? 1 : 0;
    acc->psnr += ps[i];
    acc->ssim += ss[i];
  }
}

template <class T>
inline Tensor<T> clamp01_copy(const Tensor<T>& t) {
  auto out = Tensor<T>::empty(t.shape());
  const auto& src = t.data();
  auto& dst = out.data();
  for (size_t i = 0; i < src.size(); ++i)
    dst[i] = std::min(T(1), std::max(T(0), src[i]));
  return out;
}

}  // namespace detail

// Runs the full pipeline over a test set and reports, per difficulty split:
// exact-match accuracy of the scoring recognizer on the restored images plus
// PSNR/SSIM vs ground truth. Adds a sample-weighted "average" row over the
// present splits, a "bicubic" row (plain bicubic upsampling instead of the
// model), and an "hr" row (scoring the ground-truth images themselves).
// Deterministic: inference mode only, no RNG involved.
template <class T>
EvalReport evaluate(TpgsrModel<T>& model, Recognizer<T>& scorer,
                    const std::vector<SamplePair>& test_set,
                    int64_t batch_size, bool use_tp = true) {
  check(!test_set.empty(), "evaluate needs a non-empty test set");
  check(batch_size >= 1, "batch size must be >= 1, got ", batch_size);
  NoGradGuard ng;

  constexpr size_t kSplits = 3;
  std::vector<std::vector<const SamplePair*>> by_diff(kSplits);
  for (const auto& s : test_set)
    by_diff[size_t(s.difficulty)].push_back(&s);

  std::vector<detail::SplitAccum> model_acc(kSplits);
  detail::SplitAccum bicubic_acc, hr_acc;

  for (size_t d = 0; d < kSplits; ++d) {
    const auto& group = by_diff[d];
    for (size_t start = 0; start < group.size(); start += size_t(batch_size)) {
      size_t stop = std::min(group.size(), start + size_t(batch_size));
      std::vector<const SamplePair*> ptrs(group.begin() + int64_t(start),
                                          group.begin() + int64_t(stop));
      auto lr = batch_images<T>(ptrs, /*use_hr=*/false);
      auto hr = batch_images<T>(ptrs, /*use_hr=*/true);

      auto stages = multistage_forward(model, lr, /*training=*/false, use_tp);
      auto sr = detail::clamp01_copy(stages.back().sr_img);
      detail::score_batch(scorer, sr, hr, ptrs, &model_acc[d]);

      auto up = detail::clamp01_copy(
          bicubic_resize(lr, hr.dim(2), hr.dim(3)));
      detail::score_batch(scorer, up, hr, ptrs, &bicubic_acc);
      detail::score_batch(scorer, hr, hr, ptrs, &hr_acc);
    }
  }

  EvalReport report;
  detail::SplitAccum total;
  for (size_t d = 0; d < kSplits; ++d) {
    if (model_acc[d].n == 0) continue;  // empty splits are omitted
    report.rows.push_back(
        model_acc[d].row(difficulty_name(Difficulty(uint8_t(d)))));
    total.n += model_acc[d].n;
    total.acc += model_acc[d].acc;
    total.psnr += model_acc[d].psnr;
    total.ssim += model_acc[d].ssim;
  }
  report.rows.push_back(total.row("average"));
  report.rows.push_back(bicubic_acc.row("bicubic"));
  report.rows.push_back(hr_acc.row("hr"));
  return report;
}

}  // namespace tpgsr
