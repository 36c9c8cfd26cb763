#pragma once
// TP Generator: a compact convolutional recognizer producing an L x |A|
// categorical probability sequence per image, plus pretraining and greedy
// decoding.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "tpgsr/adam.hpp"
#include "tpgsr/alphabet.hpp"
#include "tpgsr/checkpoint.hpp"
#include "tpgsr/nn.hpp"
#include "tpgsr/synth.hpp"

namespace tpgsr {

struct RecognizerConfig {
  int64_t in_h = 32, in_w = 128;
  std::vector<int64_t> channels = {1, 32, 64, 128, 128};
  std::vector<std::pair<int64_t, int64_t>> pools = {{2, 2}, {2, 2}, {2, 2},
                                                    {4, 1}};
  int64_t classes = kAlphabetSize;

  int64_t frames() const {
    int64_t w = in_w;
    for (auto [ph, pw] : pools) w /= pw;
    return w;
  }
  void validate() const {
    check(channels.size() == pools.size() + 1,
          "recognizer channel list must have one more entry than pools");
    int64_t h = in_h, w = in_w;
    for (auto [ph, pw] : pools) {
      check(h % ph == 0 && w % pw == 0, "pool ", ph, "x", pw,
            " does not divide feature map ", h, "x", w);
      h /= ph;
      w /= pw;
    }
    check(h == 1, "recognizer pools must collapse height to 1, got ", h);
  }
};

template <class T>
struct Recognizer {
  RecognizerConfig cfg;
  std::vector<Conv2dM<T>> convs;
  std::vector<BatchNorm2dM<T>> bns;
  LinearM<T> head;

  Recognizer() = default;
  Recognizer(const RecognizerConfig& config, Rng& rng) : cfg(config) {
    cfg.validate();
    for (size_t i = 0; i + 1 < cfg.channels.size(); ++i) {
      convs.emplace_back(cfg.channels[i], cfg.channels[i + 1], 3, 1, 1, 1, rng);
      bns.emplace_back(cfg.channels[i + 1]);
    }
    head = LinearM<T>(cfg.channels.back(), cfg.classes, rng);
  }

  int64_t frames() const { return cfg.frames(); }

  // [B,1,h,w] -> logits [B, L, classes]. Inputs not already at the
  // recognizer's native size are bicubically resized first.
  Tensor<T> logits(const Tensor<T>& img, bool training) {
    check(img.rank() == 4 && img.dim(1) == 1,
          "recognizer expects [B,1,H,W] input, got ", shape_str(img.shape()));
    auto h = bicubic_resize(img, cfg.in_h, cfg.in_w);
    for (size_t i = 0; i < convs.size(); ++i) {
      h = relu(bns[i](convs[i](h), training));
      h = maxpool2d(h, cfg.pools[i].first, cfg.pools[i].second);
    }
    return head(frames_from_map(h));  // [B, L, C] -> [B, L, classes]
  }

  // The TextPrior: per-frame categorical probabilities, [B, L, classes].
  Tensor<T> tp(const Tensor<T>& img, bool training) {
    return softmax_lastdim(logits(img, training));
  }

  void collect(const std::string& prefix, NamedState<T>& st) {
    for (size_t i = 0; i < convs.size(); ++i) {
      convs[i].collect(prefix + ".conv" + std::to_string(i + 1), st);
      bns[i].collect(prefix + ".bn" + std::to_string(i + 1), st);
    }
    head.collect(prefix + ".head", st);
  }
};

// Greedy decode: per-frame argmax over the class axis, then CTC collapse.
template <class T>
std::vector<std::string> decode_tp(const Tensor<T>& tp) {
  check(tp.rank() == 3, "decode expects [B,L,classes], got ",
        shape_str(tp.shape()));
  int64_t B = tp.dim(0), L = tp.dim(1), A = tp.dim(2);
  std::vector<std::string> out;
  for (int64_t b = 0; b < B; ++b) {
    std::vector<int> frames(static_cast<size_t>(L), 0);
    for (int64_t l = 0; l < L; ++l) {
      const T* row = tp.data().data() + (b * L + l) * A;
      frames[size_t(l)] =
          int(std::max_element(row, row + A) - row);
    }
    out.push_back(decode_classes(frames));
  }
  return out;
}

// ---------------------------------------------------------------------------
// pretraining
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> batch_images(const std::vector<const SamplePair*>& samples,
                       bool use_hr) {
  int64_t B = int64_t(samples.size());
  int64_t H = use_hr ? kHrH : kLrH, W = use_hr ? kHrW : kLrW;
  auto t = Tensor<T>::zeros({B, 1, H, W});
  T* dst = t.data().data();
  for (int64_t b = 0; b < B; ++b) {
    const auto& pix = use_hr ? samples[size_t(b)]->hr : samples[size_t(b)]->lr;
    for (size_t i = 0; i < pix.size(); ++i) dst[size_t(b) * pix.size() + i] = T(pix[i]);
  }
  return t;
}

inline std::vector<int> batch_frame_labels(
    const std::vector<const SamplePair*>& samples) {
  std::vector<int> out;
  for (const auto* s : samples)
    for (uint8_t f : s->frame_labels) out.push_back(int(f));
  return out;
}

// Fraction of frames whose argmax matches the aligned frame label.
template <class T>
double frame_accuracy(Recognizer<T>& rec,
                      const std::vector<const SamplePair*>& val,
                      int64_t batch) {
  NoGradGuard ng;
  int64_t hit = 0, total = 0;
  for (size_t i = 0; i < val.size(); i += size_t(batch)) {
    std::vector<const SamplePair*> chunk(
        val.begin() + int64_t(i),
        val.begin() + std::min(val.size(), i + size_t(batch)));
    auto lg = rec.logits(batch_images<T>(chunk, true), false);
    int64_t L = lg.dim(1), A = lg.dim(2);
    for (int64_t b = 0; b < int64_t(chunk.size()); ++b)
      for (int64_t l = 0; l < L; ++l) {
        const T* row = lg.data().data() + (b * L + l) * A;
        int pred = int(std::max_element(row, row + A) - row);
        hit += pred == int(chunk[size_t(b)]->frame_labels[size_t(l)]);
        ++total;
      }
  }
  return total ? double(hit) / double(total) : 0.0;
}

struct PretrainReport {
  std::vector<double> epoch_loss_start, epoch_loss_end;
  std::vector<double> val_accuracy;
  double best_accuracy = 0;
  int64_t best_epoch = -1;  // -1 = initial weights kept
};

// Per-frame cross-entropy on HR images against the aligned frame labels.
// Keeps (and restores) the parameters with the best held-out frame accuracy.
template <class T>
PretrainReport pretrain(Recognizer<T>& rec,
                        const std::vector<const SamplePair*>& train,
                        const std::vector<const SamplePair*>& val,
                        int64_t epochs, double lr, int64_t batch,
                        uint64_t seed) {
  check(!train.empty(), "pretrain requires a nonempty training set");
  check(epochs >= 0, "epoch count must be nonnegative");
  check(batch >= 1, "batch size must be >= 1");

  NamedState<T> st;
  rec.collect("rec", st);
  set_trainable(st, true);
  Adam<T> opt(lr);

  PretrainReport rep;
  auto best = serialize_checkpoint(st, CkptMeta{});
  rep.best_accuracy = frame_accuracy(rec, val, batch);

  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int64_t e = 0; e < epochs; ++e) {
    auto t_ep0 = std::chrono::steady_clock::now();
    Rng rng(seed, uint64_t(e));
    rng.shuffle(order.begin(), order.end());
    double first_loss = -1, last_loss = -1;
    for (size_t i = 0; i < order.size(); i += size_t(batch)) {
      std::vector<const SamplePair*> chunk;
      for (size_t j = i; j < std::min(order.size(), i + size_t(batch)); ++j)
        chunk.push_back(train[order[j]]);
      auto lg = rec.logits(batch_images<T>(chunk, true), true);
      auto loss = softmax_xent_frames(lg, batch_frame_labels(chunk));
      double lv = double(loss.item());
      check(std::isfinite(lv), "pretrain loss is not finite at epoch ", e,
            " step ", i / size_t(batch));
      if (first_loss < 0) first_loss = lv;
      last_loss = lv;
      loss.backward();
      opt.step(st);
    }
    rep.epoch_loss_start.push_back(first_loss);
    rep.epoch_loss_end.push_back(last_loss);
    double acc = frame_accuracy(rec, val, batch);
    rep.val_accuracy.push_back(acc);
    if (acc > rep.best_accuracy) {
      rep.best_accuracy = acc;
      rep.best_epoch = e;
      best = serialize_checkpoint(st, CkptMeta{});
    }
    std::fprintf(stderr, "pretrain epoch %lld/%lld: loss %.4f, val %.4f "
                 "(%.1fs)\n",
                 static_cast<long long>(e) + 1,
                 static_cast<long long>(epochs), last_loss, acc,
                 std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t_ep0)
                     .count());
  }

  load_into(parse_checkpoint(std::move(best), "<pretrain best snapshot>"), st);
  return rep;
}

}  // namespace tpgsr
