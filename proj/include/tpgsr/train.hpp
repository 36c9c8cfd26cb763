#pragma once
// Run drivers: recognizer pretraining, TPGSR training with the stage loss,
// evaluation, and single-image inference. Every artifact a run writes is a
// pure function of (config, seed, dataset bytes).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tpgsr/adam.hpp"
#include "tpgsr/checkpoint.hpp"
#include "tpgsr/config.hpp"
#include "tpgsr/image_io.hpp"
#include "tpgsr/losses.hpp"
#include "tpgsr/metrics.hpp"

namespace tpgsr {

namespace detail {

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(bool(out), "cannot write ", path);
  out << text;
  check(bool(out), "write failed for ", path);
}

}  // namespace detail

// Loads a pretrained recognizer checkpoint (entries "rec.*") into a
// standalone recognizer under the same prefix.
template <class T>
void load_recognizer(const CkptData& ck, Recognizer<T>& rec) {
  NamedState<T> st;
  rec.collect("rec", st);
  load_into(ck, st);
}

// Copies a pretrained recognizer checkpoint onto every TP-generator stage.
template <class T>
void load_recognizer_into_stages(TpgsrModel<T>& model, const CkptData& ck) {
  CkptData remapped;
  remapped.meta = ck.meta;
  for (const auto& [name, entry] : ck.entries) {
    check(name.rfind("rec.", 0) == 0, "recognizer checkpoint entry \"", name,
          "\" lacks the rec. prefix");
    for (size_t i = 0; i < model.recs.size(); ++i)
      remapped.entries["tpg.stage" + std::to_string(i + 1) + "." + name] =
          entry;
  }
  NamedState<T> st;
  for (size_t i = 0; i < model.recs.size(); ++i)
    model.recs[i].collect("tpg.stage" + std::to_string(i + 1) + ".rec", st);
  load_into(remapped, st);
}

// ---------------------------------------------------------------------------
// Recognizer pretraining run
// ---------------------------------------------------------------------------

struct PretrainRunResult {
  PretrainReport report;
  std::string ckpt_path;
  double val_exact_acc = 0;  // exact-match string accuracy on held-out HR
};

// Exact case-insensitive string match of greedy decodes against labels.
template <class T>
double exact_match_accuracy(Recognizer<T>& rec,
                            const std::vector<const SamplePair*>& samples,
                            bool use_hr, int64_t batch) {
  NoGradGuard ng;
  check(!samples.empty(), "accuracy over an empty sample list");
  int64_t hits = 0;
  for (size_t start = 0; start < samples.size(); start += size_t(batch)) {
    size_t stop = std::min(samples.size(), start + size_t(batch));
    std::vector<const SamplePair*> chunk(samples.begin() + int64_t(start),
                                         samples.begin() + int64_t(stop));
    auto preds = decode_tp(rec.tp(batch_images<T>(chunk, use_hr), false));
    for (size_t i = 0; i < chunk.size(); ++i)
      if (preds[i] == chunk[i]->label) ++hits;
  }
  return double(hits) / double(samples.size());
}

template <class T>
PretrainRunResult pretrain_run(const RunConfig& cfg) {
  cfg.validate();
  check(!cfg.dataset.empty(), "config is missing dataset=");
  auto ds = load_dataset(cfg.dataset);
  std::filesystem::create_directories(cfg.run_dir);
  detail::write_text_file(cfg.run_dir + "/config.txt", cfg.echo());

  Rng rng(cfg.seed);
  Recognizer<T> rec(ModelConfig::standard().rec, rng);
  std::vector<const SamplePair*> train, val;
  for (const auto& s : ds.train) train.push_back(&s);
  for (const auto& s : ds.test) val.push_back(&s);
  auto report =
      pretrain(rec, train, val, cfg.epochs, cfg.lr, cfg.batch, cfg.seed);

  std::ostringstream csv;
  csv << "epoch,loss_start,loss_end,val_frame_acc\n";
  for (size_t e = 0; e < report.epoch_loss_start.size(); ++e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", e + 1,
                  report.epoch_loss_start[e], report.epoch_loss_end[e],
                  report.val_accuracy[e]);
    csv << buf;
  }
  detail::write_text_file(cfg.run_dir + "/metrics.csv", csv.str());

  PretrainRunResult out;
  out.report = report;
  out.val_exact_acc = exact_match_accuracy(rec, val, true, cfg.batch);
  out.ckpt_path = cfg.run_dir + "/rec.ckpt";
  NamedState<T> st;
  rec.collect("rec", st);
  CkptMeta meta;
  meta.seed = cfg.seed;
  meta.step = uint64_t(report.best_epoch < 0 ? 0 : report.best_epoch);
  std::string echo = cfg.semantic_echo();
  meta.config_hash = hex64(fnv1a64(echo.data(), echo.size()));
  save_checkpoint(out.ckpt_path, st, meta);
  return out;
}

// ---------------------------------------------------------------------------
// TPGSR training run
// ---------------------------------------------------------------------------

struct TrainRunResult {
  EvalReport report;
  std::string ckpt_path;
  double final_loss = 0;
};

namespace detail {

// Nearest-neighbour x2 upscale so the LR panel aligns with the others.
inline GrayImage nearest_x2(const GrayImage& im) {
  GrayImage out;
  out.h = im.h * 2;
  out.w = im.w * 2;
  out.pix.resize(size_t(out.h) * size_t(out.w));
  for (int64_t y = 0; y < out.h; ++y)
    for (int64_t x = 0; x < out.w; ++x)
      out.pix[size_t(y) * size_t(out.w) + size_t(x)] =
          im.pix[size_t(y / 2) * size_t(im.w) + size_t(x / 2)];
  return out;
}

inline GrayImage hstack_panels(const std::vector<GrayImage>& panels) {
  check(!panels.empty(), "empty grid");
  int64_t h = panels[0].h, w = 0;
  for (const auto& p : panels) {
    check(p.h == h, "grid panels disagree on height");
    w += p.w;
  }
  const int64_t sep = 2;
  GrayImage out;
  out.h = h;
  out.w = w + sep * int64_t(panels.size() - 1);
  out.pix.assign(size_t(out.h) * size_t(out.w), 0.5f);
  int64_t x0 = 0;
  for (const auto& p : panels) {
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < p.w; ++x)
        out.pix[size_t(y) * size_t(out.w) + size_t(x0 + x)] =
            p.pix[size_t(y) * size_t(p.w) + size_t(x)];
    x0 += p.w + sep;
  }
  return out;
}

template <class T>
GrayImage sample_plane(const Tensor<T>& batch, int64_t b) {
  GrayImage im;
  im.h = batch.dim(2);
  im.w = batch.dim(3);
  size_t n = size_t(im.h) * size_t(im.w);
  im.pix.resize(n);
  const T* src = batch.data().data() + size_t(b) * n;
  for (size_t i = 0; i < n; ++i)
    im.pix[i] = std::min(1.0f, std::max(0.0f, float(src[i])));
  return im;
}

}  // namespace detail

// Comparison grids (LR | bicubic | SR per stage | HR) for the first
// `count` test samples.
template <class T>
void write_sample_grids(TpgsrModel<T>& model, bool use_tp,
                        const std::vector<SamplePair>& test,
                        const std::string& dir, int64_t count) {
  NoGradGuard ng;
  std::filesystem::create_directories(dir);
  count = std::min<int64_t>(count, int64_t(test.size()));
  if (count == 0) return;
  std::vector<const SamplePair*> ptrs;
  for (int64_t i = 0; i < count; ++i) ptrs.push_back(&test[size_t(i)]);
  auto lr = batch_images<T>(ptrs, false);
  auto hr = batch_images<T>(ptrs, true);
  auto up = bicubic_resize(lr, hr.dim(2), hr.dim(3));
  auto stages = multistage_forward(model, lr, /*training=*/false, use_tp);
  for (int64_t b = 0; b < count; ++b) {
    std::vector<GrayImage> panels;
    panels.push_back(detail::nearest_x2(detail::sample_plane(lr, b)));
    panels.push_back(detail::sample_plane(up, b));
    for (const auto& st : stages)
      panels.push_back(detail::sample_plane(st.sr_img, b));
    panels.push_back(detail::sample_plane(hr, b));
    char name[64];
    std::snprintf(name, sizeof name, "/sample_%02lld.pgm",
                  static_cast<long long>(b));
    write_pgm(dir + name, detail::hstack_panels(panels));
  }
}

template <class T>
TrainRunResult train_run(const RunConfig& cfg) {
  cfg.validate();
  check(!cfg.dataset.empty(), "config is missing dataset=");
  check(!cfg.rec_ckpt.empty(), "config is missing rec_ckpt=");
  auto ds = load_dataset(cfg.dataset);
  std::filesystem::create_directories(cfg.run_dir);
  detail::write_text_file(cfg.run_dir + "/config.txt", cfg.echo());

  // Frozen pretrained recognizer: supplies TP targets and scores the eval.
  auto rec_ck = read_checkpoint(cfg.rec_ckpt);
  Rng scorer_rng(cfg.seed + 101);
  Recognizer<T> scorer(ModelConfig::standard().rec, scorer_rng);
  load_recognizer(rec_ck, scorer);
  {
    NamedState<T> st;
    scorer.collect("rec", st);
    set_trainable(st, false);
  }

  StagePlan plan = cfg.plan();
  Rng rng(cfg.seed);
  TpgsrModel<T> model;
  if (!cfg.init_from.empty()) {
    model = init_multistage_from_single<T>(read_checkpoint(cfg.init_from),
                                           ModelConfig::standard(), plan, rng);
  } else {
    model = TpgsrModel<T>(ModelConfig::standard(), plan, rng);
    if (cfg.use_tp) load_recognizer_into_stages(model, rec_ck);
  }

  auto st = model.state();
  set_trainable(st, true);
  if (!cfg.use_tp) {
    // TP-free baseline: fusion projections zeroed and frozen, TP tower idle.
    model.sr.zero_projections();
    auto tp = model.tp_state();
    set_trainable(tp, false);
    for (auto& [name, p] : st.params)
      if (name.find(".proj.") != std::string::npos) p.set_requires_grad(false);
  } else if (!cfg.tuned_tpg) {
    // Fixed TP generator: recognizer stages stay at the pretrained weights.
    NamedState<T> recs;
    for (size_t i = 0; i < model.recs.size(); ++i)
      model.recs[i].collect("tpg.stage" + std::to_string(i + 1) + ".rec",
                            recs);
    set_trainable(recs, false);
  }

  // TP targets from the frozen recognizer on ground truth, cached once.
  const int64_t L = model.cfg.frames(), A = model.cfg.classes;
  auto t_cache0 = std::chrono::steady_clock::now();
  std::vector<std::vector<T>> th_cache;
  if (cfg.use_tp) {
    NoGradGuard ng;
    th_cache.resize(ds.train.size());
    for (size_t start = 0; start < ds.train.size();
         start += size_t(cfg.batch)) {
      size_t stop = std::min(ds.train.size(), start + size_t(cfg.batch));
      std::vector<const SamplePair*> ptrs;
      for (size_t i = start; i < stop; ++i) ptrs.push_back(&ds.train[i]);
      auto tp = scorer.tp(batch_images<T>(ptrs, true), false);
      const T* src = tp.data().data();
      for (size_t i = start; i < stop; ++i)
        th_cache[i].assign(src + (i - start) * size_t(L * A),
                           src + (i - start + 1) * size_t(L * A));
    }
    std::fprintf(stderr, "tp target cache: %.1fs\n",
                 std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t_cache0)
                     .count());
  }

  Adam<T> opt(cfg.lr);
  LossConfig loss_cfg = cfg.loss();
  std::ostringstream csv;
  csv << "epoch,lr,loss,img_l1,tp_l1,tp_kl\n";
  uint64_t global_step = 0;
  double last_epoch_loss = 0;

  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto t_ep0 = std::chrono::steady_clock::now();
    double lr_e = epoch >= cfg.lr_half_epoch ? cfg.lr / 2 : cfg.lr;
    opt.lr = lr_e;
    std::vector<size_t> order(ds.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng erng(cfg.seed, uint64_t(epoch));
    erng.shuffle(order.begin(), order.end());

    double ep_loss = 0, ep_img = 0, ep_tp = 0, ep_kl = 0;
    int64_t steps = 0;
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch)) {
      size_t stop = std::min(order.size(), start + size_t(cfg.batch));
      std::vector<const SamplePair*> ptrs;
      for (size_t i = start; i < stop; ++i)
        ptrs.push_back(&ds.train[order[i]]);
      auto lr_img = batch_images<T>(ptrs, false);
      auto hr_img = batch_images<T>(ptrs, true);

      Tensor<T> t_h;
      if (cfg.use_tp) {
        t_h = Tensor<T>::empty({int64_t(ptrs.size()), L, A});
        T* dst = t_h.data().data();
        for (size_t i = start; i < stop; ++i) {
          const auto& row = th_cache[order[i]];
          std::copy(row.begin(), row.end(),
                    dst + (i - start) * size_t(L * A));
        }
      }

      auto stages = multistage_forward(model, lr_img, true, cfg.use_tp);
      std::vector<Tensor<T>> losses;
      double img_l1 = 0, tp_l1 = 0, tp_kl = 0;
      for (const auto& sr : stages) {
        if (cfg.use_tp) {
          auto terms = stage_loss_terms(sr.sr_img, hr_img, sr.tp, t_h,
                                        loss_cfg);
          losses.push_back(terms.total);
          img_l1 += terms.img_l1;
          tp_l1 += terms.tp_l1;
          tp_kl += terms.tp_kl;
        } else {
          auto term = l1_loss(sr.sr_img, hr_img);
          losses.push_back(term);
          img_l1 += double(term.item());
        }
      }
      auto total = multistage_loss(losses, plan.lambdas);
      double loss_val = double(total.item());
      check(std::isfinite(loss_val), "loss is not finite at epoch ", epoch,
            " step ", global_step);
      total.backward();
      opt.step(st);

      double inv = 1.0 / double(stages.size());
      ep_loss += loss_val;
      ep_img += img_l1 * inv;
      ep_tp += tp_l1 * inv;
      ep_kl += tp_kl * inv;
      ++steps;
      ++global_step;
    }
    double inv = steps ? 1.0 / double(steps) : 0.0;
    last_epoch_loss = ep_loss * inv;
    char buf[200];
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(epoch), lr_e, ep_loss * inv,
                  ep_img * inv, ep_tp * inv, ep_kl * inv);
    csv << buf;
    std::fprintf(stderr, "epoch %lld/%lld: loss %.6g (%.1fs)\n",
                 static_cast<long long>(epoch),
                 static_cast<long long>(cfg.epochs), last_epoch_loss,
                 std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t_ep0)
                     .count());
  }
  detail::write_text_file(cfg.run_dir + "/metrics.csv", csv.str());

  TrainRunResult out;
  out.final_loss = last_epoch_loss;
  out.ckpt_path = cfg.run_dir + "/final.ckpt";
  CkptMeta meta;
  meta.seed = cfg.seed;
  meta.step = global_step;
  std::string echo = cfg.semantic_echo();
  meta.config_hash = hex64(fnv1a64(echo.data(), echo.size()));
  save_checkpoint(out.ckpt_path, st, meta);

  auto t_eval0 = std::chrono::steady_clock::now();
  out.report = evaluate(model, scorer, ds.test, cfg.batch, cfg.use_tp);
  detail::write_text_file(cfg.run_dir + "/report.csv", out.report.to_csv());
  std::fprintf(stderr, "eval: %.1fs\n",
               std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                             t_eval0)
                   .count());
  write_sample_grids(model, cfg.use_tp, ds.test, cfg.run_dir + "/grids", 16);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation of an existing checkpoint (never writes to the checkpoint)
// ---------------------------------------------------------------------------

template <class T>
EvalReport eval_run(const RunConfig& cfg, const std::string& ckpt_path) {
  cfg.validate();
  check(!cfg.dataset.empty(), "config is missing dataset=");
  check(!cfg.rec_ckpt.empty(), "config is missing rec_ckpt=");
  auto ds = load_dataset(cfg.dataset);

  Rng scorer_rng(cfg.seed + 101);
  Recognizer<T> scorer(ModelConfig::standard().rec, scorer_rng);
  load_recognizer(read_checkpoint(cfg.rec_ckpt), scorer);

  Rng rng(cfg.seed);
  TpgsrModel<T> model(ModelConfig::standard(), cfg.plan(), rng);
  auto st = model.state();
  load_into(read_checkpoint(ckpt_path), st);

  auto report = evaluate(model, scorer, ds.test, cfg.batch, cfg.use_tp);
  std::filesystem::create_directories(cfg.run_dir);
  detail::write_text_file(cfg.run_dir + "/report.csv", report.to_csv());
  return report;
}

// ---------------------------------------------------------------------------
// Single-image inference
// ---------------------------------------------------------------------------

struct InferResult {
  GrayImage sr;
  std::vector<std::string> stage_texts;
};

template <class T>
InferResult infer_image(TpgsrModel<T>& model, bool use_tp,
                        const GrayImage& input) {
  NoGradGuard ng;
  check(input.h >= 1 && input.w >= 1, "empty input image");
  auto x = Tensor<T>::empty({1, 1, input.h, input.w});
  for (size_t i = 0; i < input.pix.size(); ++i)
    x.data()[i] = T(input.pix[i]);
  if (input.h != kLrH || input.w != kLrW)
    x = bicubic_resize(x, kLrH, kLrW);

  auto stages = multistage_forward(model, x, false, use_tp);
  InferResult out;
  for (const auto& st : stages)
    out.stage_texts.push_back(decode_tp(st.tp)[0]);
  out.sr = detail::sample_plane(stages.back().sr_img, 0);
  return out;
}

}  // namespace tpgsr
