// Command-line harness: data generation, recognizer pretraining, TPGSR
// training, evaluation, ablations, single-image inference, and the gradient
// suite. Every run is reproducible from (config, seed, dataset).
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <memory>

#include "tpgsr/gradsuite.hpp"
#include "tpgsr/train.hpp"

namespace {

using namespace tpgsr;

struct RunOpts {
  std::string config_path;
  // Flag overrides in command-line order, applied after the config file.
  std::vector<std::pair<std::string, std::string>> overrides;

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = read_run_config(config_path);
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    return cfg;
  }
};

void add_run_options(CLI::App* cmd, const std::shared_ptr<RunOpts>& o) {
  cmd->add_option("--config", o->config_path,
                  "key=value config file; flags override it");
  auto opt = [cmd, o](const std::string& flag, const std::string& key,
                      const std::string& desc) {
    cmd->add_option_function<std::string>(
        flag,
        [o, key](const std::string& v) { o->overrides.emplace_back(key, v); },
        desc);
  };
  opt("--seed", "seed", "run seed");
  opt("--dataset", "dataset", "dataset file from gen-data");
  opt("--stages", "stages", "pipeline depth N");
  opt("--lambdas", "lambdas", "comma-separated stage weights (sum 1)");
  opt("--alpha", "alpha", "TP L1 weight");
  opt("--beta", "beta", "TP KL weight");
  opt("--epsilon", "epsilon", "KL guard epsilon");
  opt("--batch", "batch", "batch size");
  opt("--epochs", "epochs", "epoch count");
  opt("--lr", "lr", "learning rate");
  opt("--lr-half-epoch", "lr_half_epoch", "epoch from which lr is halved");
  opt("--run-dir", "run_dir", "artifact directory");
  opt("--precision", "precision", "f32 or f64");
  opt("--rec-ckpt", "rec_ckpt", "pretrained recognizer checkpoint");
  opt("--init-from", "init_from", "model checkpoint to fine-tune from");
  auto flag = [cmd, o](const std::string& name, const std::string& key,
                       const std::string& value, const std::string& desc) {
    cmd->add_flag_callback(
        name, [o, key, value] { o->overrides.emplace_back(key, value); },
        desc);
  };
  flag("--tuned-tpg", "tuned_tpg", "true", "train the TP generator too");
  flag("--fixed-tpg", "tuned_tpg", "false", "freeze the TP generator");
  flag("--no-tp", "use_tp", "false",
       "TP-free baseline (zeroed, frozen fusion projections)");
  flag("--with-tp", "use_tp", "true", "enable the TP branch (default)");
  flag("--share-tpg", "share_tpg", "true", "one TP branch shared by stages");
  flag("--per-stage-tpg", "share_tpg", "false",
       "independent TP branch per stage (default)");
  flag("--stop-grad", "stop_grad", "true",
       "cut gradients across stages (default)");
  flag("--no-stop-grad", "stop_grad", "false",
       "backpropagate across stage boundaries");
}

int cmd_gen_data(int64_t n_train, int64_t n_test, uint64_t seed,
                 const std::string& out) {
  build_dataset(out, n_train, n_test, seed);
  auto ds = load_dataset(out);
  int64_t diff[3] = {0, 0, 0};
  for (const auto& s : ds.test) ++diff[size_t(s.difficulty)];
  std::printf("wrote %s\n", out.c_str());
  std::printf("train=%lld test=%lld seed=%llu\n",
              static_cast<long long>(ds.train.size()),
              static_cast<long long>(ds.test.size()),
              static_cast<unsigned long long>(seed));
  std::printf("test difficulties: easy=%lld medium=%lld hard=%lld\n",
              static_cast<long long>(diff[0]), static_cast<long long>(diff[1]),
              static_cast<long long>(diff[2]));
  return 0;
}

template <class T>
int do_pretrain(const RunConfig& cfg) {
  auto res = pretrain_run<T>(cfg);
  const auto& r = res.report;
  for (size_t e = 0; e < r.epoch_loss_start.size(); ++e)
    std::printf("epoch %zu: loss %.4f -> %.4f, val frame acc %.4f\n", e + 1,
                r.epoch_loss_start[e], r.epoch_loss_end[e],
                r.val_accuracy[e]);
  if (r.best_epoch < 0)
    std::printf("best val frame acc %.4f (initial weights)\n",
                r.best_accuracy);
  else
    std::printf("best val frame acc %.4f at epoch %lld\n", r.best_accuracy,
                static_cast<long long>(r.best_epoch) + 1);
  std::printf("val exact-match acc %.4f\n", res.val_exact_acc);
  std::printf("checkpoint: %s\n", res.ckpt_path.c_str());
  return 0;
}

template <class T>
int do_train(const RunConfig& cfg) {
  auto res = train_run<T>(cfg);
  std::printf("final train loss %.6f\n", res.final_loss);
  std::fputs(res.report.to_text().c_str(), stdout);
  std::printf("checkpoint: %s\n", res.ckpt_path.c_str());
  std::printf("artifacts: %s\n", cfg.run_dir.c_str());
  return 0;
}

template <class T>
int do_eval(const RunConfig& cfg, const std::string& ckpt) {
  auto report = eval_run<T>(cfg, ckpt);
  std::fputs(report.to_text().c_str(), stdout);
  return 0;
}

template <class T>
int do_infer(const RunConfig& cfg, const std::string& ckpt,
             const std::string& image, const std::string& out) {
  auto ends_with = [](const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() &&
           s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  GrayImage input =
      ends_with(image, ".png") ? read_png(image) : read_pgm(image);

  Rng rng(cfg.seed);
  TpgsrModel<T> model(ModelConfig::standard(), cfg.plan(), rng);
  auto st = model.state();
  load_into(read_checkpoint(ckpt), st);

  auto res = infer_image(model, cfg.use_tp, input);
  for (size_t k = 0; k < res.stage_texts.size(); ++k)
    std::printf("stage %zu: \"%s\"\n", k + 1, res.stage_texts[k].c_str());
  if (ends_with(out, ".png"))
    write_png(out, res.sr);
  else
    write_pgm(out, res.sr);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_gradcheck() {
  auto cases = run_grad_suite();
  double worst = 0;
  for (const auto& c : cases) {
    worst = std::max(worst, c.max_rel);
    std::printf("%-28s max rel %.3e (tol %.0e, %lld coords, %.2fs) %s\n",
                c.name.c_str(), c.max_rel, c.tol,
                static_cast<long long>(c.checked), c.seconds,
                c.pass ? "PASS" : "FAIL");
  }
  bool ok = grad_suite_passed(cases);
  std::printf("overall max rel %.3e: %s\n", worst, ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

template <class T>
int do_ablate(const RunConfig& base, const std::string& axis,
              const std::string& values) {
  std::vector<std::string> vals;
  {
    std::stringstream ss(values);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = tpgsr::detail::trim(item);
      if (!item.empty()) vals.push_back(item);
    }
  }
  check(!vals.empty(), "--values must list at least one setting");

  std::ostringstream csv;
  csv << "axis,value,acc,psnr_db,ssim\n";
  std::printf("%-8s %-10s %8s %9s %8s\n", "axis", "value", "acc", "psnr_db",
              "ssim");
  for (const auto& v : vals) {
    RunConfig cfg = base;
    cfg.run_dir = base.run_dir + "/" + axis + "_" + v;
    if (axis == "tpg") {
      if (v == "notp") {
        cfg.use_tp = false;
      } else if (v == "fixed") {
        cfg.use_tp = true;
        cfg.tuned_tpg = false;
      } else if (v == "tuned") {
        cfg.use_tp = true;
        cfg.tuned_tpg = true;
      } else {
        fail("axis tpg takes values notp|fixed|tuned, got \"", v, "\"");
      }
    } else if (axis == "stages") {
      cfg.stages = tpgsr::detail::parse_int("stages", v);
      cfg.lambdas.clear();  // per-depth default weights
    } else if (axis == "sharing") {
      if (v == "shared") {
        cfg.share_tpg = true;
      } else if (v == "per-stage") {
        cfg.share_tpg = false;
      } else {
        fail("axis sharing takes values shared|per-stage, got \"", v, "\"");
      }
    } else {
      fail("unknown ablation axis \"", axis, "\" (tpg|stages|sharing)");
    }
    auto res = train_run<T>(cfg);
    const EvalRow* avg = res.report.find("average");
    check(avg != nullptr, "ablation row produced no average eval row");
    std::printf("%-8s %-10s %7.2f%% %9.2f %8.4f\n", axis.c_str(), v.c_str(),
                100.0 * avg->acc, avg->psnr_db, avg->ssim);
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.4f,%.6f\n", axis.c_str(),
                  v.c_str(), avg->acc, avg->psnr_db, avg->ssim);
    csv << buf;
  }
  std::filesystem::create_directories(base.run_dir);
  tpgsr::detail::write_text_file(base.run_dir + "/ablate.csv", csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"text-prior guided super-resolution workbench"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  int64_t g_train = 2000, g_test = 300;
  uint64_t g_seed = 1;
  std::string g_out;
  gen->add_option("--train", g_train, "training sample count");
  gen->add_option("--test", g_test, "test sample count");
  gen->add_option("--seed", g_seed, "generation seed");
  gen->add_option("--out", g_out, "output dataset path")->required();

  // pretrain-rec
  auto* pre = app.add_subcommand("pretrain-rec", "pretrain the recognizer");
  auto pre_opts = std::make_shared<RunOpts>();
  add_run_options(pre, pre_opts);

  // train
  auto* tr = app.add_subcommand("train", "train the SR pipeline");
  auto tr_opts = std::make_shared<RunOpts>();
  add_run_options(tr, tr_opts);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a model checkpoint");
  auto ev_opts = std::make_shared<RunOpts>();
  add_run_options(ev, ev_opts);
  std::string ev_ckpt;
  ev->add_option("--ckpt", ev_ckpt, "model checkpoint")->required();

  // infer
  auto* in = app.add_subcommand("infer", "super-resolve one image");
  auto in_opts = std::make_shared<RunOpts>();
  add_run_options(in, in_opts);
  std::string in_ckpt, in_image, in_out;
  in->add_option("--ckpt", in_ckpt, "model checkpoint")->required();
  in->add_option("--image", in_image, "input PGM/PNG image")->required();
  in->add_option("--out", in_out, "output SR image path")->required();

  // gradcheck
  app.add_subcommand("gradcheck", "run the finite-difference suite");

  // ablate
  auto* ab = app.add_subcommand("ablate", "sweep one config axis");
  auto ab_opts = std::make_shared<RunOpts>();
  add_run_options(ab, ab_opts);
  std::string ab_axis, ab_values;
  ab->add_option("--axis", ab_axis, "tpg | stages | sharing")->required();
  ab->add_option("--values", ab_values, "comma-separated settings")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(g_train, g_test, g_seed, g_out);
    if (app.get_subcommand("gradcheck")->parsed()) return cmd_gradcheck();

    auto dispatch = [&](const RunOpts& opts, auto&& f32, auto&& f64) -> int {
      RunConfig cfg = opts.resolve();
      cfg.validate();
      return cfg.precision == "f64" ? f64(cfg) : f32(cfg);
    };
    if (pre->parsed())
      return dispatch(
          *pre_opts, [](const RunConfig& c) { return do_pretrain<float>(c); },
          [](const RunConfig& c) { return do_pretrain<double>(c); });
    if (tr->parsed())
      return dispatch(
          *tr_opts, [](const RunConfig& c) { return do_train<float>(c); },
          [](const RunConfig& c) { return do_train<double>(c); });
    if (ev->parsed())
      return dispatch(
          *ev_opts,
          [&](const RunConfig& c) { return do_eval<float>(c, ev_ckpt); },
          [&](const RunConfig& c) { return do_eval<double>(c, ev_ckpt); });
    if (in->parsed())
      return dispatch(
          *in_opts,
          [&](const RunConfig& c) {
            return do_infer<float>(c, in_ckpt, in_image, in_out);
          },
          [&](const RunConfig& c) {
            return do_infer<double>(c, in_ckpt, in_image, in_out);
          });
    if (ab->parsed())
      return dispatch(
          *ab_opts,
          [&](const RunConfig& c) {
            return do_ablate<float>(c, ab_axis, ab_values);
          },
          [&](const RunConfig& c) {
            return do_ablate<double>(c, ab_axis, ab_values);
          });
    std::fprintf(stderr, "error: no subcommand\n");
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
