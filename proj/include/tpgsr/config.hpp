#pragma once
// Run configuration: a flat key=value file with command-line overrides.
// Unknown keys are hard errors; the fully resolved config can be echoed
// back out in a canonical form for the run directory.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tpgsr/losses.hpp"
#include "tpgsr/network.hpp"

namespace tpgsr {

struct RunConfig {
  uint64_t seed = 1;
  std::string dataset;        // dataset file produced by gen-data
  int64_t stages = 1;         // pipeline depth N
  std::vector<double> lambdas;  // empty = defaults for N
  bool share_sr = true;
  bool share_tpg = false;
  bool stop_grad = true;
  double alpha = 1.0;
  double beta = 1.0;
  double epsilon = 1e-6;
  bool tuned_tpg = false;     // train the TP generator alongside SR
  bool use_tp = true;         // false = TP-free baseline arm
  int64_t batch = 48;
  int64_t epochs = 30;
  double lr = 1e-3;
  int64_t lr_half_epoch = 20;  // learning rate halves from this epoch on
  std::string run_dir = "run";
  std::string precision = "f32";  // f32 | f64
  std::string rec_ckpt;   // pretrained recognizer checkpoint
  std::string init_from;  // optional model checkpoint to fine-tune from

  void validate() const {
    check(stages >= 1, "stages must be >= 1, got ", stages);
    check(batch >= 1, "batch must be >= 1, got ", batch);
    check(epochs >= 0, "epochs must be >= 0, got ", epochs);
    check(lr > 0, "lr must be > 0, got ", lr);
    check(lr_half_epoch >= 1, "lr_half_epoch must be >= 1, got ",
          lr_half_epoch);
    check(precision == "f32" || precision == "f64",
          "precision must be f32 or f64, got \"", precision, "\"");
    check(!run_dir.empty(), "run_dir must not be empty");
    LossConfig lc{alpha, beta, epsilon};
    lc.validate();
    plan().validate();
  }

  StagePlan plan() const {
    StagePlan p = StagePlan::make(stages, lambdas);
    p.share_sr = share_sr;
    p.share_tpg = share_tpg;
    p.stop_grad_between_stages = stop_grad;
    return p;
  }

  LossConfig loss() const { return LossConfig{alpha, beta, epsilon}; }

  void set(const std::string& key, const std::string& value);
  std::string echo() const;
  std::string semantic_echo() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config key \"", key, "\": expected true/false, got \"", v, "\"");
}

inline int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t x = std::stoll(v, &pos);
    check(pos == v.size(), "trailing characters");
    return x;
  } catch (const std::exception&) {
    fail("config key \"", key, "\": expected an integer, got \"", v, "\"");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    check(pos == v.size(), "trailing characters");
    return x;
  } catch (const std::exception&) {
    fail("config key \"", key, "\": expected a number, got \"", v, "\"");
  }
}

inline std::vector<double> parse_double_list(const std::string& key,
                                             const std::string& v) {
  std::vector<double> out;
  if (detail::trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(parse_double(key, trim(item)));
  return out;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "seed")
    seed = uint64_t(parse_int(key, value));
  else if (key == "dataset")
    dataset = value;
  else if (key == "stages")
    stages = parse_int(key, value);
  else if (key == "lambdas")
    lambdas = parse_double_list(key, value);
  else if (key == "share_sr")
    share_sr = parse_bool(key, value);
  else if (key == "share_tpg")
    share_tpg = parse_bool(key, value);
  else if (key == "stop_grad")
    stop_grad = parse_bool(key, value);
  else if (key == "alpha")
    alpha = parse_double(key, value);
  else if (key == "beta")
    beta = parse_double(key, value);
  else if (key == "epsilon")
    epsilon = parse_double(key, value);
  else if (key == "tuned_tpg")
    tuned_tpg = parse_bool(key, value);
  else if (key == "use_tp")
    use_tp = parse_bool(key, value);
  else if (key == "batch")
    batch = parse_int(key, value);
  else if (key == "epochs")
    epochs = parse_int(key, value);
  else if (key == "lr")
    lr = parse_double(key, value);
  else if (key == "lr_half_epoch")
    lr_half_epoch = parse_int(key, value);
  else if (key == "run_dir")
    run_dir = value;
  else if (key == "precision")
    precision = value;
  else if (key == "rec_ckpt")
    rec_ckpt = value;
  else if (key == "init_from")
    init_from = value;
  else
    fail("unknown config key \"", key, "\"");
}

// Canonical echo: fixed key order, full precision, parseable by from_text.
inline std::string RunConfig::echo() const {
  std::ostringstream os;
  os.precision(17);
  os << "seed=" << seed << "\n";
  os << "dataset=" << dataset << "\n";
  os << "stages=" << stages << "\n";
  os << "lambdas=";
  {
    std::vector<double> lam = lambdas.empty()
                                  ? StagePlan::default_lambdas(stages)
                                  : lambdas;
    for (size_t i = 0; i < lam.size(); ++i)
      os << (i ? "," : "") << lam[i];
  }
  os << "\n";
  os << "share_sr=" << (share_sr ? "true" : "false") << "\n";
  os << "share_tpg=" << (share_tpg ? "true" : "false") << "\n";
  os << "stop_grad=" << (stop_grad ? "true" : "false") << "\n";
  os << "alpha=" << alpha << "\n";
  os << "beta=" << beta << "\n";
  os << "epsilon=" << epsilon << "\n";
  os << "tuned_tpg=" << (tuned_tpg ? "true" : "false") << "\n";
  os << "use_tp=" << (use_tp ? "true" : "false") << "\n";
  os << "batch=" << batch << "\n";
  os << "epochs=" << epochs << "\n";
  os << "lr=" << lr << "\n";
  os << "lr_half_epoch=" << lr_half_epoch << "\n";
  os << "run_dir=" << run_dir << "\n";
  os << "precision=" << precision << "\n";
  os << "rec_ckpt=" << rec_ckpt << "\n";
  os << "init_from=" << init_from << "\n";
  return os.str();
}

// Echo restricted to keys that define the experiment itself.  Filesystem
// paths (dataset, run_dir, rec_ckpt, init_from) describe machine layout,
// not the run semantics; leaving them out keeps checkpoint metadata
// bitwise stable when the same run is repeated in a different directory.
inline std::string RunConfig::semantic_echo() const {
  std::istringstream in(echo());
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("dataset=", 0) == 0 || line.rfind("run_dir=", 0) == 0 ||
        line.rfind("rec_ckpt=", 0) == 0 || line.rfind("init_from=", 0) == 0)
      continue;
    out << line << "\n";
  }
  return out.str();
}

// key=value per line; blank lines and #-comments allowed.
inline RunConfig parse_run_config_text(const std::string& text,
                                       const std::string& origin) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    check(eq != std::string::npos, origin, " line ", lineno,
          ": expected key=value, got \"", t, "\"");
    try {
      cfg.set(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    } catch (const Error& e) {
      fail(origin, " line ", lineno, ": ", e.what());
    }
  }
  return cfg;
}

inline RunConfig read_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(bool(in), "cannot open config file ", path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config_text(ss.str(), path);
}

}  // namespace tpgsr
