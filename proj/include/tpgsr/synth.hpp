#pragma once
// Synthetic LR/HR text pair generation and dataset serialization.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tpgsr/alphabet.hpp"
#include "tpgsr/font.hpp"

namespace tpgsr {

inline constexpr int64_t kHrH = 32, kHrW = 128;
inline constexpr int64_t kLrH = 16, kLrW = 64;
inline constexpr int64_t kFrames = 16;  // recognizer frame count L
inline constexpr int64_t kMaxLabelLen = 8;

enum class Difficulty : uint8_t { easy = 0, medium = 1, hard = 2 };

inline const char* difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::medium: return "medium";
    case Difficulty::hard: return "hard";
  }
  fail("bad difficulty value");
}

inline Difficulty difficulty_from_name(const std::string& s) {
  if (s == "easy") return Difficulty::easy;
  if (s == "medium") return Difficulty::medium;
  if (s == "hard") return Difficulty::hard;
  fail("unknown difficulty \"", s, "\" (expected easy|medium|hard)");
}

struct SamplePair {
  std::string label;
  std::vector<uint8_t> frame_labels;  // length kFrames
  std::vector<float> lr;              // kLrH * kLrW
  std::vector<float> hr;              // kHrH * kHrW
  Difficulty difficulty = Difficulty::easy;
};

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

inline void validate_label(const std::string& label) {
  check(!label.empty(), "label must be nonempty");
  check(int64_t(label.size()) <= kMaxLabelLen, "label \"", label, "\" has ",
        label.size(), " characters, maximum is ", kMaxLabelLen);
  for (char c : label)
    check(char_to_class(c) != kBlankClass, "label \"", label,
          "\" contains character '", std::string(1, c),
          "' outside the alphabet");
}

// Glyph placement mirrors the frame-label rule: character i of len is
// centered at (i-0.5)/len of the usable width, so every character sits in
// the column band of its frame label regardless of label length.  The
// randomized horizontal start shifts the whole layout by 0-8 px.
inline int64_t glyph_origin_x(int64_t i, int64_t len, int64_t hstart) {
  const double usable = double(kHrW - 8);
  double center = (double(i) - 0.5) * usable / double(len);
  return hstart + int64_t(std::llround(center)) - kGlyphW / 2;
}

// RNG draw order (frozen for reproducibility): horizontal start, polarity,
// contrast, background level, then one noise draw per pixel in row-major
// order.
inline std::vector<float> render_hr(const std::string& label, Rng& rng) {
  validate_label(label);
  int64_t hstart = rng.randint(0, 8);
  bool dark_text = rng.uniform() < 0.5;
  double contrast = rng.uniform(0.4, 1.0);
  double low = rng.uniform(0.0, 1.0 - contrast);
  double bg = dark_text ? low + contrast : low;
  double fg = dark_text ? low : low + contrast;

  std::vector<double> canvas(size_t(kHrH * kHrW), bg);
  const int64_t top = 9;  // centers the 14-px glyph cell in 32 rows
  const int64_t len = int64_t(label.size());
  for (int64_t i = 1; i <= len; ++i) {
    auto mask = glyph_mask(label[size_t(i - 1)]);
    int64_t x0 = glyph_origin_x(i, len, hstart);
    for (int64_t r = 0; r < kGlyphH; ++r)
      for (int64_t col = 0; col < kGlyphW; ++col) {
        if (!mask[size_t(r * kGlyphW + col)]) continue;
        int64_t y = top + r, x = x0 + col;
        if (x >= 0 && x < kHrW && y >= 0 && y < kHrH)
          canvas[size_t(y * kHrW + x)] = fg;
      }
  }
  std::vector<float> out(canvas.size());
  for (size_t i = 0; i < canvas.size(); ++i) {
    double v = canvas[i] + 0.02 * rng.normal();
    out[i] = float(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// degradation
// ---------------------------------------------------------------------------

// Separable Gaussian blur, truncated at radius ceil(3*sigma), kernel
// normalized per axis, replicate edge handling. Double precision throughout.
inline std::vector<double> gaussian_blur(const std::vector<double>& img,
                                         int64_t H, int64_t W, double sigma) {
  check(sigma > 0, "blur sigma must be positive, got ", sigma);
  check(int64_t(img.size()) == H * W, "image size mismatch");
  int64_t radius = std::max<int64_t>(1, int64_t(std::ceil(3.0 * sigma)));
  std::vector<double> k(size_t(2 * radius + 1));
  double total = 0;
  for (int64_t d = -radius; d <= radius; ++d) {
    double w = std::exp(-double(d * d) / (2.0 * sigma * sigma));
    k[size_t(d + radius)] = w;
    total += w;
  }
  for (double& w : k) w /= total;

  std::vector<double> tmp(img.size()), out(img.size());
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      double acc = 0;
      for (int64_t d = -radius; d <= radius; ++d) {
        int64_t xx = std::clamp<int64_t>(x + d, 0, W - 1);
        acc += k[size_t(d + radius)] * img[size_t(y * W + xx)];
      }
      tmp[size_t(y * W + x)] = acc;
    }
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      double acc = 0;
      for (int64_t d = -radius; d <= radius; ++d) {
        int64_t yy = std::clamp<int64_t>(y + d, 0, H - 1);
        acc += k[size_t(d + radius)] * tmp[size_t(yy * W + x)];
      }
      out[size_t(y * W + x)] = acc;
    }
  return out;
}

inline void blur_sigma_range(Difficulty d, double& lo, double& hi) {
  switch (d) {
    case Difficulty::easy: lo = 0.5; hi = 1.0; return;
    case Difficulty::medium: lo = 1.0; hi = 1.5; return;
    case Difficulty::hard: lo = 1.5; hi = 2.5; return;
  }
  fail("bad difficulty value");
}

// RNG draw order: blur sigma, then one noise draw per LR pixel row-major.
inline std::vector<float> degrade(const std::vector<float>& hr, Difficulty d,
                                  Rng& rng) {
  check(int64_t(hr.size()) == kHrH * kHrW, "degrade expects a ", kHrH, "x",
        kHrW, " image, got ", hr.size(), " pixels");
  double lo, hi;
  blur_sigma_range(d, lo, hi);
  double sigma = rng.uniform(lo, hi);
  std::vector<double> work(hr.begin(), hr.end());
  work = gaussian_blur(work, kHrH, kHrW, sigma);
  std::vector<float> out(size_t(kLrH * kLrW));
  for (int64_t y = 0; y < kLrH; ++y)
    for (int64_t x = 0; x < kLrW; ++x) {
      double box = 0.25 * (work[size_t((2 * y) * kHrW + 2 * x)] +
                           work[size_t((2 * y) * kHrW + 2 * x + 1)] +
                           work[size_t((2 * y + 1) * kHrW + 2 * x)] +
                           work[size_t((2 * y + 1) * kHrW + 2 * x + 1)]);
      double v = box + 0.01 * rng.normal();
      out[size_t(y * kLrW + x)] = float(std::clamp(v, 0.0, 1.0));
    }
  return out;
}

// ---------------------------------------------------------------------------
// frame alignment
// ---------------------------------------------------------------------------

// Characters are spread uniformly across the L frames in order: character i
// (1-based) lands at frame floor((i-0.5)*L/len); all other frames are blank.
// Adjacent characters always land on distinct frames for len <= L/2, so the
// collapse-and-drop-blanks decode recovers the label exactly.
inline std::vector<uint8_t> make_frame_labels(const std::string& label,
                                              int64_t L = kFrames) {
  validate_label(label);
  std::vector<uint8_t> frames(size_t(L), uint8_t{kBlankClass});
  int64_t len = int64_t(label.size());
  for (int64_t i = 1; i <= len; ++i) {
    int64_t pos = int64_t(std::floor((double(i) - 0.5) * double(L) / double(len)));
    pos = std::clamp<int64_t>(pos, 0, L - 1);
    frames[size_t(pos)] = uint8_t(char_to_class(label[size_t(i - 1)]));
  }
  return frames;
}

// ---------------------------------------------------------------------------
// dataset build / load
// ---------------------------------------------------------------------------

struct DatasetManifest {
  int64_t version = 1;
  int64_t count = 0;
  int64_t n_train = 0, n_test = 0;
  uint64_t seed = 0;
  int64_t l_frames = kFrames;
  std::vector<int64_t> offsets;  // per-record, relative to end of header
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<SamplePair> train, test;
};

// One fully derived sample. forced_difficulty < 0 draws it from the stream.
inline SamplePair make_sample(uint64_t seed, uint64_t index,
                              int forced_difficulty) {
  Rng rng(seed, index);
  SamplePair s;
  int64_t len = rng.randint(1, kMaxLabelLen);
  for (int64_t i = 0; i < len; ++i)
    s.label.push_back(class_to_char(int(rng.randint(1, kAlphabetSize - 1))));
  s.difficulty = forced_difficulty >= 0
                     ? Difficulty(uint8_t(forced_difficulty))
                     : Difficulty(uint8_t(rng.randint(0, 2)));
  s.frame_labels = make_frame_labels(s.label);
  s.hr = render_hr(s.label, rng);
  s.lr = degrade(s.hr, s.difficulty, rng);
  return s;
}

namespace detail {

inline int64_t record_size(const SamplePair& s) {
  return 1 + int64_t(s.label.size()) + kFrames + 4 * (kLrH * kLrW) +
         4 * (kHrH * kHrW) + 1;
}

inline void append_record(std::string& out, const SamplePair& s) {
  out.push_back(char(uint8_t(s.label.size())));
  out.append(s.label);
  out.append(reinterpret_cast<const char*>(s.frame_labels.data()), kFrames);
  out.append(reinterpret_cast<const char*>(s.lr.data()), size_t(4 * kLrH * kLrW));
  out.append(reinterpret_cast<const char*>(s.hr.data()), size_t(4 * kHrH * kHrW));
  out.push_back(char(uint8_t(s.difficulty)));
}

}  // namespace detail

// Builds the full dataset deterministically and writes it as one file:
// a single-line JSON manifest, then packed little-endian records. Train
// samples draw their difficulty; test samples cycle easy/medium/hard so the
// test split is stratified.
inline void build_dataset(const std::string& path, int64_t n_train,
                          int64_t n_test, uint64_t seed) {
  check(n_train >= 1, "n_train must be >= 1, got ", n_train);
  check(n_test >= 1, "n_test must be >= 1, got ", n_test);
  int64_t total = n_train + n_test;
  std::vector<SamplePair> samples{size_t(total)};
  parallel_for(total, [&](int64_t i) {
    int forced = i < n_train ? -1 : int((i - n_train) % 3);
    samples[size_t(i)] = make_sample(seed, uint64_t(i), forced);
  });

  DatasetManifest m;
  m.count = total;
  m.n_train = n_train;
  m.n_test = n_test;
  m.seed = seed;
  int64_t off = 0;
  for (const auto& s : samples) {
    m.offsets.push_back(off);
    off += detail::record_size(s);
  }

  nlohmann::json j;
  j["version"] = m.version;
  j["count"] = m.count;
  j["train"] = m.n_train;
  j["test"] = m.n_test;
  j["seed"] = m.seed;
  j["l_frames"] = m.l_frames;
  j["blur_sigma"] = {{"easy", {0.5, 1.0}},
                     {"medium", {1.0, 1.5}},
                     {"hard", {1.5, 2.5}}};
  j["offsets"] = m.offsets;

  std::string body;
  body.reserve(size_t(off));
  for (const auto& s : samples) detail::append_record(body, s);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "cannot open for writing: ", path);
  f << j.dump() << "\n" << body;
  check(f.good(), "failed writing dataset: ", path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open dataset: ", path);
  std::string header;
  std::getline(f, header);
  check(f.good(), "dataset ", path, " is missing its manifest line");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const std::exception& e) {
    fail("dataset ", path, " has a corrupt manifest: ", e.what());
  }
  Dataset ds;
  auto& m = ds.manifest;
  m.version = j.at("version").get<int64_t>();
  check(m.version == 1, "unsupported dataset version ", m.version, " in ", path);
  m.count = j.at("count").get<int64_t>();
  m.n_train = j.at("train").get<int64_t>();
  m.n_test = j.at("test").get<int64_t>();
  m.seed = j.at("seed").get<uint64_t>();
  m.l_frames = j.at("l_frames").get<int64_t>();
  m.offsets = j.at("offsets").get<std::vector<int64_t>>();
  check(m.n_train + m.n_test == m.count, "dataset ", path,
        " manifest split counts do not sum to its sample count");
  check(int64_t(m.offsets.size()) == m.count, "dataset ", path,
        " manifest has ", m.offsets.size(), " offsets for ", m.count,
        " samples");
  for (size_t i = 1; i < m.offsets.size(); ++i)
    check(m.offsets[i] > m.offsets[i - 1], "dataset ", path,
          " manifest offsets are not strictly increasing");

  int64_t base = int64_t(header.size()) + 1;  // records start after newline
  std::string body((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  auto corrupt = [&](int64_t rel_pos, const std::string& what) -> void {
    fail("corrupt dataset ", path, ": ", what, " at byte offset ",
         base + rel_pos);
  };
  int64_t pos = 0;
  auto need = [&](int64_t n, const char* what) {
    if (int64_t(body.size()) - pos < n) corrupt(pos, what);
  };
  for (int64_t i = 0; i < m.count; ++i) {
    if (pos != m.offsets[size_t(i)]) corrupt(pos, "record offset mismatch");
    SamplePair s;
    need(1, "truncated label length");
    int64_t len = uint8_t(body[size_t(pos)]);
    pos += 1;
    if (len < 1 || len > kMaxLabelLen) corrupt(pos - 1, "bad label length");
    need(len, "truncated label");
    s.label = body.substr(size_t(pos), size_t(len));
    pos += len;
    need(kFrames, "truncated frame labels");
    s.frame_labels.assign(body.begin() + pos, body.begin() + pos + kFrames);
    pos += kFrames;
    need(4 * kLrH * kLrW, "truncated low-resolution pixels");
    s.lr.resize(size_t(kLrH * kLrW));
    std::memcpy(s.lr.data(), body.data() + pos, size_t(4 * kLrH * kLrW));
    pos += 4 * kLrH * kLrW;
    need(4 * kHrH * kHrW, "truncated high-resolution pixels");
    s.hr.resize(size_t(kHrH * kHrW));
    std::memcpy(s.hr.data(), body.data() + pos, size_t(4 * kHrH * kHrW));
    pos += 4 * kHrH * kHrW;
    need(1, "truncated difficulty byte");
    uint8_t d = uint8_t(body[size_t(pos)]);
    pos += 1;
    if (d > 2) corrupt(pos - 1, "bad difficulty byte");
    s.difficulty = Difficulty(d);
    (i < m.n_train ? ds.train : ds.test).push_back(std::move(s));
  }
  if (pos != int64_t(body.size())) corrupt(pos, "trailing bytes after records");
  return ds;
}

}  // namespace tpgsr
