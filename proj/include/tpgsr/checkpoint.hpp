#pragma once
// Binary checkpoint container.
//
// Layout (all integers little-endian):
//   magic   "TPGS"
//   u32     format version (1)
//   u32     record count
//   records name_len:u32, name bytes, rank:u32, dims:u64*rank, f32 data
//   u32     metadata length, then that many bytes of JSON:
//           {"config_hash": "...", "seed": N, "step": N}
//
// Tensors are stored as f32 regardless of the in-memory precision.

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tpgsr/nn.hpp"

namespace tpgsr {

struct CkptMeta {
  uint64_t seed = 0;
  uint64_t step = 0;
  std::string config_hash;
};

struct CkptData {
  // Ordered by name so nothing about a checkpoint depends on hash ordering.
  std::map<std::string, std::pair<Shape, std::vector<float>>> entries;
  CkptMeta meta;
};

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline void put_u64(std::string& out, uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

class ByteReader {
 public:
  ByteReader(std::string data, std::string path)
      : data_(std::move(data)), path_(std::move(path)) {}

  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, data_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, data_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(std::vector<float>& out, size_t count) {
    need(count * 4);
    out.resize(count);
    std::memcpy(out.data(), data_.data() + pos_, count * 4);
    pos_ += count * 4;
  }
  size_t pos() const { return pos_; }
  size_t remaining() const { return data_.size() - pos_; }
  [[noreturn]] void corrupt(const std::string& what) const {
    fail("corrupt checkpoint ", path_, ": ", what, " at byte offset ", pos_);
  }

 private:
  void need(size_t n) {
    if (data_.size() - pos_ < n)
      fail("corrupt checkpoint ", path_, ": truncated at byte offset ", pos_,
           " (need ", n, " more bytes, have ", data_.size() - pos_, ")");
  }
  std::string data_, path_;
  size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::string serialize_checkpoint(const NamedState<T>& st, const CkptMeta& meta) {
  using detail::put_u32;
  using detail::put_u64;
  std::string out = "TPGS";
  put_u32(out, 1);
  put_u32(out, uint32_t(st.params.size() + st.buffers.size()));
  auto record = [&out](const std::string& name, const Shape& shape,
                       const T* data, int64_t count) {
    put_u32(out, uint32_t(name.size()));
    out.append(name);
    put_u32(out, uint32_t(shape.size()));
    for (int64_t d : shape) put_u64(out, uint64_t(d));
    for (int64_t i = 0; i < count; ++i) {
      float f = float(data[size_t(i)]);
      char b[4];
      std::memcpy(b, &f, 4);
      out.append(b, 4);
    }
  };
  for (const auto& [name, t] : st.params)
    record(name, t.shape(), t.data().data(), t.numel());
  for (const auto& buf : st.buffers)
    record(buf.name, Shape{buf.size}, buf.data->data(), buf.size);
  nlohmann::json j;
  j["config_hash"] = meta.config_hash;
  j["seed"] = meta.seed;
  j["step"] = meta.step;
  std::string js = j.dump();
  put_u32(out, uint32_t(js.size()));
  out.append(js);
  return out;
}

template <class T>
void save_checkpoint(const std::string& path, const NamedState<T>& st,
                     const CkptMeta& meta) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "cannot open checkpoint for writing: ", path);
  std::string bytes = serialize_checkpoint(st, meta);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  check(f.good(), "failed writing checkpoint: ", path);
}

// Parses serialized checkpoint bytes; origin names the source in errors.
inline CkptData parse_checkpoint(std::string raw, const std::string& origin) {
  detail::ByteReader r(std::move(raw), origin);
  if (r.bytes(4) != "TPGS") {
    fail("corrupt checkpoint ", origin, ": bad magic at byte offset 0");
  }
  uint32_t version = r.u32();
  if (version != 1)
    fail("unsupported checkpoint version ", version, " in ", origin);
  uint32_t count = r.u32();
  CkptData out;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = r.u32();
    if (name_len > 4096) r.corrupt("implausible name length");
    std::string name = r.bytes(name_len);
    uint32_t rank = r.u32();
    if (rank > 8) r.corrupt("implausible tensor rank");
    Shape shape(rank);
    int64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = int64_t(r.u64());
      if (shape[d] <= 0 || n > (int64_t(1) << 33) / std::max<int64_t>(shape[d], 1))
        r.corrupt("implausible dimension");
      n *= shape[d];
    }
    std::vector<float> data;
    r.floats(data, size_t(n));
    out.entries[name] = {std::move(shape), std::move(data)};
  }
  uint32_t json_len = r.u32();
  std::string js = r.bytes(json_len);
  if (r.remaining() != 0) r.corrupt("trailing bytes after metadata");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(js);
  } catch (const std::exception& e) {
    fail("corrupt checkpoint ", origin, ": bad metadata JSON: ", e.what());
  }
  out.meta.config_hash = j.value("config_hash", std::string());
  out.meta.seed = j.value("seed", uint64_t(0));
  out.meta.step = j.value("step", uint64_t(0));
  return out;
}

inline CkptData read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open checkpoint: ", path);
  std::string raw((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  return parse_checkpoint(std::move(raw), path);
}

// Copies checkpoint contents into live parameters/buffers. Every name in the
// target must be present in the checkpoint; the first absent one is reported.
template <class T>
void load_into(const CkptData& ck, NamedState<T>& st) {
  auto fetch = [&ck](const std::string& name, int64_t want_numel)
      -> const std::vector<float>& {
    auto it = ck.entries.find(name);
    if (it == ck.entries.end())
      fail("checkpoint is missing parameter \"", name, "\"");
    const auto& [shape, data] = it->second;
    if (int64_t(data.size()) != want_numel)
      fail("checkpoint parameter \"", name, "\" has ", data.size(),
           " values, expected ", want_numel);
    return data;
  };
  for (auto& [name, t] : st.params) {
    const auto& src = fetch(name, t.numel());
    T* dst = t.data().data();
    for (size_t i = 0; i < src.size(); ++i) dst[i] = T(src[i]);
  }
  for (auto& buf : st.buffers) {
    const auto& src = fetch(buf.name, buf.size);
    for (size_t i = 0; i < src.size(); ++i) (*buf.data)[i] = T(src[i]);
  }
}

}  // namespace tpgsr
