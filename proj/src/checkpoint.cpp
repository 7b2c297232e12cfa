// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "vibertgrid/errors.hpp"

namespace vbg {

namespace {

constexpr char kMagic[8] = {'V', 'B', 'G', 'C', 'K', 'P', 'T', '1'};

std::uint8_t dtype_code(torch::Dtype t) {
  switch (t) {
    case torch::kFloat32: return 1;
    case torch::kFloat64: return 2;
    case torch::kInt64: return 3;
    case torch::kUInt8: return 4;
    case torch::kInt32: return 5;
    default: throw VersionError("checkpoint: unsupported tensor dtype " + std::string(c10::toString(t)));
  }
}

torch::Dtype dtype_from_code(std::uint8_t c) {
  switch (c) {
    case 1: return torch::kFloat32;
    case 2: return torch::kFloat64;
    case 3: return torch::kInt64;
    case 4: return torch::kUInt8;
    case 5: return torch::kInt32;
    default: throw VersionError("checkpoint: unknown dtype code " + std::to_string(c));
  }
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    out_.append(p, sizeof(T));
  }
  void str(std::string_view s) {
    pod<std::uint64_t>(s.size());
    out_.append(s);
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  const char* raw(std::size_t n) {
    need(n);
    const char* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw ParseError("checkpoint: truncated file");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

const torch::Tensor& CheckpointData::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw VersionError("checkpoint: missing tensor '" + name + "'");
}

bool CheckpointData::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

std::string encode_checkpoint(const CheckpointData& data) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(data.config_text);
  w.str(data.vocab_text);
  w.pod<std::int64_t>(data.epoch);
  w.pod<std::int64_t>(data.step_in_epoch);
  w.pod<std::int64_t>(data.global_step);
  w.str(data.rng_state);
  w.pod<std::uint64_t>(data.tensors.size());
  for (const auto& [name, t] : data.tensors) {
    auto c = t.detach().contiguous().cpu();
    w.str(name);
    w.pod<std::uint8_t>(dtype_code(c.scalar_type()));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.dim()));
    for (auto d : c.sizes()) w.pod<std::int64_t>(d);
    const auto bytes = static_cast<std::size_t>(c.numel()) * c.element_size();
    w.pod<std::uint64_t>(bytes);
    w.raw(c.data_ptr(), bytes);
  }
  return w.take();
}

CheckpointData decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw ParseError("checkpoint: bad magic (not a checkpoint file)");
  Reader r(bytes.substr(sizeof kMagic));
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  CheckpointData data;
  data.config_text = r.str();
  data.vocab_text = r.str();
  data.epoch = r.pod<std::int64_t>();
  data.step_in_epoch = r.pod<std::int64_t>();
  data.global_step = r.pod<std::int64_t>();
  data.rng_state = r.str();
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto dtype = dtype_from_code(r.pod<std::uint8_t>());
    const auto rank = r.pod<std::uint32_t>();
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = r.pod<std::int64_t>();
    const auto n = r.pod<std::uint64_t>();
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (n != static_cast<std::uint64_t>(t.numel()) * t.element_size())
      throw ParseError("checkpoint: tensor '" + name + "' byte count does not match its shape");
    std::memcpy(t.data_ptr(), r.raw(n), n);
    data.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw ParseError("checkpoint: trailing bytes");
  return data;
}

void write_checkpoint(const std::string& path, const CheckpointData& data) {
  const std::string bytes = encode_checkpoint(data);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot rename '" + tmp + "' to '" + path + "'");
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace vbg
