#include "wsseg/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace wsseg::nn {

namespace {

constexpr char kMagic[8] = {'W', 'S', 'C', 'K', '0', '1', '\n', '\0'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

void write_string(std::ofstream& out, const std::string& s) {
  const uint32_t len = static_cast<uint32_t>(s.size());
  write_pod(out, len);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
  uint32_t len = 0;
  read_pod(in, len);
  std::string s(len, '\0');
  in.read(s.data(), len);
  return s;
}

}  // namespace

StageCheckpoint snapshot(const std::string& stage, const ParamMap& params,
                         uint64_t fingerprint, int epoch, double best_metric) {
  StageCheckpoint ckpt;
  ckpt.stage = stage;
  ckpt.fingerprint = fingerprint;
  ckpt.epoch = epoch;
  ckpt.best_metric = best_metric;
  for (const auto& [name, var] : params.params)
    ckpt.entries.emplace_back(name, var->value);
  for (const auto& [name, buf] : params.buffers)
    ckpt.entries.emplace_back(name, *buf);
  return ckpt;
}

void restore(const StageCheckpoint& ckpt, ParamMap& params) {
  auto find = [&ckpt](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : ckpt.entries)
      if (n == name) return t;
    throw CheckpointError("checkpoint missing tensor '" + name + "'");
  };
  for (auto& [name, var] : params.params) {
    const Tensor& src = find(name);
    if (!src.same_shape(var->value))
      throw CheckpointError("checkpoint shape mismatch for '" + name + "'");
    var->value = src;
  }
  for (auto& [name, buf] : params.buffers) {
    const Tensor& src = find(name);
    if (!src.same_shape(*buf))
      throw CheckpointError("checkpoint shape mismatch for '" + name + "'");
    *buf = src;
  }
}

void save_checkpoint(const std::string& path, const StageCheckpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  write_string(out, ckpt.stage);
  write_pod(out, ckpt.fingerprint);
  const int32_t epoch = ckpt.epoch;
  write_pod(out, epoch);
  write_pod(out, ckpt.best_metric);
  const uint32_t count = static_cast<uint32_t>(ckpt.entries.size());
  write_pod(out, count);
  for (const auto& [name, t] : ckpt.entries) {
    write_string(out, name);
    const uint32_t ndim = static_cast<uint32_t>(t.dim());
    write_pod(out, ndim);
    for (int i = 0; i < t.dim(); ++i) {
      const int32_t d = t.size(i);
      write_pod(out, d);
    }
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!out) throw IoError("short write on checkpoint " + path);

  nlohmann::json side;
  side["stage"] = ckpt.stage;
  side["fingerprint"] = ckpt.fingerprint;
  side["epoch"] = ckpt.epoch;
  side["best_metric"] = ckpt.best_metric;
  std::ofstream js(path + ".json");
  js << side.dump(2) << "\n";
}

StageCheckpoint load_checkpoint(const std::string& path,
                                uint64_t expected_fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("bad checkpoint magic in " + path);

  StageCheckpoint ckpt;
  ckpt.stage = read_string(in);
  read_pod(in, ckpt.fingerprint);
  int32_t epoch = 0;
  read_pod(in, epoch);
  ckpt.epoch = epoch;
  read_pod(in, ckpt.best_metric);
  uint32_t count = 0;
  read_pod(in, count);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(in);
    uint32_t ndim = 0;
    read_pod(in, ndim);
    std::vector<int> shape(ndim);
    for (auto& d : shape) {
      int32_t v = 0;
      read_pod(in, v);
      d = v;
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    ckpt.entries.emplace_back(std::move(name), std::move(t));
  }
  if (!in) throw CheckpointError("truncated checkpoint " + path);

  if (expected_fingerprint != 0 && ckpt.fingerprint != expected_fingerprint)
    throw CheckpointError("checkpoint fingerprint mismatch for " + path);
  return ckpt;
}

}  // namespace wsseg::nn
