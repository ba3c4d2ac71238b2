#pragma once

// Self-describing binary checkpoint container.
//
//   bytes 0..7   "SBIRCKPT"
//   u32          format version (1)
//   u64          header length L
//   L bytes      JSON header {"kind", "config", "meta", "read_only", "tensors": [{"name", "shape"}]}
//   ...          tensor payloads in header order, little-endian IEEE-754 binary64
//
// Values are written as raw bits, so a save/load round trip is bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sbir/autograd.hpp"
#include "sbir/nn.hpp"

namespace sbir {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  bool read_only = false;
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw CheckpointError("checkpoint '" + kind + "' has no tensor '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }
};

inline constexpr char kCheckpointMagic[8] = {'S', 'B', 'I', 'R', 'C', 'K', 'P', 'T'};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  nlohmann::json header;
  header["kind"] = ck.kind;
  header["config"] = ck.config;
  header["meta"] = ck.meta;
  header["read_only"] = ck.read_only;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : ck.tensors) {
    if (numel(t.shape) != t.values.size()) throw CheckpointError("tensor '" + t.name + "' shape/value mismatch");
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
  }
  const std::string text = header.dump();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw CheckpointError("cannot write " + tmp.string());
    os.write(kCheckpointMagic, 8);
    const std::uint32_t version = 1;
    const std::uint64_t len = text.size();
    os.write(reinterpret_cast<const char*>(&version), sizeof version);
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : ck.tensors)
      os.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    if (!os) throw CheckpointError("short write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  is.read(magic, 8);
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError(path.string() + ": not a checkpoint");
  if (version != 1) throw CheckpointError(path.string() + ": unsupported version " + std::to_string(version));
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw CheckpointError(path.string() + ": truncated header");

  const auto header = nlohmann::json::parse(text);
  Checkpoint ck;
  ck.kind = header.at("kind").get<std::string>();
  ck.config = header.at("config");
  ck.meta = header.value("meta", nlohmann::json::object());
  ck.read_only = header.value("read_only", false);
  for (const auto& t : header.at("tensors")) {
    NamedTensor nt{t.at("name").get<std::string>(), t.at("shape").get<Shape>(), {}};
    nt.values.resize(numel(nt.shape));
    is.read(reinterpret_cast<char*>(nt.values.data()), static_cast<std::streamsize>(nt.values.size() * sizeof(double)));
    if (!is) throw CheckpointError(path.string() + ": truncated tensor '" + nt.name + "'");
    ck.tensors.push_back(std::move(nt));
  }
  return ck;
}

inline void append_params(Checkpoint& ck, const nn::ParamList& params) {
  for (const auto& p : params) ck.tensors.push_back({p.name, p.var.shape(), {p.var.value().begin(), p.var.value().end()}});
}

// Copies checkpoint tensors into the listed parameters (names and shapes
// must match).
inline void restore_params(const Checkpoint& ck, const nn::ParamList& params) {
  for (const auto& p : params) {
    const NamedTensor& t = ck.tensor(p.name);
    if (t.shape != p.var.shape())
      throw CheckpointError("tensor '" + p.name + "' has shape " + shape_str(t.shape) + ", model expects " +
                            shape_str(p.var.shape()));
    std::copy(t.values.begin(), t.values.end(), p.var.node().value.begin());
  }
}

// Adam moments are stored as "<param>.adam_m" / "<param>.adam_v" with the
// per-parameter step count in meta.
inline void append_optimizer(Checkpoint& ck, const nn::Adam& opt) {
  nlohmann::json steps = nlohmann::json::object();
  for (std::size_t k = 0; k < opt.params().size(); ++k) {
    const auto& p = opt.params()[k];
    const auto& s = opt.states()[k];
    steps[p.name] = s.t;
    if (s.m.empty()) continue;
    ck.tensors.push_back({p.name + ".adam_m", p.var.shape(), s.m});
    ck.tensors.push_back({p.name + ".adam_v", p.var.shape(), s.v});
  }
  ck.meta["adam_steps"] = steps;
}

inline void restore_optimizer(const Checkpoint& ck, nn::Adam& opt) {
  const auto steps = ck.meta.value("adam_steps", nlohmann::json::object());
  for (std::size_t k = 0; k < opt.params().size(); ++k) {
    const auto& p = opt.params()[k];
    auto& s = opt.states()[k];
    s = {};
    if (!ck.has(p.name + ".adam_m")) continue;
    s.m = ck.tensor(p.name + ".adam_m").values;
    s.v = ck.tensor(p.name + ".adam_v").values;
    s.t = steps.value(p.name, 0LL);
  }
}

}  // namespace sbir
