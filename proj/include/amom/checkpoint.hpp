#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "amom/model.hpp"

namespace amom {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[] = "AMOM1";

struct CheckpointMeta {
  std::uint64_t update = 0;
  double valid_bleu = 0;  // BLEU at T=10 on the validation set
  std::string path;
  std::string config_hash;
};

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const ModelConfig& c) {
  std::string text;
  for (auto& [k, v] : c.to_pairs()) text += k + "=" + v + "\n";
  return fnv1a_hex(text);
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Layout: magic line "AMOM1", text header of key=value lines (model config
// and meta), one "param <name> <rank> <extents...>" line per tensor, an
// "end" line, then raw little-endian float32 values in manifest order.
inline void save_checkpoint(const std::string& path, const TransformerModel<float>& model, const CheckpointMeta& meta = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path);
  os << kCheckpointMagic << '\n';
  for (auto& [k, v] : model.config().to_pairs()) os << "model." << k << '=' << v << '\n';
  os << "meta.update=" << meta.update << '\n';
  os << "meta.valid_bleu=" << format_double(meta.valid_bleu) << '\n';
  os << "meta.config_hash=" << config_hash(model.config()) << '\n';
  const auto params = model.named_parameters();
  for (const auto& p : params) {
    os << "param " << p.name << ' ' << p.tensor.rank();
    for (auto e : p.tensor.shape()) os << ' ' << e;
    os << '\n';
  }
  os << "end\n";
  for (const auto& p : params) {
    auto data = p.tensor.data();
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  if (!os) throw DataError("write failed for checkpoint " + path);
}

struct LoadedCheckpoint {
  TransformerModel<float> model;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint " + path);
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) throw DataError(path + ": not an AMOM1 checkpoint");
  std::map<std::string, std::string> model_kv;
  CheckpointMeta meta;
  meta.path = path;
  struct Entry {
    std::string name;
    Shape shape;
  };
  std::vector<Entry> manifest;
  bool ended = false;
  while (std::getline(is, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("param ", 0) == 0) {
      std::istringstream ls(line.substr(6));
      Entry e;
      std::size_t rank = 0;
      ls >> e.name >> rank;
      e.shape.resize(rank);
      for (auto& x : e.shape) ls >> x;
      if (!ls) throw DataError(path + ": malformed manifest line '" + line + "'");
      manifest.push_back(std::move(e));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(path + ": malformed header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key.rfind("model.", 0) == 0) model_kv[key.substr(6)] = value;
    else if (key == "meta.update") meta.update = std::stoull(value);
    else if (key == "meta.valid_bleu") meta.valid_bleu = std::stod(value);
    else if (key == "meta.config_hash") meta.config_hash = value;
    else throw DataError(path + ": unknown header key '" + key + "'");
  }
  if (!ended) throw DataError(path + ": truncated header");
  TransformerModel<float> model(ModelConfig::from_pairs(model_kv), 0);
  auto params = model.named_parameters();
  if (params.size() != manifest.size()) throw DataError(path + ": manifest does not match the model config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != manifest[i].name || params[i].tensor.shape() != manifest[i].shape)
      throw DataError(path + ": manifest entry '" + manifest[i].name + "' does not match the model");
    auto data = params[i].tensor.data();
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!is) throw DataError(path + ": truncated parameter data");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError(path + ": trailing bytes after parameters");
  if (meta.config_hash.empty()) meta.config_hash = config_hash(model.config());
  return {std::move(model), meta};
}

}  // namespace amom
