#include "rccm/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace rccm {

namespace {

constexpr char kMagic[8] = {'R', 'C', 'C', 'M', 'P', 'A', 'C', 'K'};

static_assert(sizeof(double) == 8, "payload format assumes 8-byte doubles");

}  // namespace

const Tensor& ArrayStore::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw CheckpointError("checkpoint array not found: " + name);
  return it->second;
}

void ArrayStore::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["meta"] = meta;
  nlohmann::json dir = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : arrays_) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    e["count"] = t.numel();
    dir.push_back(std::move(e));
    offset += static_cast<uint64_t>(t.numel()) * 8;
  }
  header["arrays"] = std::move(dir);
  const std::string htext = header.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open checkpoint for writing: " + tmp.string());
    f.write(kMagic, 8);
    const uint32_t version = kFormatVersion;
    const uint64_t hlen = htext.size();
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&hlen), 8);
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, t] : arrays_) {
      f.write(reinterpret_cast<const char*>(t.data()), t.numel() * 8);
    }
    if (!f) throw CheckpointError("checkpoint write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ArrayStore ArrayStore::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) {
    throw CheckpointError("not a checkpoint file: " + path.string());
  }
  uint32_t version = 0;
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&hlen), 8);
  if (!f) throw CheckpointError("truncated checkpoint header: " + path.string());
  if (version != kFormatVersion) {
    throw CheckpointError("checkpoint format version mismatch: file has v" +
                          std::to_string(version) + ", expected v" +
                          std::to_string(kFormatVersion));
  }
  std::string htext(hlen, '\0');
  f.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw CheckpointError("truncated checkpoint header: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const std::exception& e) {
    throw CheckpointError("bad checkpoint header: " + std::string(e.what()));
  }

  ArrayStore store;
  store.meta = header.value("meta", nlohmann::json::object());
  for (const auto& e : header.at("arrays")) {
    const std::string name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<std::vector<int64_t>>();
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()), t.numel() * 8);
    if (!f) throw CheckpointError("truncated checkpoint payload at array " + name);
    store.arrays_[name] = std::move(t);
  }
  return store;
}

}  // namespace rccm
