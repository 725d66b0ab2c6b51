#include "spikedrive/checkpoint.hpp"

#include <filesystem>
#include <fstream>

namespace spikedrive {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void write_tensor(const fs::path& path, const TensorF& t) {
  std::ofstream out(path, std::ios::binary);
  contract(out.good(), "checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(sizeof(float) * t.size()));
  contract(out.good(), "checkpoint: write failed for " + path.string());
}

void read_tensor(const fs::path& path, TensorF& t) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in.good()) throw FlaggedError("checkpoint blob missing: " + path.string());
  const auto bytes = static_cast<int64_t>(in.tellg());
  if (bytes != t.size() * static_cast<int64_t>(sizeof(float)))
    throw FlaggedError("checkpoint blob size mismatch: " + path.string());
  in.seekg(0);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(float) * t.size()));
}

}  // namespace

void save_checkpoint(const std::string& dir, ParamRegistry<float>& reg,
                     const ModelConfig& cfg, int stage) {
  fs::create_directories(fs::path(dir) / "tensors");
  json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["stage"] = stage;
  manifest["model"] = cfg.to_json();
  json tensors = json::array();
  auto describe = [&](const std::string& name, const TensorF& t, const char* kind) {
    const std::string rel = "tensors/" + name + ".bin";
    write_tensor(fs::path(dir) / rel, t);
    tensors.push_back({{"name", name},
                       {"kind", kind},
                       {"shape", t.shape()},
                       {"dtype", "f32"},
                       {"path", rel}});
  };
  for (const auto& p : reg.params()) describe(p.name, p.value->value, "param");
  for (const auto& b : reg.buffers()) describe(b.name, *b.tensor, "buffer");
  manifest["tensors"] = tensors;
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
  contract(out.good(), "checkpoint manifest write failed");
}

CheckpointMeta read_checkpoint_meta(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in.good()) throw FlaggedError("checkpoint manifest missing in " + dir);
  json manifest = json::parse(in);
  const int version = manifest.at("format_version").get<int>();
  if (version != kCheckpointFormatVersion)
    throw FlaggedError("unsupported checkpoint format version " +
                       std::to_string(version));
  CheckpointMeta meta;
  meta.stage = manifest.at("stage").get<int>();
  meta.config = ModelConfig::from_json(manifest.at("model"));
  return meta;
}

void load_checkpoint_tensors(const std::string& dir, ParamRegistry<float>& reg) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in.good()) throw FlaggedError("checkpoint manifest missing in " + dir);
  json manifest = json::parse(in);
  std::map<std::string, json> listed;
  for (const auto& t : manifest.at("tensors"))
    listed[t.at("name").get<std::string>()] = t;

  auto load_one = [&](const std::string& name, TensorF& dst) {
    auto it = listed.find(name);
    if (it == listed.end())
      throw FlaggedError("checkpoint is missing tensor: " + name);
    const auto shape = it->second.at("shape").get<std::vector<int64_t>>();
    if (shape != dst.shape())
      throw FlaggedError("checkpoint shape mismatch for " + name);
    read_tensor(fs::path(dir) / it->second.at("path").get<std::string>(), dst);
  };
  for (auto& p : reg.params()) load_one(p.name, p.value->value);
  for (auto& b : reg.buffers()) load_one(b.name, *b.tensor);
}

}  // namespace spikedrive
