#include "datforge/checkpoint.hpp"

#include <fstream>

#include "datforge/dten.hpp"

namespace datforge::checkpoint {

using json = nlohmann::ordered_json;

void save(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) raise(ErrorKind::io, "cannot create checkpoint directory ", dir.string());

  json manifest;
  manifest["format"] = "datforge-checkpoint";
  manifest["version"] = 1;
  manifest["meta"] = ckpt.meta;
  json tensors = json::object();

  std::ofstream payload(dir / "payload.bin", std::ios::binary);
  if (!payload) raise(ErrorKind::io, "cannot write ", (dir / "payload.bin").string());
  for (const auto& [name, t] : ckpt.tensors) {
    const auto offset = static_cast<std::uint64_t>(payload.tellp());
    numerics::write_dten(payload, t, name);
    json shape = json::array();
    for (int i = 0; i < t.rank(); ++i) shape.push_back(t.dim(i));
    tensors[name] = {{"dtype", "f32"}, {"shape", shape}, {"offset", offset}};
  }
  manifest["tensors"] = tensors;
  if (!payload) raise(ErrorKind::io, "failed writing checkpoint payload in ", dir.string());

  std::ofstream out(dir / "manifest.json");
  if (!out) raise(ErrorKind::io, "cannot write ", (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  if (!out) raise(ErrorKind::io, "failed writing checkpoint manifest in ", dir.string());
}

Checkpoint load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in)
    raise(ErrorKind::missing, "checkpoint manifest not found: ",
          (dir / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    raise(ErrorKind::format, "malformed checkpoint manifest in ", dir.string(), ": ", e.what());
  }
  if (manifest.value("format", "") != "datforge-checkpoint")
    raise(ErrorKind::format, "not a checkpoint manifest: ", dir.string());

  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", json::object());

  std::ifstream payload(dir / "payload.bin", std::ios::binary);
  if (!payload)
    raise(ErrorKind::missing, "checkpoint payload not found: ", (dir / "payload.bin").string());
  for (const auto& [name, info] : manifest.at("tensors").items()) {
    const auto offset = info.at("offset").get<std::uint64_t>();
    payload.seekg(static_cast<std::streamoff>(offset));
    if (!payload)
      raise(ErrorKind::format, "checkpoint payload truncated before tensor '", name, "'");
    auto tensor = numerics::read_dten<float>(payload, "tensor '" + name + "'");
    const auto& shape_json = info.at("shape");
    if (static_cast<int>(shape_json.size()) != tensor.rank())
      raise(ErrorKind::format, "checkpoint manifest/payload shape conflict for '", name, "'");
    for (int i = 0; i < tensor.rank(); ++i)
      if (shape_json[static_cast<std::size_t>(i)].get<int>() != tensor.dim(i))
        raise(ErrorKind::format, "checkpoint manifest/payload shape conflict for '", name, "'");
    ckpt.tensors.add(name, std::move(tensor));
  }
  return ckpt;
}

void restore_into(numerics::ModelState<float>& dst, const numerics::ModelState<float>& src,
                  const std::string& prefix) {
  for (auto& [name, t] : dst) {
    const std::string key = prefix + name;
    if (!src.contains(key))
      raise(ErrorKind::missing, "checkpoint is missing tensor '", key, "'");
    const auto& loaded = src.at(key);
    if (loaded.shape() != t.shape())
      raise(ErrorKind::shape, "checkpoint tensor '", key, "' has shape ",
            numerics::shape_str(loaded.shape()), ", expected ",
            numerics::shape_str(t.shape()));
    std::copy(loaded.values().begin(), loaded.values().end(), t.values().begin());
  }
}

void add_prefixed(numerics::ModelState<float>& dst, const numerics::ModelState<float>& src,
                  const std::string& prefix) {
  for (const auto& [name, t] : src) dst.add(prefix + name, t.clone());
}

numerics::ModelState<float> extract_prefixed(const numerics::ModelState<float>& src,
                                             const std::string& prefix) {
  numerics::ModelState<float> out;
  for (const auto& [name, t] : src) {
    if (name.rfind(prefix, 0) == 0) out.add(name.substr(prefix.size()), t.clone());
  }
  return out;
}

}  // namespace datforge::checkpoint
