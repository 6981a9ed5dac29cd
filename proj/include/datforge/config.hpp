// Run configuration: JSON document with profile defaults, strict key
// validation, dotted-path overrides, and content hashing for run directories.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "datforge/common.hpp"

namespace datforge::cli {

using Json = nlohmann::ordered_json;

// Full default document for a profile ("desk" or "paper_scale").
Json default_config(const std::string& profile);

struct RunConfig {
  Json doc;

  template <typename T>
  T get(const std::string& dotted_path) const {
    const Json* node = &doc;
    std::size_t begin = 0;
    while (begin <= dotted_path.size()) {
      const auto dot = dotted_path.find('.', begin);
      const std::string key = dotted_path.substr(begin, dot - begin);
      if (!node->is_object() || !node->contains(key))
        raise(ErrorKind::config, "config key '", dotted_path, "' not found");
      node = &(*node)[key];
      if (dot == std::string::npos) break;
      begin = dot + 1;
    }
    try {
      return node->get<T>();
    } catch (const Json::exception&) {
      raise(ErrorKind::config, "config key '", dotted_path, "' has the wrong type");
    }
  }

  std::uint64_t hash(const std::string& command) const;
  std::string run_id(const std::string& command) const;
};

// Loads file (optional), applies profile defaults, rejects unknown keys and
// type mismatches, then applies key=value overrides.
RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides);
RunConfig config_from_json(Json user_doc, const std::vector<std::string>& overrides = {});

// Root directory for run outputs: config value, else $DATFORGE_RUN_ROOT,
// else "runs".
std::filesystem::path resolve_run_root(const RunConfig& config);

}  // namespace datforge::cli
