#include "datforge/config.hpp"

#include <cstdlib>
#include <fstream>

namespace datforge::cli {

namespace {

char hash_hex_digit(std::uint64_t v) {
  return "0123456789abcdef"[v & 0xf];
}

}  // namespace

Json default_config(const std::string& profile) {
  Json c;
  c["profile"] = profile;
  c["seed"] = 1;
  c["run_root"] = "";
  c["force"] = false;

  c["dataset"] = {{"role", "custom"},
                  {"name", "dataset"},
                  {"split", "train"},
                  {"count", 100},
                  {"image_size", 64},
                  {"class_count", 3},
                  {"objects_min", 1},
                  {"objects_max", 4},
                  {"class_frequency", Json::array({0.45, 0.45, 0.10})},
                  {"rare_class_mode", true},
                  {"oracle_patch", 4},
                  {"domain", "source"},
                  {"dataset_seed", 0}};

  c["oracle"] = {{"tier", "small"},
                 {"patch_size", 4},
                 {"image_size", 64},
                 {"base_width", 32},
                 {"feature_width", 48},
                 {"iterations", 1200},
                 {"batch", 8},
                 {"lr", 0.02},
                 {"momentum", 0.9},
                 {"world_dirs", Json::array()},
                 {"holdout_dirs", Json::array()}};

  c["labeller"] = {{"oracle_checkpoint", ""},
                   {"source_dir", ""},
                   {"iterations", 900},
                   {"batch", 4},
                   {"lr", 0.02},
                   {"momentum", 0.9},
                   {"state", "frozen"},
                   {"backbone_lr_scale", 0.01}};

  c["gen_labels"] = {{"labeller_checkpoint", ""}, {"target_dir", ""}, {"delta", 0.8}};

  c["train"] = {{"source_dir", ""},
                {"target_dir", ""},
                {"eval_dir", ""},
                {"align_oracle_checkpoint", ""},
                {"dino_labels", ""},
                {"label_mode", "dino"},
                {"backbone_channels", Json::array({16, 32, 64, 64})},
                {"head_channels", 64},
                {"grid_stride", 8},
                {"feature_stride", 4},
                {"nms_iou", 0.5},
                {"decode_conf_floor", 0.05},
                {"n_init_sim", 500},
                {"n_init_pl", 2000},
                {"n_init_ema", 3000},
                {"n_max", 6000},
                {"lambda_unsup", 1.0},
                {"lambda_sim", 1.0},
                {"alpha", 0.999},
                {"lr", 0.01},
                {"momentum", 0.9},
                {"batch_source", 4},
                {"batch_target", 4},
                {"projection_hidden", 128},
                {"delta", 0.8},
                {"eval_every", 500}};

  c["augment"] = {{"crop_min_scale", 0.7},  {"flip_prob", 0.5},
                  {"blur_prob", 0.5},        {"blur_sigma_min", 0.1},
                  {"blur_sigma_max", 1.5},   {"jitter_prob", 0.8},
                  {"jitter_min", 0.6},       {"jitter_max", 1.4},
                  {"grayscale_prob", 0.2},   {"cutout_prob", 0.5},
                  {"cutout_min_count", 1},   {"cutout_max_count", 3},
                  {"cutout_min_frac", 0.15}, {"cutout_max_frac", 0.30}};

  c["eval"] = {{"checkpoint", ""}, {"dataset_dir", ""}, {"model", "teacher"}};

  c["audit"] = {{"labels_file", ""}, {"dataset_dir", ""}, {"iou", 0.5}, {"delta", 0.8}};

  c["report"] = {{"inputs", Json::array()}, {"title", "report"}};

  if (profile == "paper_scale") {
    c["train"]["n_init_sim"] = 5000;
    c["train"]["n_init_pl"] = 20000;
    c["train"]["n_init_ema"] = 25000;
    c["train"]["n_max"] = 60000;
    c["train"]["alpha"] = 0.9996;
    c["train"]["lr"] = 0.04;
    c["train"]["batch_source"] = 8;
    c["train"]["batch_target"] = 8;
    c["train"]["projection_hidden"] = 1024;
  } else if (profile != "desk") {
    raise(ErrorKind::config, "unknown profile '", profile, "' (expected desk or paper_scale)");
  }
  return c;
}

namespace {

bool same_json_kind(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) return true;  // int/float interchangeable
  return a.type() == b.type();
}

void merge_checked(Json& base, const Json& user, const std::string& prefix) {
  if (!user.is_object())
    raise(ErrorKind::config, "config section '", prefix.empty() ? "<root>" : prefix,
          "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) raise(ErrorKind::config, "unknown config key '", path, "'");
    Json& slot = base[key];
    if (slot.is_object() && value.is_object()) {
      merge_checked(slot, value, path);
    } else {
      if (!same_json_kind(slot, value))
        raise(ErrorKind::config, "config key '", path, "' has the wrong type");
      slot = value;
    }
  }
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    raise(ErrorKind::config, "override '", assignment, "' is not of the form key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  Json* node = &doc;
  std::size_t begin = 0;
  while (true) {
    const auto dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot - begin);
    if (!node->is_object() || !node->contains(key))
      raise(ErrorKind::config, "override references unknown config key '", path, "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }

  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::exception&) {
    value = raw;  // plain string
  }
  if (!same_json_kind(*node, value))
    raise(ErrorKind::config, "override '", path, "' has the wrong type");
  *node = value;
}

}  // namespace

RunConfig config_from_json(Json user_doc, const std::vector<std::string>& overrides) {
  std::string profile = "desk";
  if (user_doc.contains("profile")) {
    if (!user_doc["profile"].is_string())
      raise(ErrorKind::config, "config key 'profile' has the wrong type");
    profile = user_doc["profile"].get<std::string>();
  }
  // profile may also arrive via override
  for (const auto& ov : overrides) {
    if (ov.rfind("profile=", 0) == 0) profile = ov.substr(8);
  }
  Json resolved = default_config(profile);
  merge_checked(resolved, user_doc, "");
  resolved["profile"] = profile;
  for (const auto& ov : overrides) apply_override(resolved, ov);

  RunConfig cfg;
  cfg.doc = std::move(resolved);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides) {
  Json user_doc = Json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) raise(ErrorKind::config, "cannot open config file ", path.string());
    try {
      in >> user_doc;
    } catch (const Json::exception& e) {
      raise(ErrorKind::config, "malformed config file ", path.string(), ": ", e.what());
    }
  }
  return config_from_json(std::move(user_doc), overrides);
}

std::uint64_t RunConfig::hash(const std::string& command) const {
  std::uint64_t h = fnv1a64(command);
  const std::string dump = doc.dump();
  return fnv1a64(dump.data(), dump.size(), h);
}

std::string RunConfig::run_id(const std::string& command) const {
  std::uint64_t h = hash(command);
  std::string hex;
  for (int i = 15; i >= 0; --i) hex += hash_hex_digit(h >> (4 * i));
  return command + "-" + hex;
}

std::filesystem::path resolve_run_root(const RunConfig& config) {
  const std::string configured = config.get<std::string>("run_root");
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("DATFORGE_RUN_ROOT"); env && *env) return env;
  return "runs";
}

}  // namespace datforge::cli
