// Checkpoints: manifest.json mapping tensor name -> (dtype, shape, offset)
// plus payload.bin holding concatenated DTEN records at those offsets.
#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "datforge/tensor.hpp"

namespace datforge::checkpoint {

struct Checkpoint {
  nlohmann::ordered_json meta;  // free-form: kind, iteration, rng state, configs
  numerics::ModelState<float> tensors;
};

void save(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& dir);

// Copies src values into every parameter of dst; raises naming the parameter
// when one is missing from src or shapes conflict.
void restore_into(numerics::ModelState<float>& dst, const numerics::ModelState<float>& src,
                  const std::string& prefix);

// Inserts all tensors of src under prefix+name into dst (cloned).
void add_prefixed(numerics::ModelState<float>& dst, const numerics::ModelState<float>& src,
                  const std::string& prefix);

// Extracts tensors under prefix into a new state with the prefix stripped.
numerics::ModelState<float> extract_prefixed(const numerics::ModelState<float>& src,
                                             const std::string& prefix);

}  // namespace datforge::checkpoint
