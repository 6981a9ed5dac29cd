// Pipeline commands behind the dat-forge CLI. Each command maps to one module
// pipeline, writes all outputs into a run directory named by the config hash,
// and refuses to overwrite a completed run unless forced.
#pragma once

#include <filesystem>
#include <string>

#include "datforge/config.hpp"

namespace datforge::cli {

inline constexpr const char* kCommands[] = {"gen-data",      "pretrain-oracle", "train-labeller",
                                            "gen-labels",    "train-student",   "evaluate",
                                            "audit-labels",  "report"};

bool is_command(const std::string& name);

// Run directory that `run_command` would use for this config.
std::filesystem::path run_dir_for(const std::string& command, const RunConfig& config);

// Executes one command; returns 0 on success, throws datforge::Error otherwise.
int run_command(const std::string& command, const RunConfig& config);

// Maps an error to the documented exit codes: 1 config/usage, 2 runtime.
int exit_code_for(const Error& error);

}  // namespace datforge::cli
