#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "cibr/train.hpp"

namespace cibr {

/// Parsed experiment document. Layout:
///
///   { "seed": 0,
///     "output_dir": "runs/x",
///     "data":      { "kind": "gaussian" | "clustered" | "csv", ... },
///     "model":     { "encoder_hidden", "embed_dim", "critic_hidden" },
///     "train":     { "lambda", "beta", "tau", "symmetric", "clamp_T", "batch_size",
///                    "steps", "critic_steps", "lr_encoder", "lr_critic",
///                    "ema_decay", "final_window", "clip_only" },
///     "eval":      { "n_samples", "ks", "direction" },
///     "estimator": { "hidden", "lr", "batch_size", "steps", "eval_samples", "ema_decay" } }
///
/// Every key is optional and defaulted; unknown keys raise ConfigError.
struct ConfigFile {
    RunConfig run;
    EstimatorConfig estimator;
    std::optional<std::filesystem::path> output_dir;
};

/// Relative csv paths resolve against base_dir.
ConfigFile parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ConfigFile load_config_file(const std::filesystem::path& path);

/// Full echo with defaults filled in; parse_config(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const EstimatorConfig& cfg);
nlohmann::json to_json(const ConfigFile& cfg);

/// FNV-1a over the compact dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

}  // namespace cibr
