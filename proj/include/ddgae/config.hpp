#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddgae/graph_data.hpp"
#include "ddgae/training.hpp"

namespace ddgae::config {

/// Everything that determines one experiment. Model-shape fields left at
/// zero (`feature_width`) are derived from the dataset at run time.
struct ExperimentConfig {
    std::string dataset = "IMDB-BINARY";
    std::filesystem::path data_root;  // empty -> DDGAE_DATA_ROOT or ./data
    std::filesystem::path out = "runs";
    int max_nodes = 0;      // drop larger graphs; 0 keeps everything
    std::size_t subset = 0;  // keep a seeded stratified sample of this many graphs; 0 keeps all
    int feature_width = 0;
    bool feature_policy_set = false;
    train::TrainConfig train;
    int eval_folds = 10;
    std::uint64_t eval_seed = 0;
    int extract_t = 1;

    /// Throws ConfigError on inconsistent values.
    void validate() const;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Parses a flat `key = value` document. Blank lines and lines starting
/// with '#' are ignored. Unknown or repeated keys raise ConfigError.
/// `overrides` replace (or add) entries before the values are applied.
ExperimentConfig parse_config(std::string_view text, const Overrides& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

/// Applies a single key/value (same keys as the file format).
void set_value(ExperimentConfig& config, std::string_view key, std::string_view value);

/// Canonical form: all result-affecting fields, keys sorted. Paths are not
/// part of it, so moving the data or output directory keeps the hash.
nlohmann::json canonical_json(const ExperimentConfig& config);
std::string to_config_text(const ExperimentConfig& config);

/// FNV-1a 64 over the canonical JSON dump.
std::uint64_t config_hash(const ExperimentConfig& config);
std::string hash_hex(std::uint64_t hash);

/// data_root if set, else $DDGAE_DATA_ROOT, else ./data.
std::filesystem::path resolve_data_root(const ExperimentConfig& config);

}  // namespace ddgae::config
