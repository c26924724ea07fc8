#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddgae/config.hpp"
#include "ddgae/embedding_eval.hpp"
#include "ddgae/fetch.hpp"

namespace ddgae::pipeline {

using Log = std::function<void(const std::string&)>;

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Maps the library's exception types onto exit codes.
int exit_code_for(const std::exception& e);

/// A failure tagged with the stage that raised it.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::exception& cause);
    const std::string& stage() const noexcept { return stage_; }
    int exit_code() const noexcept { return code_; }

private:
    std::string stage_;
    int code_;
};

/// Existing `<out>/<timestamp>-<hash>` directory for this hash, if any.
std::optional<std::filesystem::path> find_run_dir(const std::filesystem::path& out, std::uint64_t hash);
std::filesystem::path create_run_dir(const std::filesystem::path& out, std::uint64_t hash);

/// Loads the configured dataset from the data root and applies `subset`.
data::Dataset load_dataset(const config::ExperimentConfig& config);

/// Seeded class-proportional sample of `count` graphs (order preserved).
data::Dataset stratified_subset(const data::Dataset& dataset, std::size_t count, std::uint64_t seed);

struct StageResult {
    std::filesystem::path artifact;
    std::filesystem::path run_dir;
    bool reused = false;
};

/// Trains into the run directory for this config. A finished run with the
/// same hash is reused; an interrupted one resumes from its latest periodic
/// checkpoint.
StageResult run_train(const config::ExperimentConfig& config, const Log& log = {}, bool fresh = false);

/// Extracts embeddings for the checkpoint's dataset into
/// `<checkpoint dir>/embeddings.bin`.
StageResult run_embed(const std::filesystem::path& checkpoint, const Log& log = {}, bool fresh = false);

struct EvalOptions {
    int folds = 10;
    std::uint64_t seed = 0;
    bool force = false;  // accept inputs with differing config hashes
    std::vector<eval::ReportFormat> formats{eval::ReportFormat::json, eval::ReportFormat::table,
                                            eval::ReportFormat::plot};
    std::optional<std::filesystem::path> out_dir;  // default: next to the first input
};

struct EvalResult {
    eval::AccuracyReport report;
    std::vector<std::filesystem::path> artifacts;
};

/// Runs the SVM protocol over one or more embedding files (rows are
/// concatenated). Differing config hashes are refused unless forced.
EvalResult run_eval(const std::vector<std::filesystem::path>& embeddings, const EvalOptions& options,
                    const Log& log = {});

struct ReproResult {
    StageResult train;
    StageResult embed;
    EvalResult eval;
    std::string table_row;
};

/// fetch -> train -> embed -> eval. Each stage failure is rethrown as a
/// StageError; artifacts of completed stages stay in place.
ReproResult run_repro(const config::ExperimentConfig& config, const fetch::FetchOptions& fetch_options,
                      const Log& log = {});

}  // namespace ddgae::pipeline
