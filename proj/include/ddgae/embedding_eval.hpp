#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ddgae/graph_data.hpp"
#include "ddgae/svm.hpp"
#include "ddgae/training.hpp"

namespace ddgae::eval {

struct GraphEmbedding {
    Eigen::VectorXd z;  // [h_enc, h_int]
    std::size_t graph_id = 0;
    int label = 0;
};

/// One encoder pass and one denoiser pass on the clean adjacency at
/// timestep `t`. Throws ConfigError when the graph does not fit the
/// checkpoint's padded size or feature width.
GraphEmbedding extract_embedding(const train::Model& model, const train::TrainConfig& config,
                                 const data::PaddedGraph& graph, std::size_t graph_id = 0, int t = 1);

/// Embeddings for a whole dataset plus the provenance written alongside.
struct EmbeddingSet {
    std::string dataset;
    std::uint64_t config_hash = 0;
    std::vector<std::size_t> graph_ids;
    std::vector<int> labels;
    Eigen::MatrixXd z;  // one row per graph

    friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;
};

EmbeddingSet extract_all(const train::Model& model, const train::TrainConfig& config,
                         const data::PreparedDataset& dataset, std::string dataset_name, std::uint64_t config_hash,
                         int t = 1);

inline constexpr std::uint32_t kEmbeddingVersion = 1;

/// Binary file (magic, version, n, d, config hash, dataset name, ids,
/// labels, row-major doubles) plus a CSV mirror at `<path>.csv`.
void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet load_embeddings(const std::filesystem::path& path);

struct FoldOutcome {
    int fold = 0;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    double accuracy = 0.0;  // percent
    double c = 0.0;
    double gamma = 0.0;
    std::vector<double> inner_scores;  // mean inner accuracy per grid value
    bool converged = true;
};

struct AccuracyReport {
    std::string dataset;
    std::uint64_t config_hash = 0;
    int k = 0;
    std::uint64_t fold_seed = 0;
    std::vector<double> c_grid;
    int inner_k = 0;
    std::vector<FoldOutcome> folds;
    double mean = 0.0;  // percent
    double std = 0.0;   // population std over outer folds, percent

    std::vector<double> fold_accuracies() const;
};

struct ProtocolOptions {
    std::vector<double> c_grid{1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
    int inner_k = 5;
};

/// Everything a single outer fold fits from its training split; exposed so
/// leakage can be checked directly.
struct FoldFit {
    svm::Standardizer scaler;
    double gamma = 0.0;
    double c = 0.0;
    std::vector<double> inner_scores;
};

/// Scaler, bandwidth and C chosen from the training rows only. Labels are
/// the two class values mapped to +1 / -1 internally.
FoldFit select_on_train(const Eigen::MatrixXd& x_train, std::span<const int> y_train,
                        const ProtocolOptions& options, std::uint64_t seed);

/// Outer k-fold SVM evaluation. Requires exactly two label values; a fold
/// whose training split holds a single class raises InvalidFold.
AccuracyReport svm_protocol(const Eigen::MatrixXd& embeddings, std::span<const int> labels,
                            const data::FoldAssignment& folds, const ProtocolOptions& options = {},
                            std::string dataset = {}, std::uint64_t config_hash = 0);

enum class ReportFormat { json, table, plot };
ReportFormat parse_report_format(std::string_view name);
std::string_view to_string(ReportFormat format);

/// "76.90±0.03"
std::string table_cell(double mean, double std);

nlohmann::json to_json(const AccuracyReport& report);
AccuracyReport report_from_json(const nlohmann::json& j);

/// Writes `<stem>.json`, `<stem>.md` or `<stem>.svg` and returns the path.
std::filesystem::path emit_report(const AccuracyReport& report, ReportFormat format,
                                  const std::filesystem::path& stem);

}  // namespace ddgae::eval
