#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ddgae::data {

enum class DatasetName { proteins, imdb_binary };

/// "PROTEINS" / "IMDB-BINARY", the TUDataset file prefixes.
std::string_view to_string(DatasetName name);
DatasetName parse_dataset_name(std::string_view name);

/// One undirected graph with 0-based node indices. Edges are stored once,
/// as (i, j) with i < j, sorted.
struct GraphInstance {
    int n_nodes = 0;
    std::vector<std::pair<int, int>> edges;
    std::optional<std::vector<int>> node_labels;  // remapped to 0..k-1
    int graph_label = 0;                           // remapped to 0..c-1

    int degree(int node) const;
    std::vector<int> degrees() const;

    friend bool operator==(const GraphInstance&, const GraphInstance&) = default;
};

struct DatasetStats {
    std::size_t graphs = 0;
    std::size_t nodes = 0;
    std::size_t directed_entries = 0;  // lines of the edge file
    std::size_t undirected_edges = 0;  // after deduplication
    std::size_t self_loops_dropped = 0;
    int max_nodes = 0;
    int max_degree = 0;

    double mean_nodes() const { return graphs ? static_cast<double>(nodes) / static_cast<double>(graphs) : 0.0; }
    double mean_directed_entries() const {
        return graphs ? static_cast<double>(directed_entries) / static_cast<double>(graphs) : 0.0;
    }
    double mean_undirected_edges() const {
        return graphs ? static_cast<double>(undirected_edges) / static_cast<double>(graphs) : 0.0;
    }
};

struct Dataset {
    std::string name;
    std::vector<GraphInstance> graphs;
    std::vector<int> graph_label_values;  // original value of each remapped class
    std::vector<int> node_label_values;   // empty when the dataset has no node labels
    DatasetStats stats;
};

/// `<cache_root>/<NAME>/raw`.
std::filesystem::path raw_dir(const std::filesystem::path& cache_root, DatasetName name);

/// Reads `<dir>/<prefix>_A.txt`, `_graph_indicator.txt`, `_graph_labels.txt`
/// and, if `require_node_labels`, `_node_labels.txt` (optional otherwise).
Dataset load_tudataset_files(const std::filesystem::path& dir, std::string_view prefix, bool require_node_labels);

/// Loads one of the two supported benchmarks from a directory holding its
/// raw files. PROTEINS requires node labels.
Dataset load_tudataset(const std::filesystem::path& dir, DatasetName name);

/// Writes a dataset back in TUDataset raw form (both edge directions).
void save_tudataset(const std::filesystem::path& dir, std::string_view prefix, const Dataset& dataset);

enum class FeaturePolicy { node_label_onehot, degree_onehot };

FeaturePolicy parse_feature_policy(std::string_view name);
std::string_view to_string(FeaturePolicy policy);

FeaturePolicy default_feature_policy(DatasetName name);

/// Largest degree one-hot width used for featureless graphs.
inline constexpr int kMaxDegreeFeatures = 136;

/// Node-label vocabulary size, or min(max degree + 1, kMaxDegreeFeatures).
int default_feature_width(const Dataset& dataset, FeaturePolicy policy);

/// n_nodes x width one-hot features. Degrees at or above width go to the
/// last column.
Eigen::MatrixXd build_node_features(const GraphInstance& graph, FeaturePolicy policy, int width);

struct PaddedGraph {
    Eigen::MatrixXd adjacency;  // n_max x n_max
    Eigen::MatrixXd features;   // n_max x F
    Eigen::VectorXd node_mask;  // n_max, leading ones
    Eigen::MatrixXd edge_mask;  // outer(node_mask, node_mask) minus diagonal
    int label = 0;
    int n_nodes = 0;

    int n_max() const { return static_cast<int>(adjacency.rows()); }
};

PaddedGraph pad_and_mask(const GraphInstance& graph, const Eigen::MatrixXd& features, int n_max);

/// Smallest multiple of 2^levels that is >= max_nodes.
int padded_size(int max_nodes, int levels);

struct PreparedDataset {
    std::vector<PaddedGraph> graphs;
    std::vector<std::size_t> source_index;  // position in the loaded dataset
    std::size_t dropped = 0;                // graphs larger than the cap
    int n_max = 0;
    int feature_width = 0;
    FeaturePolicy policy = FeaturePolicy::degree_onehot;
};

/// Builds features and pads every graph. Graphs with more than `max_nodes`
/// nodes (when positive) are dropped and counted. `n_max` of zero derives
/// the padded size from the largest kept graph.
PreparedDataset prepare_dataset(const Dataset& dataset, FeaturePolicy policy, int feature_width, int unet_levels,
                                int max_nodes = 0, int n_max = 0);

struct FoldAssignment {
    int k = 0;
    std::vector<int> fold_of;
    std::uint64_t seed = 0;

    std::vector<std::size_t> test_indices(int fold) const;
    std::vector<std::size_t> train_indices(int fold) const;
};

/// Stratified k-fold split. Per class, members are shuffled and dealt
/// round-robin, continuing the rotation across classes so fold sizes stay
/// within one of each other.
FoldAssignment stratified_folds(std::span<const int> labels, int k, std::uint64_t seed);

}  // namespace ddgae::data
