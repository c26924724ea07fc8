#include "ddgae/graph_data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ddgae/errors.hpp"
#include "ddgae/rng.hpp"

namespace ddgae::data {

namespace fs = std::filesystem;

namespace {

/// Parses every integer on a line, skipping separators (commas, spaces).
std::vector<long long> parse_ints(std::string_view line, const fs::path& file, std::size_t line_no) {
    std::vector<long long> out;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
        while (p < end && (*p == ' ' || *p == ',' || *p == '\t' || *p == '\r')) ++p;
        if (p >= end) break;
        long long v = 0;
        auto [next, ec] = std::from_chars(p, end, v);
        if (ec != std::errc()) {
            // Some TU label files store integers as "1.0".
            double d = 0.0;
            std::string token;
            const char* q = p;
            while (q < end && *q != ' ' && *q != ',' && *q != '\t' && *q != '\r') ++q;
            token.assign(p, q);
            std::istringstream in(token);
            if (!(in >> d) || d != static_cast<double>(static_cast<long long>(d))) {
                throw CorruptDataset(file.string() + ":" + std::to_string(line_no) + ": not an integer: '" + token + "'");
            }
            out.push_back(static_cast<long long>(d));
            p = q;
            continue;
        }
        out.push_back(v);
        p = next;
    }
    return out;
}

template <typename F>
void for_each_line(const fs::path& file, F&& visit) {
    std::ifstream in(file);
    if (!in) throw IngestError("cannot open dataset file " + file.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        visit(parse_ints(line, file, line_no), line_no);
    }
}

std::vector<long long> read_column(const fs::path& file) {
    std::vector<long long> values;
    for_each_line(file, [&](const std::vector<long long>& v, std::size_t line_no) {
        if (v.size() != 1) {
            throw CorruptDataset(file.string() + ":" + std::to_string(line_no) + ": expected one value per line");
        }
        values.push_back(v[0]);
    });
    return values;
}

/// Maps values to their rank among the sorted distinct values.
std::pair<std::vector<int>, std::vector<int>> remap_sorted(const std::vector<long long>& values) {
    std::set<long long> distinct(values.begin(), values.end());
    std::map<long long, int> rank;
    std::vector<int> originals;
    for (long long v : distinct) {
        rank.emplace(v, static_cast<int>(originals.size()));
        originals.push_back(static_cast<int>(v));
    }
    std::vector<int> mapped;
    mapped.reserve(values.size());
    for (long long v : values) mapped.push_back(rank.at(v));
    return {mapped, originals};
}

fs::path member(const fs::path& dir, std::string_view prefix, std::string_view suffix) {
    return dir / (std::string(prefix) + std::string(suffix));
}

}  // namespace

std::string_view to_string(DatasetName name) {
    switch (name) {
        case DatasetName::proteins:
            return "PROTEINS";
        case DatasetName::imdb_binary:
            return "IMDB-BINARY";
    }
    return "unknown";
}

DatasetName parse_dataset_name(std::string_view name) {
    if (name == "PROTEINS") return DatasetName::proteins;
    if (name == "IMDB-BINARY" || name == "IMDB-B") return DatasetName::imdb_binary;
    throw InvalidArgument("unsupported dataset '" + std::string(name) + "' (expected PROTEINS or IMDB-BINARY)");
}

int GraphInstance::degree(int node) const {
    int d = 0;
    for (auto [i, j] : edges) d += (i == node) + (j == node);
    return d;
}

std::vector<int> GraphInstance::degrees() const {
    std::vector<int> d(static_cast<std::size_t>(n_nodes), 0);
    for (auto [i, j] : edges) {
        ++d[static_cast<std::size_t>(i)];
        ++d[static_cast<std::size_t>(j)];
    }
    return d;
}

fs::path raw_dir(const fs::path& cache_root, DatasetName name) { return cache_root / std::string(to_string(name)) / "raw"; }

Dataset load_tudataset_files(const fs::path& dir, std::string_view prefix, bool require_node_labels) {
    const auto edge_file = member(dir, prefix, "_A.txt");
    const auto indicator_file = member(dir, prefix, "_graph_indicator.txt");
    const auto graph_label_file = member(dir, prefix, "_graph_labels.txt");
    const auto node_label_file = member(dir, prefix, "_node_labels.txt");
    for (const auto& f : {edge_file, indicator_file, graph_label_file}) {
        if (!fs::exists(f)) throw IngestError("missing dataset file " + f.string());
    }
    const bool have_node_labels = fs::exists(node_label_file);
    if (require_node_labels && !have_node_labels) throw IngestError("missing dataset file " + node_label_file.string());

    Dataset ds;
    ds.name = std::string(prefix);

    const auto indicator = read_column(indicator_file);
    const auto raw_graph_labels = read_column(graph_label_file);
    const auto n_graphs = raw_graph_labels.size();
    if (n_graphs == 0) throw CorruptDataset(graph_label_file.string() + ": no graphs");

    // Global node id (0-based) -> (graph, local index).
    std::vector<std::pair<std::size_t, int>> where(indicator.size());
    std::vector<int> graph_sizes(n_graphs, 0);
    for (std::size_t v = 0; v < indicator.size(); ++v) {
        const long long g = indicator[v];
        if (g < 1 || static_cast<std::size_t>(g) > n_graphs) {
            throw CorruptDataset(indicator_file.string() + ":" + std::to_string(v + 1) + ": graph id " +
                                 std::to_string(g) + " outside 1.." + std::to_string(n_graphs));
        }
        auto gi = static_cast<std::size_t>(g - 1);
        where[v] = {gi, graph_sizes[gi]++};
    }

    auto [graph_labels, graph_label_values] = remap_sorted(raw_graph_labels);
    ds.graph_label_values = std::move(graph_label_values);
    ds.graphs.resize(n_graphs);
    for (std::size_t g = 0; g < n_graphs; ++g) {
        ds.graphs[g].n_nodes = graph_sizes[g];
        ds.graphs[g].graph_label = graph_labels[g];
    }

    if (have_node_labels) {
        const auto raw_node_labels = read_column(node_label_file);
        if (raw_node_labels.size() != indicator.size()) {
            throw CorruptDataset(node_label_file.string() + ": " + std::to_string(raw_node_labels.size()) +
                                 " labels for " + std::to_string(indicator.size()) + " nodes");
        }
        auto [node_labels, node_label_values] = remap_sorted(raw_node_labels);
        ds.node_label_values = std::move(node_label_values);
        for (auto& g : ds.graphs) g.node_labels.emplace(static_cast<std::size_t>(g.n_nodes), 0);
        for (std::size_t v = 0; v < indicator.size(); ++v) {
            auto [g, local] = where[v];
            (*ds.graphs[g].node_labels)[static_cast<std::size_t>(local)] = node_labels[v];
        }
    }

    std::vector<std::set<std::pair<int, int>>> edge_sets(n_graphs);
    const auto n_nodes_total = static_cast<long long>(indicator.size());
    for_each_line(edge_file, [&](const std::vector<long long>& v, std::size_t line_no) {
        if (v.size() != 2) {
            throw CorruptDataset(edge_file.string() + ":" + std::to_string(line_no) + ": expected 'i, j'");
        }
        ++ds.stats.directed_entries;
        for (long long x : v) {
            if (x < 1 || x > n_nodes_total) {
                throw CorruptDataset(edge_file.string() + ":" + std::to_string(line_no) + ": dangling node index " +
                                     std::to_string(x) + " (dataset has " + std::to_string(n_nodes_total) +
                                     " nodes)");
            }
        }
        const auto [ga, la] = where[static_cast<std::size_t>(v[0] - 1)];
        const auto [gb, lb] = where[static_cast<std::size_t>(v[1] - 1)];
        if (ga != gb) {
            throw CorruptDataset(edge_file.string() + ":" + std::to_string(line_no) + ": edge joins graphs " +
                                 std::to_string(ga + 1) + " and " + std::to_string(gb + 1));
        }
        if (la == lb) {
            ++ds.stats.self_loops_dropped;
            return;
        }
        edge_sets[ga].emplace(std::min(la, lb), std::max(la, lb));
    });

    for (std::size_t g = 0; g < n_graphs; ++g) {
        auto& graph = ds.graphs[g];
        graph.edges.assign(edge_sets[g].begin(), edge_sets[g].end());
        ds.stats.undirected_edges += graph.edges.size();
        ds.stats.nodes += static_cast<std::size_t>(graph.n_nodes);
        ds.stats.max_nodes = std::max(ds.stats.max_nodes, graph.n_nodes);
        for (int d : graph.degrees()) ds.stats.max_degree = std::max(ds.stats.max_degree, d);
    }
    ds.stats.graphs = n_graphs;
    return ds;
}

Dataset load_tudataset(const fs::path& dir, DatasetName name) {
    return load_tudataset_files(dir, to_string(name), name == DatasetName::proteins);
}

void save_tudataset(const fs::path& dir, std::string_view prefix, const Dataset& dataset) {
    fs::create_directories(dir);
    auto open = [&](std::string_view suffix) {
        std::ofstream out(member(dir, prefix, suffix));
        if (!out) throw IngestError("cannot write " + member(dir, prefix, suffix).string());
        return out;
    };
    auto edges = open("_A.txt");
    auto indicator = open("_graph_indicator.txt");
    auto graph_labels = open("_graph_labels.txt");
    const bool with_node_labels = !dataset.graphs.empty() && dataset.graphs.front().node_labels.has_value();
    std::ofstream node_labels;
    if (with_node_labels) node_labels = open("_node_labels.txt");

    long long offset = 0;
    for (std::size_t g = 0; g < dataset.graphs.size(); ++g) {
        const auto& graph = dataset.graphs[g];
        for (int v = 0; v < graph.n_nodes; ++v) {
            indicator << g + 1 << '\n';
            if (with_node_labels) node_labels << (*graph.node_labels)[static_cast<std::size_t>(v)] << '\n';
        }
        // Both directions, sorted by source, as the public files do.
        std::vector<std::pair<int, int>> directed;
        for (auto [i, j] : graph.edges) {
            directed.emplace_back(i, j);
            directed.emplace_back(j, i);
        }
        std::sort(directed.begin(), directed.end());
        for (auto [i, j] : directed) edges << offset + i + 1 << ", " << offset + j + 1 << '\n';
        graph_labels << graph.graph_label << '\n';
        offset += graph.n_nodes;
    }
}

FeaturePolicy parse_feature_policy(std::string_view name) {
    if (name == "node_label_onehot") return FeaturePolicy::node_label_onehot;
    if (name == "degree_onehot") return FeaturePolicy::degree_onehot;
    throw InvalidArgument("unknown feature policy '" + std::string(name) + "'");
}

std::string_view to_string(FeaturePolicy policy) {
    switch (policy) {
        case FeaturePolicy::node_label_onehot:
            return "node_label_onehot";
        case FeaturePolicy::degree_onehot:
            return "degree_onehot";
    }
    return "unknown";
}

FeaturePolicy default_feature_policy(DatasetName name) {
    return name == DatasetName::proteins ? FeaturePolicy::node_label_onehot : FeaturePolicy::degree_onehot;
}

int default_feature_width(const Dataset& dataset, FeaturePolicy policy) {
    if (policy == FeaturePolicy::node_label_onehot) {
        if (dataset.node_label_values.empty()) {
            throw InvalidArgument("dataset " + dataset.name + " has no node labels for node_label_onehot");
        }
        return static_cast<int>(dataset.node_label_values.size());
    }
    return std::min(dataset.stats.max_degree + 1, kMaxDegreeFeatures);
}

Eigen::MatrixXd build_node_features(const GraphInstance& graph, FeaturePolicy policy, int width) {
    if (width < 1) throw InvalidArgument("feature width must be positive");
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(graph.n_nodes, width);
    switch (policy) {
        case FeaturePolicy::node_label_onehot: {
            if (!graph.node_labels) throw InvalidArgument("node_label_onehot requires node labels");
            for (int v = 0; v < graph.n_nodes; ++v) {
                const int label = (*graph.node_labels)[static_cast<std::size_t>(v)];
                if (label < 0 || label >= width) {
                    throw InvalidArgument("node label " + std::to_string(label) + " outside feature width " +
                                          std::to_string(width));
                }
                x(v, label) = 1.0;
            }
            break;
        }
        case FeaturePolicy::degree_onehot: {
            const auto deg = graph.degrees();
            for (int v = 0; v < graph.n_nodes; ++v) x(v, std::min(deg[static_cast<std::size_t>(v)], width - 1)) = 1.0;
            break;
        }
    }
    return x;
}

PaddedGraph pad_and_mask(const GraphInstance& graph, const Eigen::MatrixXd& features, int n_max) {
    if (graph.n_nodes > n_max) {
        throw InvalidArgument("graph with " + std::to_string(graph.n_nodes) + " nodes exceeds N_max " +
                              std::to_string(n_max));
    }
    if (features.rows() != graph.n_nodes) throw InvalidArgument("feature rows do not match node count");

    PaddedGraph p;
    p.n_nodes = graph.n_nodes;
    p.label = graph.graph_label;
    p.adjacency = Eigen::MatrixXd::Zero(n_max, n_max);
    p.features = Eigen::MatrixXd::Zero(n_max, features.cols());
    p.features.topRows(graph.n_nodes) = features;
    p.node_mask = Eigen::VectorXd::Zero(n_max);
    p.node_mask.head(graph.n_nodes).setOnes();
    p.edge_mask = p.node_mask * p.node_mask.transpose();
    p.edge_mask.diagonal().setZero();
    for (auto [i, j] : graph.edges) {
        if (i == j || i < 0 || j < 0 || i >= graph.n_nodes || j >= graph.n_nodes) {
            throw InvalidArgument("invalid edge (" + std::to_string(i) + ", " + std::to_string(j) + ")");
        }
        p.adjacency(i, j) = 1.0;
        p.adjacency(j, i) = 1.0;
    }
    return p;
}

int padded_size(int max_nodes, int levels) {
    const int unit = 1 << levels;
    const int n = std::max(max_nodes, 1);
    return (n + unit - 1) / unit * unit;
}

PreparedDataset prepare_dataset(const Dataset& dataset, FeaturePolicy policy, int feature_width, int unet_levels,
                                int max_nodes, int n_max) {
    PreparedDataset out;
    out.policy = policy;
    out.feature_width = feature_width > 0 ? feature_width : default_feature_width(dataset, policy);

    int largest = 0;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < dataset.graphs.size(); ++i) {
        const int n = dataset.graphs[i].n_nodes;
        if ((max_nodes > 0 && n > max_nodes) || (n_max > 0 && n > n_max)) {
            ++out.dropped;
            continue;
        }
        largest = std::max(largest, n);
        keep.push_back(i);
    }
    out.n_max = n_max > 0 ? n_max : padded_size(largest, unet_levels);
    if (out.n_max % (1 << unet_levels) != 0) {
        throw InvalidArgument("N_max " + std::to_string(out.n_max) + " is not divisible by 2^" +
                              std::to_string(unet_levels));
    }
    out.graphs.reserve(keep.size());
    for (std::size_t i : keep) {
        const auto& g = dataset.graphs[i];
        out.graphs.push_back(pad_and_mask(g, build_node_features(g, policy, out.feature_width), out.n_max));
        out.source_index.push_back(i);
    }
    return out;
}

std::vector<std::size_t> FoldAssignment::test_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] == fold) out.push_back(i);
    return out;
}

std::vector<std::size_t> FoldAssignment::train_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] != fold) out.push_back(i);
    return out;
}

FoldAssignment stratified_folds(std::span<const int> labels, int k, std::uint64_t seed) {
    if (k < 2) throw InvalidArgument("need at least 2 folds");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    for (const auto& [label, members] : by_class) {
        if (members.size() < static_cast<std::size_t>(k)) {
            throw InvalidArgument("class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                                  " members, fewer than " + std::to_string(k) + " folds");
        }
    }

    FoldAssignment folds{k, std::vector<int>(labels.size(), -1), seed};
    Rng rng(seed);
    std::size_t position = 0;
    for (auto& [label, members] : by_class) {
        rng.shuffle(members.begin(), members.end());
        for (std::size_t idx : members) folds.fold_of[idx] = static_cast<int>(position++ % static_cast<std::size_t>(k));
    }
    return folds;
}

}  // namespace ddgae::data
