#include "ddgae/embedding_eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "ddgae/errors.hpp"
#include "ddgae/rng.hpp"

namespace ddgae::eval {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'D', 'G', 'A', 'E', 'E', 'M', 'B'};
static_assert(std::endian::native == std::endian::little, "embedding format assumes little-endian");

template <class T>
void put(std::string& out, const T& v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<int> to_signed(std::span<const int> labels, int negative) {
    std::vector<int> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == negative ? -1 : 1;
    return y;
}

template <class T>
std::vector<T> pick(std::span<const T> v, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[i]);
    return out;
}

double accuracy_percent(const Eigen::VectorXd& decision, std::span<const int> y) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if ((decision(static_cast<Eigen::Index>(i)) > 0.0 ? 1 : -1) == y[i]) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(y.size());
}

std::vector<Eigen::Index> as_index(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

GraphEmbedding extract_embedding(const train::Model& model, const train::TrainConfig& config,
                                 const data::PaddedGraph& graph, std::size_t graph_id, int t) {
    if (graph.n_max() != config.n_max() || graph.features.cols() != config.feature_width())
        throw ConfigError("graph padding/features (" + std::to_string(graph.n_max()) + ", " +
                          std::to_string(graph.features.cols()) + ") do not match the checkpoint (" +
                          std::to_string(config.n_max()) + ", " + std::to_string(config.feature_width()) + ")");
    if (t < 0 || t > config.diffusion_steps) throw InvalidArgument("extraction timestep out of range");
    const Eigen::VectorXd h_enc = model.encoder.encode(graph);
    const diffusion::NoisyAdjacency clean{graph.adjacency, t, graph.edge_mask};
    const auto out = model.denoiser.denoise(clean, graph.node_mask, h_enc);
    GraphEmbedding e;
    e.z.resize(h_enc.size() + out.h_int.size());
    e.z << h_enc, out.h_int;
    e.graph_id = graph_id;
    e.label = graph.label;
    if (!e.z.allFinite()) throw NumericError("non-finite embedding for graph " + std::to_string(graph_id));
    return e;
}

EmbeddingSet extract_all(const train::Model& model, const train::TrainConfig& config,
                         const data::PreparedDataset& dataset, std::string dataset_name, std::uint64_t config_hash,
                         int t) {
    EmbeddingSet set;
    set.dataset = std::move(dataset_name);
    set.config_hash = config_hash;
    const auto n = static_cast<Eigen::Index>(dataset.graphs.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto id = dataset.source_index.empty() ? static_cast<std::size_t>(i)
                                                     : dataset.source_index[static_cast<std::size_t>(i)];
        const auto e = extract_embedding(model, config, dataset.graphs[static_cast<std::size_t>(i)], id, t);
        if (i == 0) set.z.resize(n, e.z.size());
        set.z.row(i) = e.z.transpose();
        set.graph_ids.push_back(e.graph_id);
        set.labels.push_back(e.label);
    }
    return set;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
    const auto n = static_cast<std::uint64_t>(set.z.rows());
    const auto d = static_cast<std::uint64_t>(set.z.cols());
    if (set.labels.size() != n || set.graph_ids.size() != n) throw InvalidArgument("embedding set sizes disagree");

    std::string bytes(kMagic, sizeof kMagic);
    put(bytes, kEmbeddingVersion);
    put(bytes, n);
    put(bytes, d);
    put(bytes, set.config_hash);
    put(bytes, static_cast<std::uint32_t>(set.dataset.size()));
    bytes += set.dataset;
    for (auto id : set.graph_ids) put(bytes, static_cast<std::uint64_t>(id));
    for (int l : set.labels) put(bytes, static_cast<std::int32_t>(l));
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = set.z;
    bytes.append(reinterpret_cast<const char*>(rows.data()), static_cast<std::size_t>(rows.size()) * sizeof(double));
    write_file(path, bytes);

    std::ostringstream csv;
    csv << "# dataset=" << set.dataset << " config_hash=" << hex64(set.config_hash) << '\n';
    csv << "graph_id,label";
    for (std::uint64_t j = 0; j < d; ++j) csv << ",z" << j;
    csv << '\n' << std::setprecision(17);
    for (std::uint64_t i = 0; i < n; ++i) {
        csv << set.graph_ids[i] << ',' << set.labels[i];
        for (std::uint64_t j = 0; j < d; ++j)
            csv << ',' << set.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        csv << '\n';
    }
    auto csv_path = path;
    csv_path += ".csv";
    write_file(csv_path, csv.str());
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open embedding file " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    auto bad = [&](const std::string& why) { return CorruptDataset("embedding file " + path.string() + ": " + why); };
    auto take = [&](void* dst, std::size_t len) {
        if (bytes.size() - pos < len) throw bad("truncated");
        std::memcpy(dst, bytes.data() + pos, len);
        pos += len;
    };
    char magic[sizeof kMagic];
    take(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw bad("not an embedding file");
    std::uint32_t version = 0;
    take(&version, sizeof version);
    if (version != kEmbeddingVersion) throw bad("unsupported version " + std::to_string(version));
    std::uint64_t n = 0, d = 0;
    EmbeddingSet set;
    take(&n, sizeof n);
    take(&d, sizeof d);
    take(&set.config_hash, sizeof set.config_hash);
    std::uint32_t name_len = 0;
    take(&name_len, sizeof name_len);
    set.dataset.resize(name_len);
    take(set.dataset.data(), name_len);
    const std::uint64_t need = n * (sizeof(std::uint64_t) + sizeof(std::int32_t) + d * sizeof(double));
    if (bytes.size() - pos != need) throw bad("payload size does not match header");
    set.graph_ids.resize(n);
    set.labels.resize(n);
    for (auto& id : set.graph_ids) {
        std::uint64_t v = 0;
        take(&v, sizeof v);
        id = static_cast<std::size_t>(v);
    }
    for (auto& l : set.labels) {
        std::int32_t v = 0;
        take(&v, sizeof v);
        l = v;
    }
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(n, d);
    take(rows.data(), static_cast<std::size_t>(rows.size()) * sizeof(double));
    set.z = rows;
    return set;
}

std::vector<double> AccuracyReport::fold_accuracies() const {
    std::vector<double> out;
    for (const auto& f : folds) out.push_back(f.accuracy);
    return out;
}

FoldFit select_on_train(const Eigen::MatrixXd& x_train, std::span<const int> y_train, const ProtocolOptions& options,
                        std::uint64_t seed) {
    if (options.c_grid.empty()) throw InvalidArgument("empty C grid");
    if (static_cast<std::size_t>(x_train.rows()) != y_train.size()) throw InvalidArgument("label count mismatch");
    FoldFit fit;
    fit.scaler = svm::Standardizer::fit(x_train);
    const Eigen::MatrixXd xs = fit.scaler.apply(x_train);
    fit.gamma = svm::median_heuristic_gamma(xs);
    const Eigen::MatrixXd k = svm::rbf_kernel(xs, xs, fit.gamma);

    const auto pos = static_cast<int>(std::count(y_train.begin(), y_train.end(), 1));
    const int smallest = std::min(pos, static_cast<int>(y_train.size()) - pos);
    const int inner_k = std::min(options.inner_k, smallest);
    if (inner_k < 2) {
        // Too few members of one class to cross-validate: fall back to C = 1.
        fit.c = 1.0;
        return fit;
    }
    const auto inner = data::stratified_folds(y_train, inner_k, seed);
    fit.inner_scores.assign(options.c_grid.size(), 0.0);
    for (int f = 0; f < inner_k; ++f) {
        const auto tr = inner.train_indices(f);
        const auto te = inner.test_indices(f);
        const auto ytr = pick(y_train, tr);
        const auto yte = pick(y_train, te);
        const Eigen::MatrixXd k_tr = k(as_index(tr), as_index(tr));
        const Eigen::MatrixXd k_te = k(as_index(te), as_index(tr));
        for (std::size_t g = 0; g < options.c_grid.size(); ++g) {
            const auto model = svm::fit(k_tr, ytr, options.c_grid[g]);
            fit.inner_scores[g] += accuracy_percent(svm::decision(model, k_te), yte) / inner_k;
        }
    }
    const auto best = std::max_element(fit.inner_scores.begin(), fit.inner_scores.end());
    fit.c = options.c_grid[static_cast<std::size_t>(best - fit.inner_scores.begin())];
    return fit;
}

AccuracyReport svm_protocol(const Eigen::MatrixXd& x, std::span<const int> labels, const data::FoldAssignment& folds,
                            const ProtocolOptions& options, std::string dataset, std::uint64_t config_hash) {
    if (static_cast<std::size_t>(x.rows()) != labels.size()) throw InvalidArgument("embedding/label count mismatch");
    if (folds.fold_of.size() != labels.size()) throw InvalidArgument("fold assignment does not cover the embeddings");
    if (!x.allFinite()) throw NumericError("non-finite embedding values");
    const std::set<int> classes(labels.begin(), labels.end());
    if (classes.size() > 2) throw InvalidArgument("svm_protocol handles binary labels only");
    const int negative = *classes.begin();
    const auto y = to_signed(labels, negative);

    AccuracyReport report;
    report.dataset = std::move(dataset);
    report.config_hash = config_hash;
    report.k = folds.k;
    report.fold_seed = folds.seed;
    report.c_grid = options.c_grid;
    report.inner_k = options.inner_k;
    for (int f = 0; f < folds.k; ++f) {
        const auto tr = folds.train_indices(f);
        const auto te = folds.test_indices(f);
        if (te.empty()) throw InvalidFold("fold " + std::to_string(f) + " has no test graphs");
        const auto ytr = pick(std::span<const int>(y), tr);
        const auto yte = pick(std::span<const int>(y), te);
        if (std::count(ytr.begin(), ytr.end(), 1) == 0 || std::count(ytr.begin(), ytr.end(), -1) == 0)
            throw InvalidFold("training split of fold " + std::to_string(f) + " holds a single class");

        const Eigen::MatrixXd x_tr = x(as_index(tr), Eigen::all);
        const Eigen::MatrixXd x_te = x(as_index(te), Eigen::all);
        const auto fit = select_on_train(x_tr, ytr, options,
                                         derive_seed(folds.seed, {0x696e6e6572ULL, static_cast<std::uint64_t>(f)}));
        const Eigen::MatrixXd s_tr = fit.scaler.apply(x_tr);
        const Eigen::MatrixXd s_te = fit.scaler.apply(x_te);
        const auto model = svm::fit(svm::rbf_kernel(s_tr, s_tr, fit.gamma), ytr, fit.c);

        FoldOutcome o;
        o.fold = f;
        o.train_size = tr.size();
        o.test_size = te.size();
        o.accuracy = accuracy_percent(svm::decision(model, svm::rbf_kernel(s_te, s_tr, fit.gamma)), yte);
        o.c = fit.c;
        o.gamma = fit.gamma;
        o.inner_scores = fit.inner_scores;
        o.converged = model.converged;
        report.folds.push_back(std::move(o));
    }
    const auto acc = report.fold_accuracies();
    double sum = 0.0;
    for (double a : acc) sum += a;
    report.mean = sum / static_cast<double>(acc.size());
    double ss = 0.0;
    for (double a : acc) ss += (a - report.mean) * (a - report.mean);
    report.std = std::sqrt(ss / static_cast<double>(acc.size()));
    return report;
}

ReportFormat parse_report_format(std::string_view name) {
    if (name == "json") return ReportFormat::json;
    if (name == "table") return ReportFormat::table;
    if (name == "plot") return ReportFormat::plot;
    throw InvalidArgument("unknown report format '" + std::string(name) + "' (json, table, plot)");
}

std::string_view to_string(ReportFormat format) {
    switch (format) {
        case ReportFormat::json: return "json";
        case ReportFormat::table: return "table";
        case ReportFormat::plot: return "plot";
    }
    return "?";
}

std::string table_cell(double mean, double std) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f±%.2f", mean, std);
    return buf;
}

json to_json(const AccuracyReport& r) {
    json folds = json::array();
    for (const auto& f : r.folds)
        folds.push_back({{"fold", f.fold},
                         {"train_size", f.train_size},
                         {"test_size", f.test_size},
                         {"accuracy", f.accuracy},
                         {"C", f.c},
                         {"gamma", f.gamma},
                         {"inner_scores", f.inner_scores},
                         {"converged", f.converged}});
    return {{"dataset", r.dataset},
            {"config_hash", hex64(r.config_hash)},
            {"k", r.k},
            {"fold_seed", r.fold_seed},
            {"c_grid", r.c_grid},
            {"inner_k", r.inner_k},
            {"kernel", "rbf, gamma = 1 / (2 median pairwise distance^2) on z-scored training rows"},
            {"std_kind", "population standard deviation over outer folds"},
            {"folds", folds},
            {"mean", r.mean},
            {"std", r.std}};
}

AccuracyReport report_from_json(const json& j) {
    try {
        AccuracyReport r;
        r.dataset = j.at("dataset").get<std::string>();
        r.config_hash = parse_hex64(j.at("config_hash").get<std::string>());
        r.k = j.at("k").get<int>();
        r.fold_seed = j.at("fold_seed").get<std::uint64_t>();
        r.c_grid = j.at("c_grid").get<std::vector<double>>();
        r.inner_k = j.at("inner_k").get<int>();
        for (const auto& f : j.at("folds")) {
            FoldOutcome o;
            o.fold = f.at("fold").get<int>();
            o.train_size = f.at("train_size").get<std::size_t>();
            o.test_size = f.at("test_size").get<std::size_t>();
            o.accuracy = f.at("accuracy").get<double>();
            o.c = f.at("C").get<double>();
            o.gamma = f.at("gamma").get<double>();
            o.inner_scores = f.at("inner_scores").get<std::vector<double>>();
            o.converged = f.at("converged").get<bool>();
            r.folds.push_back(std::move(o));
        }
        r.mean = j.at("mean").get<double>();
        r.std = j.at("std").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw CorruptDataset(std::string("malformed report: ") + e.what());
    }
}

std::filesystem::path emit_report(const AccuracyReport& report, ReportFormat format,
                                  const std::filesystem::path& stem) {
    if (report.folds.empty()) throw InvalidArgument("refusing to emit a report with no folds");
    auto path = stem;
    std::string body;
    switch (format) {
        case ReportFormat::json:
            path += ".json";
            body = to_json(report).dump(2) + "\n";
            break;
        case ReportFormat::table: {
            path += ".md";
            const std::string name = report.dataset.empty() ? "dataset" : report.dataset;
            body = "| Method | " + name + " |\n|---|---|\n| DDGAE | " + table_cell(report.mean, report.std) + " |\n\n" +
                   "<!-- config_hash " + hex64(report.config_hash) + ", " + std::to_string(report.k) +
                   "-fold SVM, std over folds -->\n";
            break;
        }
        case ReportFormat::plot: {
            path += ".svg";
            const int bar = 40, gap = 12, left = 50, top = 30, height = 240;
            const int width = left + static_cast<int>(report.folds.size()) * (bar + gap) + 20;
            auto y_of = [&](double pct) { return top + height - pct / 100.0 * height; };
            std::ostringstream svg;
            svg << std::fixed << std::setprecision(2);
            svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 40
                << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
            svg << "<!-- config_hash " << hex64(report.config_hash) << " -->\n";
            svg << "<text x=\"" << left << "\" y=\"18\">" << report.dataset << " per-fold accuracy, mean "
                << table_cell(report.mean, report.std) << "</text>\n";
            svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + height
                << "\" stroke=\"black\"/>\n";
            for (int tick = 0; tick <= 100; tick += 25)
                svg << "<text x=\"" << left - 6 << "\" y=\"" << y_of(tick) + 4 << "\" text-anchor=\"end\">" << tick
                    << "</text>\n";
            for (std::size_t i = 0; i < report.folds.size(); ++i) {
                const double acc = report.folds[i].accuracy;
                const int x0 = left + gap / 2 + static_cast<int>(i) * (bar + gap);
                svg << "<rect x=\"" << x0 << "\" y=\"" << y_of(acc) << "\" width=\"" << bar << "\" height=\""
                    << acc / 100.0 * height << "\" fill=\"#4a7ab5\"/>\n";
                svg << "<text x=\"" << x0 + bar / 2 << "\" y=\"" << top + height + 14 << "\" text-anchor=\"middle\">"
                    << report.folds[i].fold << "</text>\n";
            }
            svg << "<line x1=\"" << left << "\" y1=\"" << y_of(report.mean) << "\" x2=\"" << width - 20 << "\" y2=\""
                << y_of(report.mean) << "\" stroke=\"#c0392b\" stroke-dasharray=\"4 3\"/>\n";
            svg << "</svg>\n";
            body = svg.str();
            break;
        }
    }
    write_file(path, body);
    return path;
}

}  // namespace ddgae::eval
