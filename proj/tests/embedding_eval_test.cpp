#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "ddgae/embedding_eval.hpp"
#include "ddgae/errors.hpp"
#include "ddgae/rng.hpp"
#include "synthetic_graphs.hpp"

namespace ddgae::eval {
namespace {

Eigen::MatrixXd gaussian_clusters(int per_class, int dim, double separation, std::uint64_t seed,
                                  std::vector<int>& labels) {
    Rng rng(seed);
    Eigen::MatrixXd x(2 * per_class, dim);
    labels.clear();
    for (int i = 0; i < 2 * per_class; ++i) {
        const int cls = i % 2;
        labels.push_back(cls);
        for (int j = 0; j < dim; ++j) x(i, j) = rng.normal() + (cls ? separation : -separation);
    }
    return x;
}

train::TrainConfig default_model_config(const data::PreparedDataset& p) {
    train::TrainConfig c;
    c.seed = 5;
    c.bind(p);
    return c;
}

data::PreparedDataset small_prepared(std::size_t per_class = 5) {
    const auto ds = testing::make_two_class_dataset(per_class, 4, 8, 21);
    return data::prepare_dataset(ds, data::FeaturePolicy::degree_onehot, 6, 3);
}

TEST(Svm, SeparableClustersClassifiedPerfectly) {
    std::vector<int> labels;
    const auto x = gaussian_clusters(50, 8, 3.0, 1, labels);
    const auto folds = data::stratified_folds(labels, 10, 2);
    const auto report = svm_protocol(x, labels, folds);
    EXPECT_EQ(report.mean, 100.0);
    EXPECT_EQ(report.std, 0.0);
    EXPECT_EQ(report.folds.size(), 10u);
}

TEST(Svm, SolverSeparatesTinyProblem) {
    Eigen::MatrixXd x(4, 1);
    x << -2, -1, 1, 2;
    const std::vector<int> y{-1, -1, 1, 1};
    const auto model = svm::fit(svm::rbf_kernel(x, x, 0.5), y, 10.0);
    EXPECT_TRUE(model.converged);
    const auto d = svm::decision(model, svm::rbf_kernel(x, x, 0.5));
    for (int i = 0; i < 4; ++i) EXPECT_GT(d(i) * y[static_cast<std::size_t>(i)], 0.0);
    EXPECT_NEAR(model.coef.sum(), 0.0, 1e-12);  // y^T alpha = 0
}

TEST(Svm, MedianHeuristic) {
    Eigen::MatrixXd x(3, 1);
    x << 0, 1, 3;  // squared distances 1, 9, 4 -> median 4
    EXPECT_DOUBLE_EQ(svm::median_heuristic_gamma(x), 1.0 / 8.0);
}

TEST(Svm, StandardizerUsesPopulationMoments) {
    Eigen::MatrixXd x(4, 2);
    x << 1, 5, 3, 5, 5, 5, 7, 5;
    const auto s = svm::Standardizer::fit(x);
    EXPECT_DOUBLE_EQ(s.mean(0), 4.0);
    EXPECT_DOUBLE_EQ(s.scale(0), std::sqrt(5.0));
    EXPECT_EQ(s.scale(1), 1.0);
    EXPECT_NEAR(s.apply(x).col(0).squaredNorm() / 4.0, 1.0, 1e-12);
}

TEST(Svm, NoTestLeakage) {
    std::vector<int> labels;
    auto x = gaussian_clusters(30, 5, 0.7, 6, labels);
    const auto folds = data::stratified_folds(labels, 10, 7);
    const auto base = svm_protocol(x, labels, folds);
    for (auto i : folds.test_indices(0)) x.row(static_cast<Eigen::Index>(i)).setConstant(1e3);
    const auto swapped = svm_protocol(x, labels, folds);
    EXPECT_EQ(swapped.folds[0].c, base.folds[0].c);
    EXPECT_EQ(swapped.folds[0].gamma, base.folds[0].gamma);
    EXPECT_EQ(swapped.folds[0].inner_scores, base.folds[0].inner_scores);

    const auto tr = folds.train_indices(0);
    Eigen::MatrixXd x_tr(static_cast<Eigen::Index>(tr.size()), x.cols());
    std::vector<int> y_tr;
    for (std::size_t r = 0; r < tr.size(); ++r) {
        x_tr.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(tr[r]));
        y_tr.push_back(labels[tr[r]] ? 1 : -1);
    }
    const auto fit = select_on_train(x_tr, y_tr, {}, 1);
    EXPECT_EQ(fit.scaler, svm::Standardizer::fit(x_tr));
}

TEST(Svm, ProtocolDeterministic) {
    std::vector<int> labels;
    const auto x = gaussian_clusters(40, 6, 0.4, 8, labels);
    const auto folds = data::stratified_folds(labels, 10, 9);
    EXPECT_EQ(to_json(svm_protocol(x, labels, folds, {}, "X", 3)), to_json(svm_protocol(x, labels, folds, {}, "X", 3)));
}

TEST(Svm, SingleClassTrainingFoldRejected) {
    const std::vector<int> labels{0, 0, 0, 0, 1, 1};
    data::FoldAssignment folds{2, {1, 1, 1, 1, 0, 0}, 0};
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(6, 3);
    EXPECT_THROW(svm_protocol(x, labels, folds), InvalidFold);
}

TEST(Report, TableCellFormatting) {
    EXPECT_EQ(table_cell(76.90, 0.03), "76.90±0.03");
    EXPECT_EQ(table_cell(76.284, 0.046), "76.28±0.05");
}

TEST(Report, JsonRoundTripAndMeanReconstructible) {
    std::vector<int> labels;
    const auto x = gaussian_clusters(30, 4, 0.5, 10, labels);
    const auto report = svm_protocol(x, labels, data::stratified_folds(labels, 10, 11), {}, "SYNTH", 0xabcdefULL);
    const auto dir = testing::scratch_dir("report");
    const auto path = emit_report(report, ReportFormat::json, dir / "report");
    std::ifstream in(path);
    const auto j = nlohmann::json::parse(in);
    const auto back = report_from_json(j);
    EXPECT_EQ(to_json(back), to_json(report));
    double sum = 0.0;
    for (const auto& f : j.at("folds")) sum += f.at("accuracy").get<double>();
    EXPECT_NEAR(sum / static_cast<double>(j.at("folds").size()), j.at("mean").get<double>(), 1e-12);

    const auto table = emit_report(report, ReportFormat::table, dir / "report");
    std::ifstream t(table);
    const std::string text((std::istreambuf_iterator<char>(t)), std::istreambuf_iterator<char>());
    EXPECT_NE(text.find(table_cell(report.mean, report.std)), std::string::npos);

    const auto plot = emit_report(report, ReportFormat::plot, dir / "report");
    EXPECT_EQ(plot.extension(), ".svg");
    std::ifstream s(plot);
    const std::string svg((std::istreambuf_iterator<char>(s)), std::istreambuf_iterator<char>());
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    std::filesystem::remove_all(dir);
}

TEST(Report, EmptyAndUnknownRefused) {
    EXPECT_THROW(emit_report(AccuracyReport{}, ReportFormat::json, "/tmp/never"), InvalidArgument);
    EXPECT_THROW(parse_report_format("html"), InvalidArgument);
    EXPECT_EQ(parse_report_format("plot"), ReportFormat::plot);
}

TEST(Extraction, WidthAndEncoderHalf) {
    const auto p = small_prepared();
    const auto c = default_model_config(p);
    const auto model = train::Model::init(c);
    for (std::size_t i = 0; i < p.graphs.size(); ++i) {
        const auto e = extract_embedding(model, c, p.graphs[i], i);
        ASSERT_EQ(e.z.size(), 128);
        EXPECT_EQ(e.z.head(64), model.encoder.encode(p.graphs[i]));
        EXPECT_EQ(e.label, p.graphs[i].label);
    }
}

TEST(Extraction, NodeRelabelingKeepsEncoderHalf) {
    const auto ds = testing::make_two_class_dataset(4, 5, 8, 31);
    auto c = default_model_config(data::prepare_dataset(ds, data::FeaturePolicy::degree_onehot, 6, 3, 0, 8));
    auto model = train::Model::init(c);
    Rng rng(12);
    for (const auto& g : ds.graphs) {
        std::vector<int> perm(static_cast<std::size_t>(g.n_nodes));
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm.begin(), perm.end());
        data::GraphInstance h{g.n_nodes, {}, std::nullopt, g.graph_label};
        for (auto [a, b] : g.edges) {
            const int x = perm[static_cast<std::size_t>(a)], y = perm[static_cast<std::size_t>(b)];
            h.edges.emplace_back(std::min(x, y), std::max(x, y));
        }
        auto pad = [&](const data::GraphInstance& gi) {
            return data::pad_and_mask(gi, data::build_node_features(gi, data::FeaturePolicy::degree_onehot, 6), 8);
        };
        const auto za = extract_embedding(model, c, pad(g)).z;
        const auto zb = extract_embedding(model, c, pad(h)).z;
        EXPECT_LT((za.head(64) - zb.head(64)).cwiseAbs().maxCoeff(), 1e-12);
        // The UNet half sees the adjacency layout, so it only stays close.
        const double drift = (za.tail(64) - zb.tail(64)).cwiseAbs().maxCoeff();
        RecordProperty("h_int_max_abs_diff", std::to_string(drift));
        EXPECT_TRUE(std::isfinite(drift));
    }
}

TEST(Extraction, MismatchedGraphRefused) {
    const auto p = small_prepared();
    const auto c = default_model_config(p);
    const auto model = train::Model::init(c);
    const auto other = data::prepare_dataset(testing::make_two_class_dataset(2, 4, 8, 1),
                                             data::FeaturePolicy::degree_onehot, 7, 3);
    EXPECT_THROW(extract_embedding(model, c, other.graphs[0]), ConfigError);
}

TEST(Embeddings, FileRoundTrip) {
    const auto p = small_prepared();
    const auto c = default_model_config(p);
    const auto model = train::Model::init(c);
    const auto set = extract_all(model, c, p, "SYNTH", 0x1234ULL);
    EXPECT_EQ(set.z.rows(), static_cast<Eigen::Index>(p.graphs.size()));
    const auto dir = testing::scratch_dir("emb");
    save_embeddings(dir / "z.bin", set);
    EXPECT_EQ(load_embeddings(dir / "z.bin"), set);
    std::ifstream csv(dir / "z.bin.csv");
    std::string first, second;
    std::getline(csv, first);
    std::getline(csv, second);
    EXPECT_EQ(first, "# dataset=SYNTH config_hash=0000000000001234");
    EXPECT_EQ(second.rfind("graph_id,label,z0,z1", 0), 0u);

    std::filesystem::resize_file(dir / "z.bin", std::filesystem::file_size(dir / "z.bin") - 1);
    EXPECT_THROW(load_embeddings(dir / "z.bin"), CorruptDataset);
    std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace ddgae::eval
