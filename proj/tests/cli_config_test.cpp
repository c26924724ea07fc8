#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "ddgae/config.hpp"
#include "ddgae/errors.hpp"
#include "ddgae/fetch.hpp"
#include "ddgae/pipeline.hpp"
#include "synthetic_graphs.hpp"
#include "zip_writer.hpp"

#include <httplib.h>

namespace ddgae {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

/// TUDataset text files for a synthetic two-class collection, named as
/// IMDB-BINARY so the standard loader accepts them.
std::vector<std::pair<std::string, std::string>> tu_members(std::size_t per_class, std::uint64_t seed) {
    const auto dir = testing::scratch_dir("tu_members_" + std::to_string(seed));
    auto ds = testing::make_two_class_dataset(per_class, 5, 12, seed, false, "IMDB-BINARY");
    data::save_tudataset(dir, "IMDB-BINARY", ds);
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : fs::directory_iterator(dir))
        out.emplace_back("IMDB-BINARY/" + e.path().filename().string(), slurp(e.path()));
    std::sort(out.begin(), out.end());
    fs::remove_all(dir);
    return out;
}

fs::path write_tu_root(const std::string& tag, std::size_t per_class) {
    const auto root = testing::scratch_dir(tag);
    auto ds = testing::make_two_class_dataset(per_class, 5, 12, 77, false, "IMDB-BINARY");
    data::save_tudataset(data::raw_dir(root, data::DatasetName::imdb_binary), "IMDB-BINARY", ds);
    return root;
}

class LocalServer {
public:
    LocalServer() {
        server_.Get("/IMDB-BINARY.zip", [this](const httplib::Request&, httplib::Response& res) {
            ++hits;
            res.set_content(archive, "application/zip");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LocalServer() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/IMDB-BINARY.zip"; }

    std::string archive;
    int hits = 0;

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

TEST(Config, ParsesFlatDocument) {
    const auto c = config::parse_config(R"(# comment
dataset = PROTEINS
epochs = 30
seed = 7
lambda = 0.01
unet_widths = 16, 32
max_nodes = 100
)");
    EXPECT_EQ(c.dataset, "PROTEINS");
    EXPECT_EQ(c.train.epochs, 30);
    EXPECT_EQ(c.train.seed, 7u);
    EXPECT_EQ(c.train.lambda, 0.01);
    EXPECT_EQ(c.train.denoiser.widths, (std::vector<int>{16, 32}));
    EXPECT_EQ(c.max_nodes, 100);
    EXPECT_EQ(c.train.feature_policy, data::default_feature_policy(data::DatasetName::proteins));
    EXPECT_EQ(c.train.diffusion_steps, 32);
}

TEST(Config, RejectsUnknownRepeatedAndMalformed) {
    EXPECT_THROW(config::parse_config("epoch = 3\n"), ConfigError);
    EXPECT_THROW(config::parse_config("seed = 1\nseed = 2\n"), ConfigError);
    EXPECT_THROW(config::parse_config("seed = x\n"), ConfigError);
    EXPECT_THROW(config::parse_config("just text\n"), ConfigError);
    EXPECT_THROW(config::parse_config("dataset = MUTAG\n"), ConfigError);
    EXPECT_THROW(config::parse_config("batch_size = 0\n"), ConfigError);
    EXPECT_THROW(config::parse_config("time_dim = 7\n"), ConfigError);
}

TEST(Config, HashStableUnderReordering) {
    const auto a = config::parse_config("dataset = PROTEINS\nseed = 3\nepochs = 5\nlambda = 0.5\n");
    const auto b = config::parse_config("lambda = 0.5\nepochs = 5\n\n# x\nseed = 3\ndataset = PROTEINS\n");
    EXPECT_EQ(config::config_hash(a), config::config_hash(b));
    const auto c = config::parse_config("dataset = PROTEINS\nseed = 4\nepochs = 5\nlambda = 0.5\n");
    EXPECT_NE(config::config_hash(a), config::config_hash(c));
}

TEST(Config, PathsDoNotAffectHash) {
    const auto a = config::parse_config("out = /tmp/a\ndata_root = /x\n");
    const auto b = config::parse_config("out = /tmp/b\n");
    EXPECT_EQ(config::config_hash(a), config::config_hash(b));
}

TEST(Config, TextRoundTripAndOverrides) {
    const auto a = config::parse_config("dataset = PROTEINS\nseed = 3\nlearning_rate = 0.0003\n", {{"epochs", "9"}});
    EXPECT_EQ(a.train.epochs, 9);
    const auto b = config::parse_config(config::to_config_text(a));
    EXPECT_EQ(config::config_hash(a), config::config_hash(b));
    EXPECT_EQ(b.train, a.train);
    EXPECT_EQ(config::hash_hex(0xabcULL), "0000000000000abc");
}

TEST(Fetch, Sha256KnownVector) {
    EXPECT_EQ(fetch::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Fetch, ZipRoundTrip) {
    const std::vector<std::pair<std::string, std::string>> members{
        {"dir/a.txt", std::string(5000, 'a') + "tail"}, {"dir/b.txt", "plain"}, {"c.txt", ""}};
    const auto entries = fetch::read_zip(testing::make_zip(members));
    ASSERT_EQ(entries.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(entries[i].name, members[i].first);
        EXPECT_EQ(entries[i].data, members[i].second);
    }
}

TEST(Fetch, ZipCorruptionDetected) {
    auto z = testing::make_zip({{"b.txt", "stored payload"}, {"a.txt", "x"}});
    EXPECT_THROW(fetch::read_zip("not a zip at all, definitely not"), CorruptDataset);
    auto stored = testing::make_zip({{"pad", "0"}, {"b.txt", "stored payload"}});
    stored[stored.find("stored payload")] = 'S';
    EXPECT_THROW(fetch::read_zip(stored), CorruptDataset);
    EXPECT_THROW(fetch::read_zip(z.substr(0, z.size() - 30)), CorruptDataset);
}

TEST(Fetch, DownloadCacheHitAndChecksums) {
    LocalServer server;
    server.archive = testing::make_zip(tu_members(10, 5));
    const auto root = testing::scratch_dir("fetch_root");
    fetch::FetchOptions opts;
    opts.url = server.url();

    const auto first = fetch::fetch_dataset(data::DatasetName::imdb_binary, root, opts);
    EXPECT_FALSE(first.cache_hit);
    EXPECT_EQ(first.sha256, fetch::sha256_hex(server.archive));
    EXPECT_EQ(server.hits, 1);
    const auto ds = data::load_tudataset(first.raw_dir, data::DatasetName::imdb_binary);
    EXPECT_EQ(ds.graphs.size(), 20u);

    const auto second = fetch::fetch_dataset(data::DatasetName::imdb_binary, root, opts);
    EXPECT_TRUE(second.cache_hit);
    EXPECT_EQ(server.hits, 1);

    auto pinned = opts;
    pinned.expected_sha256 = std::string(64, '0');
    EXPECT_THROW(fetch::fetch_dataset(data::DatasetName::imdb_binary, root, pinned), ChecksumError);

    // A different archive upstream no longer matches the digest recorded on first use.
    server.archive = testing::make_zip(tu_members(10, 6));
    auto forced = opts;
    forced.force = true;
    EXPECT_THROW(fetch::fetch_dataset(data::DatasetName::imdb_binary, root, forced), ChecksumError);
    EXPECT_EQ(data::load_tudataset(first.raw_dir, data::DatasetName::imdb_binary).graphs, ds.graphs);
    fs::remove_all(root);
}

TEST(Fetch, PinnedDigestMismatchOnFreshDownload) {
    LocalServer server;
    server.archive = testing::make_zip(tu_members(10, 5));
    const auto root = testing::scratch_dir("fetch_pinned");
    fetch::FetchOptions opts{server.url(), std::string(64, 'f'), false, nullptr};
    EXPECT_THROW(fetch::fetch_dataset(data::DatasetName::imdb_binary, root, opts), ChecksumError);
    EXPECT_FALSE(fs::exists(data::raw_dir(root, data::DatasetName::imdb_binary)));
    opts.expected_sha256 = fetch::sha256_hex(server.archive);
    EXPECT_NO_THROW(fetch::fetch_dataset(data::DatasetName::imdb_binary, root, opts));
    fs::remove_all(root);
}

TEST(Fetch, UnreachableHostIsIngestError) {
    const auto root = testing::scratch_dir("fetch_offline");
    fetch::FetchOptions opts;
    opts.url = "http://127.0.0.1:1/IMDB-BINARY.zip";
    EXPECT_THROW(fetch::fetch_dataset(data::DatasetName::imdb_binary, root, opts), IngestError);
    fs::remove_all(root);
}

TEST(Pipeline, SubsetIsStratifiedAndDeterministic) {
    const auto ds = testing::make_two_class_dataset(40, 4, 8, 3);
    const auto a = pipeline::stratified_subset(ds, 50, 1);
    const auto b = pipeline::stratified_subset(ds, 50, 1);
    EXPECT_EQ(a.graphs, b.graphs);
    ASSERT_EQ(a.graphs.size(), 50u);
    const auto ones = std::count_if(a.graphs.begin(), a.graphs.end(), [](const auto& g) { return g.graph_label == 1; });
    EXPECT_EQ(ones, 25);
}

TEST(Pipeline, ExitCodes) {
    EXPECT_EQ(pipeline::exit_code_for(ConfigError("x")), 2);
    EXPECT_EQ(pipeline::exit_code_for(IngestError("x")), 3);
    EXPECT_EQ(pipeline::exit_code_for(ChecksumError("x")), 3);
    EXPECT_EQ(pipeline::exit_code_for(NumericError("x")), 4);
    EXPECT_EQ(pipeline::exit_code_for(pipeline::StageError("train", NumericError("x"))), 4);
    EXPECT_EQ(pipeline::exit_code_for(std::runtime_error("x")), 1);
}

TEST(Pipeline, SmokeReproAndEvalRoundTrip) {
    const auto root = write_tu_root("smoke_data", 40);  // 80 graphs, 50 kept
    const auto out = testing::scratch_dir("smoke_runs");
    auto c = config::parse_config("dataset = IMDB-BINARY\nepochs = 2\nsubset = 50\nseed = 3\n",
                                  {{"data_root", root.string()}, {"out", out.string()}});
    fetch::FetchOptions offline;
    offline.url = "http://127.0.0.1:1/unused.zip";

    const auto r = pipeline::run_repro(c, offline);
    EXPECT_FALSE(r.train.reused);
    EXPECT_EQ(r.eval.report.folds.size(), 10u);
    EXPECT_EQ(r.eval.report.dataset, "IMDB-BINARY");
    EXPECT_EQ(r.eval.report.config_hash, config::config_hash(c));
    EXPECT_NE(r.table_row.find(eval::table_cell(r.eval.report.mean, r.eval.report.std)), std::string::npos);
    EXPECT_EQ(r.train.run_dir.filename().string().substr(17), config::hash_hex(config::config_hash(c)));
    for (const char* f : {"model.ckpt", "metrics.ndjson", "config.txt", "embeddings.bin", "embeddings.bin.csv",
                          "report.json", "report.md", "report.svg"})
        EXPECT_TRUE(fs::exists(r.train.run_dir / f)) << f;
    const auto emb = eval::load_embeddings(r.embed.artifact);
    EXPECT_EQ(emb.z.rows(), 50);
    EXPECT_EQ(emb.z.cols(), 128);

    // Same config: every stage is reused.
    const auto again = pipeline::run_repro(c, offline);
    EXPECT_TRUE(again.train.reused);
    EXPECT_TRUE(again.embed.reused);
    EXPECT_EQ(again.train.run_dir, r.train.run_dir);

    // Exported, copied and re-imported embeddings give the same report.
    const auto copy_dir = testing::scratch_dir("smoke_copy");
    fs::copy_file(r.embed.artifact, copy_dir / "z.bin");
    pipeline::EvalOptions eo;
    eo.seed = c.eval_seed;
    eo.formats = {eval::ReportFormat::json};
    const auto re = pipeline::run_eval({copy_dir / "z.bin"}, eo);
    EXPECT_EQ(eval::to_json(re.report), eval::to_json(r.eval.report));

    // Mixed hashes are refused unless forced.
    auto other = emb;
    other.config_hash ^= 1;
    eval::save_embeddings(copy_dir / "other.bin", other);
    EXPECT_THROW(pipeline::run_eval({copy_dir / "z.bin", copy_dir / "other.bin"}, eo), ConfigError);
    eo.force = true;
    EXPECT_NO_THROW(pipeline::run_eval({copy_dir / "z.bin", copy_dir / "other.bin"}, eo));

    fs::remove_all(root);
    fs::remove_all(out);
    fs::remove_all(copy_dir);
}

TEST(Pipeline, FetchFailureIsStageTagged) {
    const auto root = testing::scratch_dir("no_data");
    const auto out = testing::scratch_dir("no_data_runs");
    auto c = config::parse_config("epochs = 1\n", {{"data_root", root.string()}, {"out", out.string()}});
    fetch::FetchOptions offline;
    offline.url = "http://127.0.0.1:1/IMDB-BINARY.zip";
    try {
        pipeline::run_repro(c, offline);
        FAIL() << "expected a StageError";
    } catch (const pipeline::StageError& e) {
        EXPECT_EQ(e.stage(), "fetch");
        EXPECT_EQ(e.exit_code(), pipeline::kExitData);
    }
    EXPECT_TRUE(fs::is_empty(out));
    fs::remove_all(root);
    fs::remove_all(out);
}

}  // namespace
}  // namespace ddgae
