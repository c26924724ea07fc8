// ddgae: fetch, train, embed, eval and repro commands.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ddgae/config.hpp"
#include "ddgae/errors.hpp"
#include "ddgae/pipeline.hpp"

namespace {

using namespace ddgae;

struct CommonFlags {
    std::string config_file;
    std::optional<std::string> dataset;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<int> max_nodes;
    std::optional<std::string> out;
    std::optional<std::size_t> subset;
    std::vector<std::string> sets;  // extra key=value overrides

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_file, "flat key = value config file");
        cmd->add_option("--dataset", dataset, "PROTEINS or IMDB-BINARY");
        cmd->add_option("--seed", seed, "training seed");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--max-nodes", max_nodes, "drop graphs with more nodes");
        cmd->add_option("--out", out, "directory holding run directories");
        cmd->add_option("--subset", subset, "stratified sample of this many graphs");
        cmd->add_option("--set", sets, "any config key, as key=value (repeatable)");
    }

    config::ExperimentConfig resolve() const {
        config::Overrides o;
        if (dataset) o.emplace_back("dataset", *dataset);
        if (seed) o.emplace_back("seed", std::to_string(*seed));
        if (epochs) o.emplace_back("epochs", std::to_string(*epochs));
        if (max_nodes) o.emplace_back("max_nodes", std::to_string(*max_nodes));
        if (out) o.emplace_back("out", *out);
        if (subset) o.emplace_back("subset", std::to_string(*subset));
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            o.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
        }
        return config_file.empty() ? config::parse_config("", o) : config::load_config(config_file, o);
    }
};

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

int fail(const std::string& stage, const std::exception& e) {
    const pipeline::StageError tagged = dynamic_cast<const pipeline::StageError*>(&e)
                                            ? *dynamic_cast<const pipeline::StageError*>(&e)
                                            : pipeline::StageError(stage, e);
    std::cerr << "ddgae: " << tagged.what() << '\n';
    return tagged.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Discrete diffusion graph autoencoder: training and SVM evaluation"};
    app.require_subcommand(1);

    CommonFlags train_flags, repro_flags;
    bool fresh = false;

    auto* fetch_cmd = app.add_subcommand("fetch", "download and cache a TUDataset archive");
    std::string fetch_dataset;
    std::string fetch_root, fetch_url, fetch_sha;
    bool fetch_force = false;
    fetch_cmd->add_option("--dataset", fetch_dataset, "PROTEINS or IMDB-BINARY")->required();
    fetch_cmd->add_option("--data-root", fetch_root, "cache root (default $DDGAE_DATA_ROOT or ./data)");
    fetch_cmd->add_option("--url", fetch_url, "archive URL override");
    fetch_cmd->add_option("--sha256", fetch_sha, "expected archive digest");
    fetch_cmd->add_flag("--force", fetch_force, "download even when cached");

    auto* train_cmd = app.add_subcommand("train", "train encoder and denoiser");
    train_flags.attach(train_cmd);
    train_cmd->add_flag("--fresh", fresh, "start a new run even if one with this config exists");

    auto* embed_cmd = app.add_subcommand("embed", "extract graph embeddings from a checkpoint");
    std::string checkpoint;
    embed_cmd->add_option("--checkpoint", checkpoint, "model.ckpt from a training run")->required();
    embed_cmd->add_flag("--fresh", fresh, "recompute even if embeddings exist");

    auto* eval_cmd = app.add_subcommand("eval", "SVM 10-fold evaluation of embedding files");
    std::vector<std::string> embeddings;
    pipeline::EvalOptions eval_opts;
    std::vector<std::string> formats{"json", "table", "plot"};
    std::string eval_out;
    eval_cmd->add_option("embeddings", embeddings, "embedding files")->required();
    eval_cmd->add_option("--folds", eval_opts.folds, "outer folds");
    eval_cmd->add_option("--seed", eval_opts.seed, "fold assignment seed");
    eval_cmd->add_option("--format", formats, "json, table and/or plot");
    eval_cmd->add_option("--out", eval_out, "report directory (default: next to the first input)");
    eval_cmd->add_flag("--force", eval_opts.force, "accept inputs with different config hashes");

    auto* repro_cmd = app.add_subcommand("repro", "fetch, train, embed and evaluate; prints a table row");
    repro_flags.attach(repro_cmd);
    std::string repro_sha;
    repro_cmd->add_option("--sha256", repro_sha, "expected archive digest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : pipeline::kExitConfig;
    }

    if (fetch_cmd->parsed()) {
        try {
            config::ExperimentConfig c;
            c.data_root = fetch_root;
            fetch::FetchOptions opts{fetch_url, fetch_sha, fetch_force, log_line};
            const auto r = fetch::fetch_dataset(data::parse_dataset_name(fetch_dataset), config::resolve_data_root(c),
                                                opts);
            std::cout << r.raw_dir.string() << '\n';
            return 0;
        } catch (const std::exception& e) {
            return fail("fetch", e);
        }
    }
    if (train_cmd->parsed()) {
        try {
            const auto c = train_flags.resolve();
            const auto r = pipeline::run_train(c, log_line, fresh);
            std::cout << r.artifact.string() << '\n';
            return 0;
        } catch (const std::exception& e) {
            return fail("train", e);
        }
    }
    if (embed_cmd->parsed()) {
        try {
            const auto r = pipeline::run_embed(checkpoint, log_line, fresh);
            std::cout << r.artifact.string() << '\n';
            return 0;
        } catch (const std::exception& e) {
            return fail("embed", e);
        }
    }
    if (eval_cmd->parsed()) {
        try {
            eval_opts.formats.clear();
            for (const auto& f : formats) eval_opts.formats.push_back(eval::parse_report_format(f));
            if (!eval_out.empty()) eval_opts.out_dir = eval_out;
            std::vector<std::filesystem::path> inputs(embeddings.begin(), embeddings.end());
            const auto r = pipeline::run_eval(inputs, eval_opts, log_line);
            for (const auto& p : r.artifacts) std::cout << p.string() << '\n';
            return 0;
        } catch (const std::exception& e) {
            return fail("eval", e);
        }
    }
    if (repro_cmd->parsed()) {
        try {
            const auto c = repro_flags.resolve();
            fetch::FetchOptions opts;
            opts.expected_sha256 = repro_sha;
            const auto r = pipeline::run_repro(c, opts, log_line);
            std::cout << r.table_row << '\n';
            return 0;
        } catch (const std::exception& e) {
            return fail("repro", e);
        }
    }
    return pipeline::kExitFailure;
}
