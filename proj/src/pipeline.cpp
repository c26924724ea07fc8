#include "ddgae/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <regex>

#include "ddgae/errors.hpp"
#include "ddgae/rng.hpp"

namespace ddgae::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void say(const Log& log, const std::string& msg) {
    if (log) log(msg);
}

std::string utc_stamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

void write_text(const fs::path& p, const std::string& text) {
    auto tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << text;
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
    }
    fs::rename(tmp, p);
}

std::optional<fs::path> latest_periodic_checkpoint(const fs::path& dir) {
    static const std::regex pattern(R"(checkpoint-step(\d+)\.ckpt)");
    std::optional<fs::path> best;
    long long best_step = -1;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern) && std::stoll(m[1]) > best_step) {
            best_step = std::stoll(m[1]);
            best = entry.path();
        }
    }
    return best;
}

template <class F>
auto staged(const std::string& stage, F&& body) -> decltype(body()) {
    try {
        return body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e);
    }
}

}  // namespace

int exit_code_for(const std::exception& e) {
    if (const auto* s = dynamic_cast<const StageError*>(&e)) return s->exit_code();
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InvalidArgument*>(&e)) return kExitConfig;
    if (dynamic_cast<const IngestError*>(&e) || dynamic_cast<const CorruptDataset*>(&e) ||
        dynamic_cast<const ChecksumError*>(&e) || dynamic_cast<const InvalidFold*>(&e))
        return kExitData;
    if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
    return kExitFailure;
}

StageError::StageError(std::string stage, const std::exception& cause)
    : std::runtime_error("[" + stage + "] " + cause.what()), stage_(std::move(stage)), code_(exit_code_for(cause)) {}

std::optional<fs::path> find_run_dir(const fs::path& out, std::uint64_t hash) {
    if (!fs::is_directory(out)) return std::nullopt;
    const std::string suffix = "-" + config::hash_hex(hash);
    std::vector<fs::path> matches;
    for (const auto& entry : fs::directory_iterator(out)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_directory() && name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            matches.push_back(entry.path());
    }
    if (matches.empty()) return std::nullopt;
    std::sort(matches.begin(), matches.end());
    return matches.back();
}

fs::path create_run_dir(const fs::path& out, std::uint64_t hash) {
    const fs::path dir = out / (utc_stamp() + "-" + config::hash_hex(hash));
    fs::create_directories(dir);
    return dir;
}

data::Dataset stratified_subset(const data::Dataset& ds, std::size_t count, std::uint64_t seed) {
    if (count == 0 || count >= ds.graphs.size()) return ds;
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.graphs.size(); ++i) by_class[ds.graphs[i].graph_label].push_back(i);
    Rng rng(derive_seed(seed, {0x737562736574ULL}));
    std::vector<std::size_t> chosen;
    std::vector<std::size_t> leftover;
    for (auto& [label, members] : by_class) {
        rng.shuffle(members.begin(), members.end());
        const auto take = members.size() * count / ds.graphs.size();
        chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
        leftover.insert(leftover.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
    }
    rng.shuffle(leftover.begin(), leftover.end());
    for (std::size_t i = 0; chosen.size() < count; ++i) chosen.push_back(leftover[i]);
    std::sort(chosen.begin(), chosen.end());

    data::Dataset out = ds;
    out.graphs.clear();
    for (auto i : chosen) out.graphs.push_back(ds.graphs[i]);
    return out;
}

data::Dataset load_dataset(const config::ExperimentConfig& c) {
    const auto name = data::parse_dataset_name(c.dataset);
    const auto root = config::resolve_data_root(c);
    auto ds = data::load_tudataset(data::raw_dir(root, name), name);
    return stratified_subset(ds, c.subset, c.train.seed);
}

StageResult run_train(const config::ExperimentConfig& c, const Log& log, bool fresh) {
    c.validate();
    const auto hash = config::config_hash(c);
    std::optional<fs::path> resume;
    fs::path dir;
    if (auto existing = fresh ? std::nullopt : find_run_dir(c.out, hash)) {
        dir = *existing;
        if (fs::exists(dir / "model.ckpt")) {
            say(log, "train: reusing finished run " + dir.string());
            return {dir / "model.ckpt", dir, true};
        }
        resume = latest_periodic_checkpoint(dir);
        if (resume) say(log, "train: resuming " + resume->string());
    } else {
        dir = create_run_dir(c.out, hash);
    }
    write_text(dir / "config.txt", config::to_config_text(c));
    write_text(dir / "config.json",
               json{{"config_hash", config::hash_hex(hash)}, {"config", config::canonical_json(c)}}.dump(2) + "\n");

    const auto ds = load_dataset(c);
    const auto prepared = data::prepare_dataset(ds, c.train.feature_policy, c.feature_width,
                                                c.train.denoiser.levels(), c.max_nodes);
    say(log, "train: " + std::to_string(prepared.graphs.size()) + " graphs (" + std::to_string(prepared.dropped) +
                 " dropped by max_nodes), N_max " + std::to_string(prepared.n_max) + ", feature width " +
                 std::to_string(prepared.feature_width));
    auto tc = c.train;
    tc.bind(prepared);

    train::TrainOptions opts;
    opts.out_dir = dir;
    opts.resume_from = resume;
    opts.meta = {{"config_hash", config::hash_hex(hash)},
                 {"config_text", config::to_config_text(c)},
                 {"dataset", c.dataset}};
    const auto per_epoch = static_cast<std::int64_t>((prepared.graphs.size() + static_cast<std::size_t>(tc.batch_size) - 1) /
                                                     static_cast<std::size_t>(tc.batch_size));
    opts.on_step = [&](const train::StepRecord& r) {
        if (r.step % per_epoch == 0)
            say(log, "train: epoch " + std::to_string(r.step / per_epoch) + "/" + std::to_string(tc.epochs) +
                         " loss " + std::to_string(r.total));
    };
    const auto outcome = train::train(tc, prepared, opts);
    return {outcome.checkpoint, dir, false};
}

StageResult run_embed(const fs::path& checkpoint, const Log& log, bool fresh) {
    const fs::path dir = checkpoint.parent_path();
    const fs::path target = dir / "embeddings.bin";
    const auto ck = train::load_checkpoint(checkpoint);
    if (!ck.meta.contains("config_text"))
        throw ConfigError("checkpoint " + checkpoint.string() + " carries no experiment config");
    const auto c = config::parse_config(ck.meta.at("config_text").get<std::string>());
    const auto hash = config::config_hash(c);
    if (config::hash_hex(hash) != ck.meta.value("config_hash", ""))
        throw ConfigError("checkpoint config hash does not match its stored config");

    if (!fresh && fs::exists(target)) {
        const auto existing = eval::load_embeddings(target);
        if (existing.config_hash == hash) {
            say(log, "embed: reusing " + target.string());
            return {target, dir, true};
        }
    }
    const auto ds = load_dataset(c);
    const auto prepared = data::prepare_dataset(ds, ck.config.feature_policy, ck.config.feature_width(),
                                                ck.config.denoiser.levels(), c.max_nodes, ck.config.n_max());
    if (prepared.n_max != ck.config.n_max())
        throw ConfigError("dataset padding differs from the checkpoint's N_max");
    const auto set = eval::extract_all(ck.state.model, ck.config, prepared, c.dataset, hash, c.extract_t);
    eval::save_embeddings(target, set);
    say(log, "embed: wrote " + std::to_string(set.z.rows()) + " x " + std::to_string(set.z.cols()) + " to " +
                 target.string());
    return {target, dir, false};
}

EvalResult run_eval(const std::vector<fs::path>& inputs, const EvalOptions& options, const Log& log) {
    if (inputs.empty()) throw InvalidArgument("eval needs at least one embedding file");
    eval::EmbeddingSet all;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto set = eval::load_embeddings(inputs[i]);
        if (i == 0) {
            all = std::move(set);
            continue;
        }
        if (set.config_hash != all.config_hash && !options.force)
            throw ConfigError("embedding files carry different config hashes (" + config::hash_hex(all.config_hash) +
                              " vs " + config::hash_hex(set.config_hash) + "); pass --force to mix them");
        if (set.z.cols() != all.z.cols()) throw InvalidArgument("embedding widths differ across inputs");
        Eigen::MatrixXd z(all.z.rows() + set.z.rows(), all.z.cols());
        z << all.z, set.z;
        all.z = std::move(z);
        all.labels.insert(all.labels.end(), set.labels.begin(), set.labels.end());
        all.graph_ids.insert(all.graph_ids.end(), set.graph_ids.begin(), set.graph_ids.end());
    }
    const auto folds = data::stratified_folds(all.labels, options.folds, options.seed);
    EvalResult result;
    result.report = eval::svm_protocol(all.z, all.labels, folds, {}, all.dataset, all.config_hash);
    const fs::path out = options.out_dir.value_or(inputs.front().parent_path());
    for (auto f : options.formats) result.artifacts.push_back(eval::emit_report(result.report, f, out / "report"));
    say(log, "eval: " + all.dataset + " " + eval::table_cell(result.report.mean, result.report.std) + " over " +
                 std::to_string(options.folds) + " folds");
    return result;
}

ReproResult run_repro(const config::ExperimentConfig& c, const fetch::FetchOptions& fetch_options, const Log& log) {
    staged("config", [&] { c.validate(); });
    staged("fetch", [&] {
        auto opts = fetch_options;
        if (!opts.log) opts.log = [&](const std::string& m) { say(log, "fetch: " + m); };
        return fetch::fetch_dataset(data::parse_dataset_name(c.dataset), config::resolve_data_root(c), opts);
    });
    ReproResult r;
    r.train = staged("train", [&] { return run_train(c, log); });
    r.embed = staged("embed", [&] { return run_embed(r.train.artifact, log); });
    r.eval = staged("eval", [&] {
        EvalOptions opts;
        opts.folds = c.eval_folds;
        opts.seed = c.eval_seed;
        return run_eval({r.embed.artifact}, opts, log);
    });
    r.table_row = "| DDGAE | " + c.dataset + " | " + eval::table_cell(r.eval.report.mean, r.eval.report.std) + " |";
    return r;
}

}  // namespace ddgae::pipeline
