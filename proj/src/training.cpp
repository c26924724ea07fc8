#include "ddgae/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <type_traits>

#include "ddgae/errors.hpp"
#include "ddgae/rng.hpp"

namespace ddgae::train {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'D', 'G', 'A', 'E', 'C', 'K', 'P'};
static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian doubles");

json encoder_json(const nn::EncoderConfig& c) {
    return {{"in_features", c.in_features}, {"layers", c.layers}, {"hidden", c.hidden}, {"out", c.out}};
}

json denoiser_json(const nn::DenoiserConfig& c) {
    return {{"n_max", c.n_max},         {"widths", c.widths},   {"time_dim", c.time_dim},
            {"time_hidden", c.time_hidden}, {"cond_dim", c.cond_dim}, {"tap_dim", c.tap_dim},
            {"zero_init_head", c.zero_init_head}};
}

void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
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

template <class State, class Set = std::conditional_t<std::is_const_v<State>, const nn::ParamSet, nn::ParamSet>>
std::vector<std::pair<const char*, Set*>> state_sets(State& s) {
    return {{"encoder", &s.model.encoder.params()},      {"denoiser", &s.model.denoiser.params()},
            {"encoder.adam_m", &s.encoder_moments.m},    {"encoder.adam_v", &s.encoder_moments.v},
            {"denoiser.adam_m", &s.denoiser_moments.m},  {"denoiser.adam_v", &s.denoiser_moments.v}};
}

std::int64_t batches_per_epoch(std::size_t n, int batch_size) {
    return static_cast<std::int64_t>((n + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {0x65706f6368ULL, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order.begin(), order.end());
    return order;
}

}  // namespace

void TrainConfig::bind(const data::PreparedDataset& prepared) {
    denoiser.n_max = prepared.n_max;
    encoder.in_features = prepared.feature_width;
    feature_policy = prepared.policy;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError(what); };
    if (diffusion_steps < 1) fail("diffusion_steps must be >= 1");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be a finite non-negative number");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (epochs < 0) fail("epochs must be >= 0");
    if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
    if (encoder.layers < 1 || encoder.hidden < 1 || encoder.out < 1) fail("encoder sizes must be positive");
    if (denoiser.widths.empty()) fail("denoiser needs at least one level");
    for (int w : denoiser.widths)
        if (w < 1) fail("denoiser widths must be positive");
    if (denoiser.time_dim < 2 || denoiser.time_dim % 2 != 0) fail("time_dim must be a positive even number");
    if (denoiser.cond_dim != encoder.out) fail("denoiser cond_dim must equal encoder output width");
}

bool TrainConfig::resume_compatible(const TrainConfig& other) const {
    TrainConfig a = *this;
    TrainConfig b = other;
    a.epochs = b.epochs = 0;
    a.checkpoint_every = b.checkpoint_every = 0;
    return a == b;
}

json to_json(const TrainConfig& c) {
    return {{"diffusion_steps", c.diffusion_steps},
            {"lambda", c.lambda},
            {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"feature_policy", std::string(data::to_string(c.feature_policy))},
            {"schedule", std::string(diffusion::to_string(c.schedule))},
            {"encoder", encoder_json(c.encoder)},
            {"denoiser", denoiser_json(c.denoiser)},
            {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& j) {
    try {
        TrainConfig c;
        c.diffusion_steps = j.at("diffusion_steps").get<int>();
        c.lambda = j.at("lambda").get<double>();
        c.learning_rate = j.at("learning_rate").get<double>();
        c.batch_size = j.at("batch_size").get<int>();
        c.epochs = j.at("epochs").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.feature_policy = data::parse_feature_policy(j.at("feature_policy").get<std::string>());
        c.schedule = diffusion::parse_schedule_kind(j.at("schedule").get<std::string>());
        const auto& e = j.at("encoder");
        c.encoder = {e.at("in_features").get<int>(), e.at("layers").get<int>(), e.at("hidden").get<int>(),
                     e.at("out").get<int>()};
        const auto& d = j.at("denoiser");
        c.denoiser.n_max = d.at("n_max").get<int>();
        c.denoiser.widths = d.at("widths").get<std::vector<int>>();
        c.denoiser.time_dim = d.at("time_dim").get<int>();
        c.denoiser.time_hidden = d.at("time_hidden").get<int>();
        c.denoiser.cond_dim = d.at("cond_dim").get<int>();
        c.denoiser.tap_dim = d.at("tap_dim").get<int>();
        c.denoiser.zero_init_head = d.at("zero_init_head").get<bool>();
        c.checkpoint_every = j.at("checkpoint_every").get<int>();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed training config: ") + e.what());
    }
}

Model Model::init(const TrainConfig& config) {
    return Model{nn::GcnEncoder(config.encoder, derive_seed(config.seed, {0x656e63ULL})),
                 nn::Denoiser(config.denoiser, derive_seed(config.seed, {0x64656eULL}))};
}

ModelGrads ModelGrads::zeros_like(const Model& model) {
    return {model.encoder.params().zeros_like(), model.denoiser.params().zeros_like()};
}

void ModelGrads::set_zero() {
    encoder.set_zero();
    denoiser.set_zero();
}

bool ModelGrads::all_finite() const { return encoder.all_finite() && denoiser.all_finite(); }

double ModelGrads::squared_norm() const { return encoder.squared_norm() + denoiser.squared_norm(); }

AdamMoments AdamMoments::zeros_like(const nn::ParamSet& params) { return {params.zeros_like(), params.zeros_like()}; }

void adam_update(nn::ParamSet& params, const nn::ParamSet& grads, AdamMoments& moments, std::int64_t step,
                 const AdamConfig& c) {
    if (step < 1) throw InvalidArgument("adam step count starts at 1");
    if (!params.same_layout(grads) || !params.same_layout(moments.m) || !params.same_layout(moments.v))
        throw InvalidArgument("adam: parameter, gradient and moment layouts differ");
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& m = moments.m[k];
        auto& v = moments.v[k];
        const auto& g = grads[k];
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
        params[k].array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
    }
}

TrainState TrainState::init(const TrainConfig& config) {
    Model model = Model::init(config);
    auto em = AdamMoments::zeros_like(model.encoder.params());
    auto dm = AdamMoments::zeros_like(model.denoiser.params());
    return TrainState{0, std::move(model), std::move(em), std::move(dm), config.seed};
}

diffusion::LossBreakdown graph_loss(const Model& model, const data::PaddedGraph& graph, int t,
                                    const diffusion::NoiseSchedule& schedule, double lambda,
                                    std::uint64_t corrupt_seed, ModelGrads* grads, const Eigen::MatrixXd* x0_override) {
    const diffusion::NoisyAdjacency clean{graph.adjacency, 0, graph.edge_mask};
    const auto noisy = diffusion::corrupt(clean, t, schedule, corrupt_seed);

    nn::GcnEncoder::Tape enc_tape;
    const Eigen::VectorXd z = model.encoder.forward(graph, enc_tape);
    nn::Denoiser::Tape den_tape;
    const auto out = model.denoiser.forward(noisy, graph.node_mask, z, den_tape);
    const Eigen::MatrixXd& probs = x0_override ? *x0_override : out.x0_probs;

    if (!grads) return diffusion::hybrid_loss(graph.adjacency, noisy, probs, lambda, schedule);

    Eigen::MatrixXd d_probs;
    const auto loss = diffusion::hybrid_loss(graph.adjacency, noisy, probs, lambda, schedule, &d_probs);
    const Eigen::VectorXd d_z = model.denoiser.backward(den_tape, d_probs, Eigen::VectorXd(), grads->denoiser);
    model.encoder.backward(enc_tape, d_z, grads->encoder);
    return loss;
}

json to_json(const StepRecord& r) {
    return {{"step", r.step}, {"t_mean", r.t_mean}, {"l_vb", r.l_vb}, {"aux_ce", r.aux_ce}, {"total", r.total}};
}

StepRecord train_step(TrainState& state, const TrainConfig& config, std::span<const data::PaddedGraph* const> batch,
                      const diffusion::NoiseSchedule& schedule) {
    if (batch.empty()) throw InvalidArgument("train_step needs a nonempty batch");
    if (schedule.steps() != config.diffusion_steps)
        throw InvalidArgument("schedule length differs from configured diffusion steps");

    const auto step_key = static_cast<std::uint64_t>(state.step);
    const int T = config.diffusion_steps;
    ModelGrads grads = ModelGrads::zeros_like(state.model);
    StepRecord rec;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng t_rng(derive_seed(state.rng_seed, {step_key, i, 0}));
        const int t = 1 + static_cast<int>(t_rng.below(static_cast<std::uint64_t>(T)));
        const auto loss = graph_loss(state.model, *batch[i], t, schedule, config.lambda,
                                     derive_seed(state.rng_seed, {step_key, i, 1}), &grads);
        if (!std::isfinite(loss.total)) {
            std::ostringstream msg;
            msg << "non-finite loss at step " << state.step + 1 << ", batch slot " << i << " (n_nodes "
                << batch[i]->n_nodes << ", t " << t << "): l_vb " << loss.l_vb_term << ", aux_ce " << loss.aux_ce;
            throw NumericError(msg.str());
        }
        rec.t_mean += t;
        rec.l_vb += loss.l_vb_term;
        rec.aux_ce += loss.aux_ce;
        rec.total += loss.total;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    rec.t_mean *= inv;
    rec.l_vb *= inv;
    rec.aux_ce *= inv;
    rec.total *= inv;
    grads.encoder.scale(inv);
    grads.denoiser.scale(inv);
    if (!grads.all_finite()) {
        std::ostringstream msg;
        msg << "non-finite gradient at step " << state.step + 1 << " (batch loss " << rec.total << ")";
        throw NumericError(msg.str());
    }

    const AdamConfig adam{config.learning_rate};
    const std::int64_t next = state.step + 1;
    adam_update(state.model.encoder.params(), grads.encoder, state.encoder_moments, next, adam);
    adam_update(state.model.denoiser.params(), grads.denoiser, state.denoiser_moments, next, adam);
    state.step = next;
    rec.step = next;
    return rec;
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config,
                     const diffusion::NoiseSchedule& schedule, const TrainState& state, const json& meta) {
    json header;
    header["meta"] = meta;
    header["format"] = "ddgae-checkpoint";
    header["config"] = to_json(config);
    header["schedule"] = {{"kind", std::string(diffusion::to_string(config.schedule))},
                          {"betas", std::vector<double>(schedule.betas().begin(), schedule.betas().end())}};
    header["step"] = state.step;
    header["rng_seed"] = state.rng_seed;
    json dir = json::array();
    std::size_t doubles = 0;
    for (const auto& [tag, set] : state_sets(state)) {
        for (std::size_t k = 0; k < set->size(); ++k) {
            const auto& m = (*set)[k];
            dir.push_back({{"set", tag}, {"name", set->name(k)}, {"rows", m.rows()}, {"cols", m.cols()}});
            doubles += static_cast<std::size_t>(m.size());
        }
    }
    header["tensors"] = dir;
    const std::string text = header.dump();

    std::string bytes;
    bytes.reserve(sizeof kMagic + 12 + text.size() + doubles * sizeof(double));
    bytes.append(kMagic, sizeof kMagic);
    const std::uint32_t version = kCheckpointVersion;
    bytes.append(reinterpret_cast<const char*>(&version), sizeof version);
    const std::uint64_t len = text.size();
    bytes.append(reinterpret_cast<const char*>(&len), sizeof len);
    bytes += text;
    for (const auto& [tag, set] : state_sets(state))
        for (std::size_t k = 0; k < set->size(); ++k)
            bytes.append(reinterpret_cast<const char*>((*set)[k].data()),
                         static_cast<std::size_t>((*set)[k].size()) * sizeof(double));
    write_atomically(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto corrupt = [&](const std::string& why) { return CorruptDataset("checkpoint " + path.string() + ": " + why); };

    std::size_t pos = 0;
    auto take = [&](void* dst, std::size_t n) {
        if (bytes.size() - pos < n) throw corrupt("truncated");
        std::memcpy(dst, bytes.data() + pos, n);
        pos += n;
    };
    char magic[sizeof kMagic];
    take(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw corrupt("not a checkpoint file");
    std::uint32_t version = 0;
    take(&version, sizeof version);
    if (version != kCheckpointVersion) throw corrupt("unsupported format version " + std::to_string(version));
    std::uint64_t len = 0;
    take(&len, sizeof len);
    if (bytes.size() - pos < len) throw corrupt("truncated header");
    json header;
    try {
        header = json::parse(bytes.substr(pos, len));
    } catch (const json::exception& e) {
        throw corrupt(std::string("bad header: ") + e.what());
    }
    pos += len;

    const TrainConfig config = train_config_from_json(header.at("config"));
    auto schedule = diffusion::NoiseSchedule::from_betas(header.at("schedule").at("betas").get<std::vector<double>>());
    TrainState state = TrainState::init(config);
    state.step = header.at("step").get<std::int64_t>();
    state.rng_seed = header.at("rng_seed").get<std::uint64_t>();

    const auto& dir = header.at("tensors");
    std::size_t entry = 0;
    for (const auto& [tag, set] : state_sets(state)) {
        for (std::size_t k = 0; k < set->size(); ++k, ++entry) {
            if (entry >= dir.size()) throw corrupt("tensor directory too short");
            const auto& d = dir[entry];
            auto& m = (*set)[k];
            if (d.at("set").get<std::string>() != tag || d.at("name").get<std::string>() != set->name(k) ||
                d.at("rows").get<Eigen::Index>() != m.rows() || d.at("cols").get<Eigen::Index>() != m.cols())
                throw corrupt("tensor " + std::string(tag) + "/" + set->name(k) + " does not match the stored config");
            take(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
        }
    }
    if (entry != dir.size()) throw corrupt("tensor directory has extra entries");
    if (pos != bytes.size()) throw corrupt("trailing bytes");
    return Checkpoint{config, std::move(schedule), std::move(state), header.value("meta", json::object())};
}

TrainOutcome train(const TrainConfig& config, const data::PreparedDataset& dataset, const TrainOptions& options) {
    config.validate();
    if (config.n_max() != dataset.n_max || config.feature_width() != dataset.feature_width)
        throw ConfigError("training config is not bound to this dataset (n_max/feature width differ)");
    if (dataset.graphs.empty()) throw CorruptDataset("no graphs to train on");

    const auto schedule = diffusion::NoiseSchedule::build(config.diffusion_steps, config.schedule);
    std::optional<TrainState> state;
    if (options.resume_from) {
        auto ck = load_checkpoint(*options.resume_from);
        if (!config.resume_compatible(ck.config))
            throw ConfigError("refusing to resume: checkpoint " + options.resume_from->string() +
                              " was written with a different configuration");
        state.emplace(std::move(ck.state));
    } else {
        state.emplace(TrainState::init(config));
    }

    std::filesystem::create_directories(options.out_dir);
    TrainOutcome outcome;
    outcome.metrics = options.out_dir / "metrics.ndjson";
    outcome.checkpoint = options.out_dir / "model.ckpt";
    std::ofstream metrics(outcome.metrics, std::ios::app);
    if (!metrics) throw std::runtime_error("cannot open " + outcome.metrics.string());

    const std::size_t n = dataset.graphs.size();
    const std::int64_t per_epoch = batches_per_epoch(n, config.batch_size);
    const std::int64_t total = per_epoch * config.epochs;
    const auto bs = static_cast<std::size_t>(config.batch_size);

    std::vector<const data::PaddedGraph*> batch;
    while (state->step < total) {
        const std::int64_t epoch = state->step / per_epoch;
        const auto order = epoch_order(n, config.seed, epoch);
        for (std::int64_t b = state->step % per_epoch; b < per_epoch; ++b) {
            batch.clear();
            const std::size_t lo = static_cast<std::size_t>(b) * bs;
            for (std::size_t i = lo; i < std::min(lo + bs, n); ++i) batch.push_back(&dataset.graphs[order[i]]);
            StepRecord rec;
            try {
                rec = train_step(*state, config, batch, schedule);
            } catch (const NumericError& e) {
                const auto snap = options.out_dir / ("diagnostic-step" + std::to_string(state->step) + ".ckpt");
                save_checkpoint(snap, config, schedule, *state, options.meta);
                throw NumericError(std::string(e.what()) + "; pre-step state saved to " + snap.string());
            }
            metrics << to_json(rec).dump() << '\n';
            outcome.records.push_back(rec);
            if (options.on_step) options.on_step(rec);
        }
        metrics.flush();
        const std::int64_t done_epochs = state->step / per_epoch;
        if (config.checkpoint_every > 0 && done_epochs % config.checkpoint_every == 0 && state->step < total)
            save_checkpoint(options.out_dir / ("checkpoint-step" + std::to_string(state->step) + ".ckpt"), config,
                            schedule, *state, options.meta);
    }
    save_checkpoint(outcome.checkpoint, config, schedule, *state, options.meta);
    outcome.steps = state->step;
    return outcome;
}

}  // namespace ddgae::train
