#include "ddgae/config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "ddgae/errors.hpp"

namespace ddgae::config {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
    T out{};
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end)
        throw ConfigError("config key '" + std::string(key) + "': '" + std::string(v) + "' is not a valid number");
    return out;
}

double parse_double(std::string_view key, std::string_view v) {
    const std::string s(v);
    char* end = nullptr;
    errno = 0;
    const double out = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
        throw ConfigError("config key '" + std::string(key) + "': '" + s + "' is not a valid number");
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + std::string(key) + "': expected true or false, got '" + std::string(v) + "'");
}

std::vector<int> parse_int_list(std::string_view key, std::string_view v) {
    std::vector<int> out;
    while (!v.empty()) {
        const auto comma = v.find(',');
        out.push_back(parse_number<int>(key, trim(v.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    if (out.empty()) throw ConfigError("config key '" + std::string(key) + "' needs at least one value");
    return out;
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void set_value(ExperimentConfig& c, std::string_view key, std::string_view raw) {
    const auto v = trim(raw);
    auto& t = c.train;
    try {
        if (key == "dataset") {
            c.dataset = std::string(data::to_string(data::parse_dataset_name(v)));
        } else if (key == "data_root") {
            c.data_root = std::string(v);
        } else if (key == "out") {
            c.out = std::string(v);
        } else if (key == "max_nodes") {
            c.max_nodes = parse_number<int>(key, v);
        } else if (key == "subset") {
            c.subset = parse_number<std::size_t>(key, v);
        } else if (key == "feature_policy") {
            t.feature_policy = data::parse_feature_policy(v);
            c.feature_policy_set = true;
        } else if (key == "feature_width") {
            c.feature_width = parse_number<int>(key, v);
        } else if (key == "diffusion_steps") {
            t.diffusion_steps = parse_number<int>(key, v);
        } else if (key == "schedule") {
            t.schedule = diffusion::parse_schedule_kind(v);
        } else if (key == "lambda") {
            t.lambda = parse_double(key, v);
        } else if (key == "learning_rate") {
            t.learning_rate = parse_double(key, v);
        } else if (key == "batch_size") {
            t.batch_size = parse_number<int>(key, v);
        } else if (key == "epochs") {
            t.epochs = parse_number<int>(key, v);
        } else if (key == "seed") {
            t.seed = parse_number<std::uint64_t>(key, v);
        } else if (key == "checkpoint_every") {
            t.checkpoint_every = parse_number<int>(key, v);
        } else if (key == "encoder_layers") {
            t.encoder.layers = parse_number<int>(key, v);
        } else if (key == "encoder_hidden") {
            t.encoder.hidden = parse_number<int>(key, v);
        } else if (key == "encoder_out") {
            t.encoder.out = parse_number<int>(key, v);
            t.denoiser.cond_dim = t.encoder.out;
        } else if (key == "unet_widths") {
            t.denoiser.widths = parse_int_list(key, v);
        } else if (key == "time_dim") {
            t.denoiser.time_dim = parse_number<int>(key, v);
        } else if (key == "time_hidden") {
            t.denoiser.time_hidden = parse_number<int>(key, v);
        } else if (key == "tap_dim") {
            t.denoiser.tap_dim = parse_number<int>(key, v);
        } else if (key == "zero_init_head") {
            t.denoiser.zero_init_head = parse_bool(key, v);
        } else if (key == "eval_folds") {
            c.eval_folds = parse_number<int>(key, v);
        } else if (key == "eval_seed") {
            c.eval_seed = parse_number<std::uint64_t>(key, v);
        } else if (key == "extract_t") {
            c.extract_t = parse_number<int>(key, v);
        } else {
            throw ConfigError("unknown config key '" + std::string(key) + "'");
        }
    } catch (const InvalidArgument& e) {
        throw ConfigError("config key '" + std::string(key) + "': " + e.what());
    }
}

void ExperimentConfig::validate() const {
    data::parse_dataset_name(dataset);
    if (max_nodes < 0) throw ConfigError("max_nodes must be >= 0");
    if (feature_width < 0) throw ConfigError("feature_width must be >= 0");
    if (eval_folds < 2) throw ConfigError("eval_folds must be >= 2");
    if (extract_t < 0 || extract_t > train.diffusion_steps) throw ConfigError("extract_t must lie in [0, diffusion_steps]");
    if (train.denoiser.cond_dim != train.encoder.out) throw ConfigError("cond width must equal encoder_out");
    auto probe = train;
    probe.encoder.in_features = 1;
    probe.denoiser.n_max = 1 << probe.denoiser.levels();
    probe.validate();
}

ExperimentConfig parse_config(std::string_view text, const Overrides& overrides) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::set<std::string, std::less<>> seen;
    int line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const auto line = trim(text.substr(0, nl));
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const auto key = trim(line.substr(0, eq));
        if (!seen.emplace(key).second) throw ConfigError("config key '" + std::string(key) + "' given twice");
        entries.emplace_back(std::string(key), std::string(trim(line.substr(eq + 1))));
    }
    for (const auto& [key, value] : overrides) {
        auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.first == key; });
        if (it != entries.end()) it->second = value;
        else entries.emplace_back(key, value);
    }
    ExperimentConfig c;
    for (const auto& [key, value] : entries) set_value(c, key, value);
    if (!c.feature_policy_set) c.train.feature_policy = data::default_feature_policy(data::parse_dataset_name(c.dataset));
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), overrides);
}

json canonical_json(const ExperimentConfig& c) {
    const auto& t = c.train;
    // json objects keep keys sorted, so dump() is canonical.
    return {{"dataset", c.dataset},
            {"max_nodes", c.max_nodes},
            {"subset", c.subset},
            {"feature_policy", std::string(data::to_string(t.feature_policy))},
            {"feature_width", c.feature_width},
            {"diffusion_steps", t.diffusion_steps},
            {"schedule", std::string(diffusion::to_string(t.schedule))},
            {"lambda", t.lambda},
            {"learning_rate", t.learning_rate},
            {"batch_size", t.batch_size},
            {"epochs", t.epochs},
            {"seed", t.seed},
            {"encoder_layers", t.encoder.layers},
            {"encoder_hidden", t.encoder.hidden},
            {"encoder_out", t.encoder.out},
            {"unet_widths", t.denoiser.widths},
            {"time_dim", t.denoiser.time_dim},
            {"time_hidden", t.denoiser.time_hidden},
            {"tap_dim", t.denoiser.tap_dim},
            {"zero_init_head", t.denoiser.zero_init_head},
            {"eval_folds", c.eval_folds},
            {"eval_seed", c.eval_seed},
            {"extract_t", c.extract_t}};
}

std::string to_config_text(const ExperimentConfig& c) {
    std::ostringstream out;
    const auto j = canonical_json(c);
    for (const auto& [key, value] : j.items()) {
        out << key << " = ";
        if (value.is_string()) out << value.get<std::string>();
        else if (value.is_array()) out << join(value.get<std::vector<int>>());
        else if (value.is_number_float()) out << format_double(value.get<double>());
        else out << value.dump();
        out << '\n';
    }
    if (!c.data_root.empty()) out << "data_root = " << c.data_root.string() << '\n';
    out << "out = " << c.out.string() << '\n';
    out << "checkpoint_every = " << c.train.checkpoint_every << '\n';
    return out.str();
}

std::uint64_t config_hash(const ExperimentConfig& c) {
    const std::string text = canonical_json(c).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t hash) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

std::filesystem::path resolve_data_root(const ExperimentConfig& c) {
    if (!c.data_root.empty()) return c.data_root;
    if (const char* env = std::getenv("DDGAE_DATA_ROOT"); env && *env) return env;
    return "data";
}

}  // namespace ddgae::config
