#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "mimir/config.hpp"

namespace mimir::harness {

namespace {

using Cfg = ExperimentConfig;

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& v) {
    auto one = [&](const std::string& s) {
        const char* begin = s.c_str();
        char* end = nullptr;
        errno = 0;
        double d = std::strtod(begin, &end);
        if (s.empty() || end != begin + s.size() || errno == ERANGE || !std::isfinite(d))
            throw ConfigError("key '" + key + "': '" + v + "' is not a number");
        return d;
    };
    auto slash = v.find('/');
    if (slash == std::string::npos) return one(v);
    double num = one(trim(v.substr(0, slash)));
    double den = one(trim(v.substr(slash + 1)));
    if (den == 0.0) throw ConfigError("key '" + key + "': division by zero in '" + v + "'");
    return num / den;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("key '" + key + "': '" + v + "' is not a non-negative integer");
    errno = 0;
    unsigned long long n = std::strtoull(v.c_str(), nullptr, 10);
    if (errno == ERANGE) throw ConfigError("key '" + key + "': '" + v + "' is out of range");
    return n;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::string fmt_real(double d) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

struct Field {
    std::string key;
    std::function<void(Cfg&, const std::string&)> set;
    std::function<std::string(const Cfg&)> get;
};

template <class Get>
Field real(std::string key, Get get) {
    return {key, [key, get](Cfg& c, const std::string& v) { get(c) = parse_real(key, v); },
            [get](const Cfg& c) { return fmt_real(get(const_cast<Cfg&>(c))); }};
}

template <class Get>
Field uint(std::string key, Get get) {
    return {key,
            [key, get](Cfg& c, const std::string& v) {
                get(c) = static_cast<std::remove_reference_t<decltype(get(c))>>(parse_uint(key, v));
            },
            [get](const Cfg& c) { return std::to_string(get(const_cast<Cfg&>(c))); }};
}

template <class Get>
Field text(std::string key, Get get) {
    return {key, [get](Cfg& c, const std::string& v) { get(c) = v; },
            [get](const Cfg& c) { return get(const_cast<Cfg&>(c)); }};
}

template <class Get>
Field flag(std::string key, Get get) {
    return {key, [key, get](Cfg& c, const std::string& v) { get(c) = parse_bool(key, v); },
            [get](const Cfg& c) { return std::string(get(const_cast<Cfg&>(c)) ? "true" : "false"); }};
}

template <class Get>
Field estimator(std::string key, Get get) {
    return {key,
            [key, get](Cfg& c, const std::string& v) {
                try {
                    get(c) = mi::parse_estimator(v);
                } catch (const std::exception&) {
                    throw ConfigError("key '" + key + "': unknown estimator '" + v + "'");
                }
            },
            [get](const Cfg& c) { return mi::estimator_name(get(const_cast<Cfg&>(c))); }};
}

template <class Get>
Field init(std::string key, Get get) {
    return {key,
            [key, get](Cfg& c, const std::string& v) {
                if (v == "uniform") get(c) = attack::Init::Uniform;
                else if (v == "zero") get(c) = attack::Init::Zero;
                else throw ConfigError("key '" + key + "': expected uniform or zero, got '" + v + "'");
            },
            [get](const Cfg& c) {
                return std::string(get(const_cast<Cfg&>(c)) == attack::Init::Uniform ? "uniform" : "zero");
            }};
}

#define F(expr) [](Cfg & c) -> auto& { return expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        text("experiment.command", F(c.command)),
        uint("experiment.seed", F(c.seed)),
        text("experiment.output_dir", F(c.output_dir)),

        text("data.source", F(c.data.source)),
        text("data.path", F(c.data.path)),
        uint("data.num_classes", F(c.data.num_classes)),
        uint("data.samples_per_class", F(c.data.samples_per_class)),
        uint("data.test_samples_per_class", F(c.data.test_samples_per_class)),
        uint("data.image_size", F(c.data.image_size)),
        uint("data.channels", F(c.data.channels)),
        real("data.noise", F(c.data.noise)),
        real("data.contrast", F(c.data.contrast)),
        uint("data.seed", F(c.data.seed)),
        uint("data.limit", F(c.data.limit)),

        uint("model.patch_size", F(c.model.patch_size)),
        uint("model.enc_layers", F(c.model.enc_layers)),
        uint("model.enc_dim", F(c.model.enc_dim)),
        uint("model.enc_heads", F(c.model.enc_heads)),
        uint("model.enc_mlp_ratio", F(c.model.enc_mlp_ratio)),
        uint("model.dec_layers", F(c.model.dec_layers)),
        uint("model.dec_dim", F(c.model.dec_dim)),
        uint("model.dec_heads", F(c.model.dec_heads)),
        uint("model.dec_mlp_ratio", F(c.model.dec_mlp_ratio)),
        real("model.mask_ratio", F(c.model.mask_ratio)),
        flag("model.masked_only_loss", F(c.model.masked_only_loss)),
        text("model.checkpoint", F(c.model_checkpoint)),

        real("train.base_lr", F(c.train.base_lr)),
        real("train.beta1", F(c.train.beta1)),
        real("train.beta2", F(c.train.beta2)),
        real("train.weight_decay", F(c.train.weight_decay)),
        uint("train.warmup_epochs", F(c.train.warmup_epochs)),
        uint("train.total_epochs", F(c.train.total_epochs)),
        uint("train.batch_size", F(c.train.batch_size)),
        real("train.lambda", F(c.train.lambda)),
        estimator("train.estimator", F(c.train.estimator)),
        real("train.layer_decay", F(c.train.layer_decay)),
        flag("train.wall_clock", F(c.train.wall_clock)),
        text("train.resume", F(c.train_resume)),
        uint("train.checkpoint_every", F(c.checkpoint_every)),
        uint("train.stop_after", F(c.stop_after)),

        real("attack.epsilon", F(c.train.attack.epsilon)),
        real("attack.step_size", F(c.train.attack.step_size)),
        uint("attack.iters", F(c.train.attack.iters)),
        init("attack.init", F(c.train.attack.init)),
        text("attack.kind", F(c.attack_kind)),

        text("finetune.init_checkpoint", F(c.finetune_init)),

        text("eval.attacks", F(c.eval.attacks)),
        real("eval.epsilon", F(c.eval.epsilon)),
        real("eval.step_size", F(c.eval.step_size)),
        real("eval.mi_lambda", F(c.eval.mi_lambda)),
        estimator("eval.estimator", F(c.eval.estimator)),
        uint("eval.batch_size", F(c.eval.batch_size)),
        uint("eval.samples", F(c.eval.samples)),

        uint("bounds.num_classes", F(c.bounds_num_classes)),
        real("bounds.step", F(c.bounds_step)),

        real("landscape.half_width", F(c.landscape_half_width)),
        uint("landscape.resolution", F(c.landscape_resolution)),
        uint("landscape.samples", F(c.landscape_samples)),

        uint("mi.samples", F(c.mi_samples)),
        real("mi.alpha", F(c.mi_alpha)),
    };
    return all;
}

#undef F

void check_values(const Cfg& c) {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    bool known = false;
    for (const auto& n : commands()) known = known || n == c.command;
    if (!known) fail("experiment.command: unknown command '" + c.command + "'");
    if (c.data.source != "synthetic" && c.data.source != "cifar10")
        fail("data.source: expected synthetic or cifar10, got '" + c.data.source + "'");
    if (c.attack_kind != "ce" && c.attack_kind != "mi" && c.attack_kind != "fea")
        fail("attack.kind: expected ce, mi or fea, got '" + c.attack_kind + "'");
    if (c.eval.batch_size == 0) fail("eval.batch_size must be positive");
    if (c.mi_samples < 2) fail("mi.samples must be at least 2");
    try {
        c.model.validate();
        c.train.validate();
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const Overrides& overrides) {
    std::map<std::string, const Field*> by_key;
    for (const auto& f : fields()) by_key[f.key] = &f;

    std::vector<std::pair<std::string, std::string>> entries;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!by_key.count(key)) throw ConfigError("unknown config key '" + key + "' on line " + std::to_string(lineno));
        if (!seen.insert(key).second) throw ConfigError("duplicate config key '" + key + "'");
        entries.emplace_back(key, value);
    }

    std::string command;
    for (const auto& [k, v] : entries)
        if (k == "experiment.command") command = v;
    if (overrides.command) {
        if (!command.empty() && command != *overrides.command)
            throw ConfigError("config is for command '" + command + "' but '" + *overrides.command + "' was requested");
        command = *overrides.command;
    }

    Cfg c;
    if (command == "finetune") c.train = train::TrainConfig::finetune_defaults();
    for (const auto& [k, v] : entries) by_key[k]->set(c, v);
    c.command = command;
    if (overrides.seed) c.seed = *overrides.seed;
    if (overrides.output_dir) c.output_dir = *overrides.output_dir;
    c.train.seed = c.seed;

    if (c.data.source == "cifar10") {
        c.data.image_size = 32;
        c.data.channels = 3;
        c.data.num_classes = 10;
    }
    c.model.image_size = c.data.image_size;
    c.model.channels = c.data.channels;
    c.model.num_classes = c.data.num_classes;

    std::vector<std::string> missing;
    if (c.command.empty()) missing.push_back("experiment.command");
    if (c.output_dir.empty()) missing.push_back("experiment.output_dir");
    if (c.data.source == "cifar10" && c.data.path.empty()) missing.push_back("data.path");
    bool needs_model = c.command == "eval" || c.command == "attack" || c.command == "landscape" ||
                       c.command == "mi-estimate";
    if (needs_model && c.model_checkpoint.empty()) missing.push_back("model.checkpoint");
    if (!missing.empty()) {
        std::string msg = "missing required config keys:";
        for (const auto& m : missing) msg += " " + m;
        throw ConfigError(msg);
    }
    check_values(c);
    return c;
}

ExperimentConfig load_config(const std::string& path, const Overrides& overrides) {
    if (path.empty()) return parse_config("", overrides);
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), overrides);
}

std::string serialize_config(const ExperimentConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
    return out;
}

void validate_paths(const ExperimentConfig& c) {
    namespace fs = std::filesystem;
    std::vector<std::pair<std::string, std::string>> refs = {{"data.path", c.data.path},
                                                             {"model.checkpoint", c.model_checkpoint},
                                                             {"train.resume", c.train_resume},
                                                             {"finetune.init_checkpoint", c.finetune_init}};
    for (const auto& [key, p] : refs)
        if (!p.empty() && !fs::exists(p)) throw ConfigError(key + ": path '" + p + "' does not exist");
}

}  // namespace mimir::harness
