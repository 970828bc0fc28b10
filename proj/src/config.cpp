// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>
#include <type_traits>

#include "hyperalign/serialize.hpp"

namespace hyperalign {

using nlohmann::json;

namespace {

template <typename T>
struct is_vector : std::false_type {};
template <typename U>
struct is_vector<std::vector<U>> : std::true_type {};

// nlohmann truncates 1.5 to an int and wraps -1 to an unsigned; the config
// treats both as type errors.
template <typename T>
bool exact_type(const json& j) {
    if constexpr (std::is_same_v<T, bool>) {
        return j.is_boolean();
    } else if constexpr (std::is_integral_v<T>) {
        if (!j.is_number_integer()) return false;
        return !std::is_unsigned_v<T> || j.is_number_unsigned() || j.get<std::int64_t>() >= 0;
    } else if constexpr (is_vector<T>::value) {
        if (!j.is_array()) return false;
        for (const auto& e : j)
            if (!exact_type<typename T::value_type>(e)) return false;
        return true;
    } else {
        return true;
    }
}

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as typos.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: '" + label() + "' must be an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            if (!exact_type<T>(j_.at(key))) throw std::invalid_argument("type");
            out = j_.at(key).get<T>();
        } catch (const std::exception&) {
            throw ConfigError("config: '" + name(key) + "' has the wrong type (" + j_.at(key).dump() + ")");
        }
    }

    template <typename T>
    T require(const std::string& key) {
        if (!j_.contains(key)) throw ConfigError("config: missing required key '" + name(key) + "'");
        T v{};
        get(key, v);
        return v;
    }

    Section child(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, name(key));
    }

    const json* raw(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    /// Throws on the first key that was never consumed.
    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("config: unknown key '" + name(k) + "'");
    }

private:
    std::string label() const { return path_.empty() ? "<root>" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename Parse>
auto parse_enum(Section& s, const std::string& key, Parse parse, decltype(parse(std::string())) fallback) {
    std::string text;
    s.get(key, text);
    if (text.empty()) return fallback;
    try {
        return parse(text);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config: '" + s.name(key) + "': " + e.what());
    }
}

Tensor parse_matrix(const json& j, const std::string& name) {
    if (!j.is_array() || j.empty()) throw ConfigError("config: '" + name + "' must be a nonempty array of rows");
    std::vector<std::vector<double>> rows;
    try {
        rows = j.get<std::vector<std::vector<double>>>();
    } catch (const json::exception&) {
        throw ConfigError("config: '" + name + "' must be an array of numeric rows");
    }
    for (const auto& r : rows)
        if (r.size() != rows.front().size() || r.empty()) throw ConfigError("config: '" + name + "' rows differ in length");
    return Tensor::from_rows(rows);
}

json matrix_json(const Tensor& t) {
    json rows = json::array();
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < t.dim(1); ++j) row.push_back(t.at(i, j));
        rows.push_back(row);
    }
    return rows;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return {};
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

// Runs a component validator, re-throwing its message under the key path.
template <typename F>
void check(const std::string& key, F&& f) {
    try {
        f();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config: '" + key + "': " + e.what());
    }
}

}  // namespace

std::vector<double> PreferenceParams::eta_for(int T) const {
    if (eta.empty()) return std::vector<double>(static_cast<std::size_t>(T), eta_default);
    if (eta.size() != static_cast<std::size_t>(T)) {
        throw ConfigError("config: 'preference.eta' has " + std::to_string(eta.size()) + " entries, the process has " +
                          std::to_string(T) + " steps");
    }
    return eta;
}

Process ExperimentConfig::process() const {
    return paradigm == Paradigm::vp ? Process::vp(make_vp_schedule(steps, beta_min, beta_max))
                                    : Process::flow(make_flow_schedule(steps));
}

void ExperimentConfig::reseed(std::uint64_t s) {
    seed = s;
    train.seed = s;
    align.seed = s;
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    Section root(doc, "");
    c.seed = root.require<std::uint64_t>("seed");
    c.paradigm = parse_enum(root, "paradigm", paradigm_from_string, Paradigm::vp);
    std::string out = c.output_dir.string();
    root.get("output_dir", out);
    c.output_dir = resolve(base_dir, out);

    {
        Section s = root.child("data");
        if (const json* m = s.raw("modes")) c.mixture.modes = parse_matrix(*m, s.name("modes"));
        s.get("std", c.mixture.std);
        s.get("train_size", c.train_size);
        s.finish();
        if (!(c.mixture.std > 0.0)) throw ConfigError("config: 'data.std' must be > 0");
        if (c.train_size == 0) throw ConfigError("config: 'data.train_size' must be >= 1");
    }
    {
        Section s = root.child("schedule");
        s.get("steps", c.steps);
        s.get("beta_min", c.beta_min);
        s.get("beta_max", c.beta_max);
        s.finish();
        check("schedule", [&] { (void)c.process(); });
    }
    {
        Section s = root.child("denoiser");
        s.get("time_features", c.denoiser.time_features);
        s.get("cond_embedding", c.denoiser.cond_embedding);
        s.get("hidden", c.denoiser.hidden);
        s.finish();
        c.denoiser.data_dim = c.mixture.dim();
        c.denoiser.num_conditions = c.mixture.num_conditions();
        c.denoiser.parameterization =
            c.paradigm == Paradigm::vp ? Parameterization::epsilon : Parameterization::velocity;
        if (c.denoiser.hidden.empty()) throw ConfigError("config: 'denoiser.hidden' must list at least one width");
    }
    {
        Section s = root.child("hypernet");
        auto& h = c.hypernet;
        s.get("target_layers", h.target_layers);
        s.get("rank", h.rank);
        s.get("query_tokens", h.query_tokens);
        s.get("kv_tokens", h.kv_tokens);
        s.get("token_width", h.token_width);
        s.get("encoder_hidden", h.encoder_hidden);
        s.get("ffn_hidden", h.ffn_hidden);
        s.get("lora_scale", h.lora_scale);
        s.finish();
        for (auto l : h.target_layers)
            if (l >= c.denoiser.hidden.size() + 1)
                throw ConfigError("config: 'hypernet.target_layers' names layer " + std::to_string(l) +
                                  ", the denoiser has " + std::to_string(c.denoiser.hidden.size() + 1));
    }
    {
        Section s = root.child("reward");
        c.reward = default_reward(c.mixture);
        c.reward.family = parse_enum(s, "family", reward_family_from_string, RewardFamily::mode_pull);
        if (const json* t = s.raw("targets")) c.reward.targets = parse_matrix(*t, s.name("targets"));
        s.get("radius", c.reward.radius);
        s.get("pull_weight", c.reward.pull_weight);
        s.get("annulus_weight", c.reward.annulus_weight);
        s.get("gamma", c.reward.gamma);
        s.finish();
        check("reward", [&] { c.reward.validate(); });
        if (c.reward.num_conditions() != c.mixture.num_conditions() || c.reward.dim() != c.mixture.dim()) {
            throw ConfigError("config: 'reward.targets' must be " + std::to_string(c.mixture.num_conditions()) + " x " +
                              std::to_string(c.mixture.dim()) + " to match data.modes");
        }
    }
    {
        Section s = root.child("grid");
        s.get("lo", c.grid.lo);
        s.get("hi", c.grid.hi);
        s.get("resolution", c.grid.resolution);
        s.finish();
        check("grid", [&] { c.grid.validate(); });
    }
    {
        Section s = root.child("preference");
        s.get("per_condition", c.preference.per_condition);
        s.get("budget", c.preference.budget);
        if (const json* e = s.raw("eta")) {
            if (e->is_number()) {
                c.preference.eta_default = e->get<double>();
            } else if (e->is_array()) {
                try {
                    c.preference.eta = e->get<std::vector<double>>();
                } catch (const json::exception&) {
                    throw ConfigError("config: 'preference.eta' must be a number or an array of numbers");
                }
            } else {
                throw ConfigError("config: 'preference.eta' must be a number or an array of numbers");
            }
        }
        s.finish();
        for (double v : c.preference.eta_for(c.steps))
            if (!(v >= 0.0)) throw ConfigError("config: 'preference.eta' must be >= 0");
        if (c.preference.per_condition == 0 || c.preference.budget < c.preference.per_condition)
            throw ConfigError("config: 'preference' needs per_condition >= 1 and budget >= per_condition");
    }
    {
        Section s = root.child("train_base");
        s.get("iterations", c.train.iterations);
        s.get("batch_size", c.train.batch_size);
        s.get("learning_rate", c.train.learning_rate);
        s.get("ema_decay", c.train.ema_decay);
        s.get("loss_threshold", c.train.loss_threshold);
        s.finish();
        c.train.seed = c.seed;
        if (c.train.iterations < 0 || c.train.batch_size == 0 || !(c.train.learning_rate > 0.0))
            throw ConfigError("config: 'train_base' needs iterations >= 0, batch_size >= 1, learning_rate > 0");
    }
    {
        Section s = root.child("align");
        s.get("iterations", c.align.iterations);
        s.get("batch_size", c.align.batch_size);
        s.get("learning_rate", c.align.learning_rate);
        s.get("t_min", c.align.t_min);
        s.get("t_max", c.align.t_max);
        c.align.losses = parse_enum(s, "losses", loss_mix_from_string, LossMix::both);
        s.get("ema_decay", c.align.ema_decay);
        s.get("pool_per_condition", c.pool_per_condition);
        s.finish();
        c.align.seed = c.seed;
        check("align", [&] { c.align.validate(); });
        if (c.pool_per_condition == 0) throw ConfigError("config: 'align.pool_per_condition' must be >= 1");
    }
    {
        Section s = root.child("keysteps");
        s.get("count", c.keysteps.count);
        s.get("probes_per_condition", c.keysteps.probes_per_condition);
        std::string file;
        s.get("file", file);
        c.keysteps.file = resolve(base_dir, file);
        s.finish();
        if (c.keysteps.count < 2 || c.keysteps.count > static_cast<std::size_t>(c.steps))
            throw ConfigError("config: 'keysteps.count' must lie in [2, schedule.steps]");
    }
    {
        Section s = root.child("guidance");
        s.get("scale", c.guidance.scale);
        c.guidance.jacobian = parse_enum(s, "jacobian", jacobian_mode_from_string, JacobianMode::full);
        s.finish();
        check("guidance", [&] { c.guidance.validate(); });
    }
    {
        Section s = root.child("search");
        s.get("candidates", c.search.candidates);
        s.get("iterations", c.search.iterations);
        s.get("proposals", c.search.proposals);
        s.get("perturbation_std", c.search.perturbation_std);
        s.finish();
        check("search", [&] { c.search.validate(); });
    }
    {
        Section s = root.child("bench");
        s.get("methods", c.bench.methods);
        s.get("samples_per_condition", c.bench.samples_per_condition);
        s.get("timing_trajectories", c.bench.timing_trajectories);
        s.get("projections", c.bench.projections);
        s.get("reference_per_condition", c.bench.reference_per_condition);
        std::string base, hyper;
        s.get("base_checkpoint", base);
        s.get("hypernet_checkpoint", hyper);
        c.bench.base_checkpoint = resolve(base_dir, base);
        c.bench.hypernet_checkpoint = resolve(base_dir, hyper);
        s.get("plots", c.bench.plots);
        s.finish();
        static const std::set<std::string> known = {"base", "guided", "bon", "eps_greedy", "hyper_S", "hyper_I", "hyper_P"};
        std::set<std::string> seen;
        for (const auto& m : c.bench.methods) {
            if (!known.count(m)) throw ConfigError("config: 'bench.methods' has unknown method '" + m + "'");
            if (!seen.insert(m).second) throw ConfigError("config: 'bench.methods' lists '" + m + "' twice");
        }
        if (c.bench.projections < 32) throw ConfigError("config: 'bench.projections' must be >= 32");
        if (c.bench.samples_per_condition < 1000)
            throw ConfigError("config: 'bench.samples_per_condition' must be >= 1000 for the grid KL");
        if (c.bench.timing_trajectories == 0) throw ConfigError("config: 'bench.timing_trajectories' must be >= 1");
    }
    root.finish();

    for (const auto& p : {c.keysteps.file, c.bench.base_checkpoint, c.bench.hypernet_checkpoint}) {
        if (!p.empty() && !std::filesystem::exists(p)) {
            throw ConfigError("config: referenced file " + p.string() + " does not exist");
        }
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(doc, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

json ExperimentConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["paradigm"] = hyperalign::to_string(paradigm);
    j["output_dir"] = output_dir.string();
    j["data"] = {{"modes", matrix_json(mixture.modes)}, {"std", mixture.std}, {"train_size", train_size}};
    j["schedule"] = {{"steps", steps}, {"beta_min", beta_min}, {"beta_max", beta_max}};
    j["denoiser"] = {{"time_features", denoiser.time_features},
                     {"cond_embedding", denoiser.cond_embedding},
                     {"hidden", denoiser.hidden}};
    j["hypernet"] = {{"target_layers", hypernet.target_layers}, {"rank", hypernet.rank},
                     {"query_tokens", hypernet.query_tokens},   {"kv_tokens", hypernet.kv_tokens},
                     {"token_width", hypernet.token_width},     {"encoder_hidden", hypernet.encoder_hidden},
                     {"ffn_hidden", hypernet.ffn_hidden},       {"lora_scale", hypernet.lora_scale}};
    j["reward"] = {{"family", hyperalign::to_string(reward.family)}, {"targets", matrix_json(reward.targets)},
                   {"radius", reward.radius}, {"pull_weight", reward.pull_weight},
                   {"annulus_weight", reward.annulus_weight}, {"gamma", reward.gamma}};
    j["grid"] = {{"lo", grid.lo}, {"hi", grid.hi}, {"resolution", grid.resolution}};
    j["preference"] = {{"per_condition", preference.per_condition}, {"budget", preference.budget},
                       {"eta", preference.eta.empty() ? json(preference.eta_default) : json(preference.eta)}};
    j["train_base"] = {{"iterations", train.iterations}, {"batch_size", train.batch_size},
                       {"learning_rate", train.learning_rate}, {"ema_decay", train.ema_decay},
                       {"loss_threshold", train.loss_threshold}};
    j["align"] = {{"iterations", align.iterations}, {"batch_size", align.batch_size},
                  {"learning_rate", align.learning_rate}, {"t_min", align.t_min}, {"t_max", align.t_max},
                  {"losses", hyperalign::to_string(align.losses)}, {"ema_decay", align.ema_decay},
                  {"pool_per_condition", pool_per_condition}};
    j["keysteps"] = {{"count", keysteps.count}, {"probes_per_condition", keysteps.probes_per_condition},
                     {"file", keysteps.file.string()}};
    j["guidance"] = {{"scale", guidance.scale}, {"jacobian", hyperalign::to_string(guidance.jacobian)}};
    j["search"] = {{"candidates", search.candidates}, {"iterations", search.iterations},
                   {"proposals", search.proposals}, {"perturbation_std", search.perturbation_std}};
    j["bench"] = {{"methods", bench.methods}, {"samples_per_condition", bench.samples_per_condition},
                  {"timing_trajectories", bench.timing_trajectories}, {"projections", bench.projections},
                  {"reference_per_condition", bench.reference_per_condition},
                  {"base_checkpoint", bench.base_checkpoint.string()},
                  {"hypernet_checkpoint", bench.hypernet_checkpoint.string()}, {"plots", bench.plots}};
    return j;
}

std::string ExperimentConfig::hash() const { return hex_digest(fnv1a64(to_json().dump())); }

void write_keysteps(const std::filesystem::path& path, const KeystepSchedule& schedule) {
    schedule.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << json{{"T", schedule.T}, {"steps", schedule.steps}}.dump() << '\n';
}

KeystepSchedule read_keysteps(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("keysteps: cannot open " + path.string());
    KeystepSchedule k;
    try {
        const json j = json::parse(in);
        Section s(j, "keysteps");
        k.T = s.require<int>("T");
        k.steps = s.require<std::vector<int>>("steps");
        s.finish();
    } catch (const json::parse_error& e) {
        throw ConfigError("keysteps: " + path.string() + " is not valid JSON: " + e.what());
    }
    check("keysteps", [&] { k.validate(); });
    return k;
}

}  // namespace hyperalign
