#include "podnn/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace podnn {

namespace {

void require_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (allowed.find(key) == allowed.end()) {
            throw ConfigError("config: unknown key '" + key + "' in " + where);
        }
    }
}

template <class T>
T get_or(const nlohmann::json& j, const std::string& key, const T& fallback,
         const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: bad value for '" + key + "' in " + where);
    }
}

AdamConfig parse_adam(const nlohmann::json& j, const AdamConfig& defaults,
                      const std::string& where) {
    require_keys(j, {"lr", "beta1", "beta2", "eps"}, where);
    AdamConfig out = defaults;
    out.lr = get_or(j, "lr", out.lr, where);
    out.beta1 = get_or(j, "beta1", out.beta1, where);
    out.beta2 = get_or(j, "beta2", out.beta2, where);
    out.eps = get_or(j, "eps", out.eps, where);
    return out;
}

nlohmann::json adam_to_json(const AdamConfig& a) {
    return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

} // namespace

MechanismSpec mechanism_from_json(const nlohmann::json& j, const std::string& where) {
    require_keys(j, {"kind", "direction", "severity", "sigma", "seed"}, where);
    const std::string kind = get_or<std::string>(j, "kind", "", where);
    try {
        if (kind == "translate") {
            if (!j.contains("direction") || !j.contains("severity")) {
                throw ConfigError("config: translate mechanism needs direction and severity (" +
                                  where + ")");
            }
            return MechanismSpec::translate(
                direction_from_name(j.at("direction").get<std::string>()),
                j.at("severity").get<int>());
        }
        if (kind == "noise") {
            if (!j.contains("sigma")) {
                throw ConfigError("config: noise mechanism needs sigma (" + where + ")");
            }
            return MechanismSpec::noise(j.at("sigma").get<double>(),
                                        get_or<uint64_t>(j, "seed", 0, where));
        }
        if (kind == "contrast-invert") {
            return MechanismSpec::contrast_invert();
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config: " + std::string(e.what()) + " (" + where + ")");
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: malformed mechanism in " + where);
    }
    throw ConfigError("config: unknown mechanism kind '" + kind + "' in " + where);
}

nlohmann::json mechanism_to_json(const MechanismSpec& spec) {
    switch (spec.kind) {
        case MechanismKind::translate:
            return {{"kind", "translate"},
                    {"direction", direction_name(spec.direction)},
                    {"severity", spec.severity}};
        case MechanismKind::noise:
            return {{"kind", "noise"}, {"sigma", spec.sigma}, {"seed", spec.seed}};
        case MechanismKind::contrast_invert:
            return {{"kind", "contrast-invert"}};
    }
    return {};
}

RunConfig parse_run_config(const nlohmann::json& j) {
    require_keys(j,
                 {"dataset", "mechanisms", "proportions", "trainer", "precision", "output_dir",
                  "sample_every"},
                 "top level");
    RunConfig cfg;

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        require_keys(d, {"source", "count", "height", "width", "images", "limit"}, "dataset");
        cfg.dataset_source = get_or<std::string>(d, "source", "synthetic", "dataset");
        if (cfg.dataset_source == "synthetic") {
            cfg.synthetic_count = get_or(d, "count", cfg.synthetic_count, "dataset");
            cfg.height = get_or(d, "height", cfg.height, "dataset");
            cfg.width = get_or(d, "width", cfg.width, "dataset");
        } else if (cfg.dataset_source == "idx") {
            cfg.idx_images = get_or<std::string>(d, "images", "", "dataset");
            cfg.idx_limit = get_or(d, "limit", 0, "dataset");
            if (cfg.idx_images.empty()) {
                throw ConfigError("config: dataset source 'idx' needs an 'images' path");
            }
        } else {
            throw ConfigError("config: unknown dataset source '" + cfg.dataset_source + "'");
        }
    }

    if (!j.contains("mechanisms") || !j.at("mechanisms").is_array() ||
        j.at("mechanisms").empty()) {
        throw ConfigError("config: 'mechanisms' must be a non-empty array");
    }
    int idx = 0;
    for (const auto& m : j.at("mechanisms")) {
        cfg.mechanisms.push_back(mechanism_from_json(m, "mechanisms[" + std::to_string(idx) + "]"));
        ++idx;
    }
    cfg.proportions = get_or(j, "proportions", cfg.proportions, "top level");
    if (!cfg.proportions.empty() && cfg.proportions.size() != cfg.mechanisms.size()) {
        throw ConfigError("config: proportions count must match mechanisms");
    }

    if (j.contains("trainer")) {
        const auto& t = j.at("trainer");
        require_keys(t,
                     {"n_experts", "batch_size", "expert_channels", "orthogonalization",
                      "relocation", "relocation_pct", "max_iterations", "convergence_window",
                      "standalone_iterations", "seed", "oracle_scoring", "convergence_mode",
                      "coupled_expert_updates", "adam_experts", "adam_disc", "score_clamp"},
                     "trainer");
        TrainConfig& tc = cfg.trainer;
        tc.n_experts = get_or(t, "n_experts", tc.n_experts, "trainer");
        tc.batch_size = get_or(t, "batch_size", tc.batch_size, "trainer");
        tc.expert_channels = get_or(t, "expert_channels", tc.expert_channels, "trainer");
        tc.orthogonalization = get_or(t, "orthogonalization", tc.orthogonalization, "trainer");
        tc.relocation = get_or(t, "relocation", tc.relocation, "trainer");
        tc.relocation_pct = get_or(t, "relocation_pct", tc.relocation_pct, "trainer");
        tc.max_iterations = get_or(t, "max_iterations", tc.max_iterations, "trainer");
        tc.convergence_window = get_or(t, "convergence_window", tc.convergence_window, "trainer");
        tc.standalone_iterations =
            get_or(t, "standalone_iterations", tc.standalone_iterations, "trainer");
        tc.seed = get_or<uint64_t>(t, "seed", tc.seed, "trainer");
        tc.oracle_scoring = get_or(t, "oracle_scoring", tc.oracle_scoring, "trainer");
        tc.coupled_expert_updates =
            get_or(t, "coupled_expert_updates", tc.coupled_expert_updates, "trainer");
        tc.score_clamp = get_or(t, "score_clamp", tc.score_clamp, "trainer");
        const std::string mode =
            get_or<std::string>(t, "convergence_mode", "labels", "trainer");
        if (mode == "labels") {
            tc.convergence_mode = ConvergenceMode::labels;
        } else if (mode == "proxy") {
            tc.convergence_mode = ConvergenceMode::proxy;
        } else {
            throw ConfigError("config: convergence_mode must be 'labels' or 'proxy'");
        }
        if (t.contains("adam_experts")) {
            tc.adam_experts = parse_adam(t.at("adam_experts"), tc.adam_experts, "adam_experts");
        }
        if (t.contains("adam_disc")) {
            tc.adam_disc = parse_adam(t.at("adam_disc"), tc.adam_disc, "adam_disc");
        }
    }
    cfg.trainer.specs = cfg.mechanisms;
    cfg.trainer.proportions = cfg.proportions;

    cfg.precision = get_or<std::string>(j, "precision", cfg.precision, "top level");
    if (cfg.precision != "f32" && cfg.precision != "f64") {
        throw ConfigError("config: precision must be 'f32' or 'f64'");
    }
    cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir, "top level");
    cfg.sample_every = get_or(j, "sample_every", cfg.sample_every, "top level");

    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    if (dataset_source == "synthetic") {
        if (synthetic_count < 2 * trainer.batch_size) {
            throw ConfigError("config: synthetic count must cover at least two batches");
        }
    }
    if (sample_every < 0) throw ConfigError("config: sample_every must be >= 0");
    try {
        trainer.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must look like key.path=value: '" + assignment + "'");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;  // unquoted strings pass through as-is
    }

    nlohmann::json* node = &j;
    size_t start = 0;
    for (;;) {
        const size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty()) throw ConfigError("override has an empty path segment: '" + path + "'");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            break;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in.is_open()) throw ConfigError("config: cannot open file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
    }
    for (const std::string& o : overrides) apply_override(j, o);
    return parse_run_config(j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json dataset;
    if (cfg.dataset_source == "synthetic") {
        dataset = {{"source", "synthetic"},
                   {"count", cfg.synthetic_count},
                   {"height", cfg.height},
                   {"width", cfg.width}};
    } else {
        dataset = {{"source", "idx"}, {"images", cfg.idx_images}, {"limit", cfg.idx_limit}};
    }
    nlohmann::json mechs = nlohmann::json::array();
    for (const auto& m : cfg.mechanisms) mechs.push_back(mechanism_to_json(m));

    const TrainConfig& tc = cfg.trainer;
    nlohmann::json trainer = {
        {"n_experts", tc.n_experts},
        {"batch_size", tc.batch_size},
        {"expert_channels", tc.expert_channels},
        {"orthogonalization", tc.orthogonalization},
        {"relocation", tc.relocation},
        {"relocation_pct", tc.relocation_pct},
        {"max_iterations", tc.max_iterations},
        {"convergence_window", tc.convergence_window},
        {"standalone_iterations", tc.standalone_iterations},
        {"seed", tc.seed},
        {"oracle_scoring", tc.oracle_scoring},
        {"convergence_mode", tc.convergence_mode == ConvergenceMode::labels ? "labels" : "proxy"},
        {"coupled_expert_updates", tc.coupled_expert_updates},
        {"score_clamp", tc.score_clamp},
        {"adam_experts", adam_to_json(tc.adam_experts)},
        {"adam_disc", adam_to_json(tc.adam_disc)},
    };

    nlohmann::json out = {{"dataset", dataset},
                          {"mechanisms", mechs},
                          {"trainer", trainer},
                          {"precision", cfg.precision},
                          {"output_dir", cfg.output_dir},
                          {"sample_every", cfg.sample_every}};
    if (!cfg.proportions.empty()) out["proportions"] = cfg.proportions;
    return out;
}

std::string resolve_data_path(const std::string& path) {
    if (path.empty() || path.front() == '/') return path;
    const char* root = std::getenv("PODNN_DATA_ROOT");
    if (root == nullptr || root[0] == '\0') return path;
    std::string out(root);
    if (out.back() != '/') out.push_back('/');
    return out + path;
}

} // namespace podnn
