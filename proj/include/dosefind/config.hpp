#pragma once

// JSON configuration for studies and live trials. Unknown keys are rejected;
// every error names the offending field by its path, e.g.
// "policies[2].omega: must satisfy 0 < value < 1/2".

#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "designs.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "posterior.hpp"
#include "simulator.hpp"

namespace dosefind {

using json = nlohmann::json;

namespace detail {

/// Reads keys of one JSON object, remembering which were consumed.
class ObjectReader {
   public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw validation_error(path_.empty() ? "config" : path_, "expected an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& at(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) throw validation_error(field(key), "missing required key");
        return j_.at(key);
    }

    double number(const std::string& key) {
        const json& v = at(key);
        if (v.is_number()) return v.get<double>();
        if (v.is_string()) {
            // fractions such as "1/3"
            const std::string s = v.get<std::string>();
            const auto slash = s.find('/');
            try {
                if (slash != std::string::npos) {
                    std::size_t a = 0, b = 0;
                    const double num = std::stod(s.substr(0, slash), &a);
                    const double den = std::stod(s.substr(slash + 1), &b);
                    if (a == slash && b == s.size() - slash - 1 && den != 0.0) return num / den;
                }
            } catch (const std::exception&) {
            }
        }
        throw validation_error(field(key), "expected a number");
    }

    double number(const std::string& key, double fallback) { return has(key) ? number(key) : (seen_.insert(key), fallback); }

    std::uint64_t unsigned_int(const std::string& key) {
        const json& v = at(key);
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
        throw validation_error(field(key), "expected a non-negative integer");
    }

    std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) {
        return has(key) ? unsigned_int(key) : (seen_.insert(key), fallback);
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const json& v = at(key);
        if (!v.is_boolean()) throw validation_error(field(key), "expected true or false");
        return v.get<bool>();
    }

    std::string string(const std::string& key) {
        const json& v = at(key);
        if (!v.is_string()) throw validation_error(field(key), "expected a string");
        return v.get<std::string>();
    }

    std::string string(const std::string& key, const std::string& fallback) {
        return has(key) ? string(key) : (seen_.insert(key), fallback);
    }

    /// Throws on the first key that was never read.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw validation_error(field(it.key()), "unknown key");
    }

   private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

/// Re-raises validation errors from the library with the config path prepended.
template <class Fn>
auto with_path(const std::string& path, Fn&& fn) {
    try {
        return fn();
    } catch (const validation_error& e) {
        if (e.field().rfind(path, 0) == 0) throw;
        const std::string msg = std::string(e.what()).substr(e.field().empty() ? 0 : e.field().size() + 2);
        throw validation_error(path.empty() ? e.field() : path + "." + e.field(), msg);
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parsing

inline TrialModel parse_model(const json& j, const std::string& path = "model") {
    detail::ObjectReader r(j, path);
    TrialModel m;
    m.space.x_min = r.number("x_min");
    m.space.x_max = r.number("x_max");
    m.p = r.number("p");
    if (r.has("prior")) {
        detail::ObjectReader pr(r.at("prior"), r.field("prior"));
        const std::string kind = pr.string("kind");
        if (kind != "uniform") throw validation_error(pr.field("kind"), "only the uniform prior is supported in configs");
        pr.finish();
    }
    r.finish();
    detail::with_path(path, [&] {
        m.validate();
        return 0;
    });
    return m;
}

inline LossSpec parse_loss(const json& j, const std::string& path) {
    detail::ObjectReader r(j, path);
    const std::string kind = r.string("loss");
    LossSpec spec;
    if (kind == "squared_error")
        spec = loss::SquaredError{};
    else if (kind == "ewoc")
        spec = loss::Ewoc{r.number("omega", 0.25)};
    else if (kind == "inverted")
        spec = loss::Inverted{r.number("gamma", 0.25)};
    else
        throw validation_error(r.field("loss"), "expected squared_error, ewoc or inverted");
    r.finish();
    detail::with_path(path, [&] {
        validate_loss(spec);
        return 0;
    });
    return spec;
}

inline SearchOptions parse_search(const json& j, const std::string& path) {
    detail::ObjectReader r(j, path);
    SearchOptions s;
    s.grid_points = r.unsigned_int("grid_points", s.grid_points);
    s.stride = r.unsigned_int("stride", s.stride);
    s.lookahead_stride = r.unsigned_int("lookahead_stride", s.lookahead_stride);
    s.golden_iterations = static_cast<int>(r.unsigned_int("golden_iterations", s.golden_iterations));
    r.finish();
    return s;
}

/// A policy object; `name` (if present) is returned through name_out.
inline DesignPolicy parse_policy(const json& j, const std::string& path, std::string* name_out = nullptr) {
    detail::ObjectReader r(j, path);
    DesignPolicy pol;
    const std::string rule = r.string("rule");
    const std::string name = r.string("name", rule);
    if (name_out) *name_out = name;
    pol.enforce_coherence = r.boolean("enforce_coherence", false);
    if (r.has("search")) pol.search = parse_search(r.at("search"), r.field("search"));
    if (rule == "crm") {
        pol.rule = policy::Crm{};
    } else if (rule == "ewoc") {
        pol.rule = policy::Ewoc{r.number("omega")};
    } else if (rule == "ewoc_star") {
        policy::EwocStar s;
        s.omega_start = r.number("omega_start", s.omega_start);
        s.omega_end = r.number("omega_end", s.omega_end);
        s.n = r.unsigned_int("n", s.n);
        pol.rule = s;
    } else if (rule == "ivoc") {
        pol.rule = policy::Ivoc{r.number("gamma")};
    } else if (rule == "constrained_optimal") {
        policy::ConstrainedOptimal c;
        const std::string crit = r.string("criterion", "D");
        if (crit == "D") {
            c.psi.kind = loss::CriterionKind::D;
        } else if (crit == "c") {
            c.psi.kind = loss::CriterionKind::c;
        } else {
            throw validation_error(r.field("criterion"), "expected D or c");
        }
        if (r.has("c")) {
            const json& v = r.at("c");
            if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
                throw validation_error(r.field("c"), "expected an array of two numbers");
            c.psi.c = std::array<double, 2>{v[0].get<double>(), v[1].get<double>()};
        }
        c.q = r.number("q");
        c.omega = r.number("omega");
        c.initial_k = r.unsigned_int("initial_k", c.initial_k);
        pol.rule = c;
    } else if (rule == "lookahead") {
        policy::Lookahead l;
        if (r.has("h")) l.h = parse_loss(r.at("h"), r.field("h"));
        l.lambda = r.number("lambda");
        const std::string engine = r.string("engine", "grid");
        if (engine == "grid")
            l.engine = policy::Engine::grid;
        else if (engine == "importance")
            l.engine = policy::Engine::importance;
        else
            throw validation_error(r.field("engine"), "expected grid or importance");
        l.particles = r.unsigned_int("particles", l.particles);
        pol.rule = l;
    } else {
        throw validation_error(r.field("rule"), "unknown rule '" + rule +
                                                    "' (expected crm, ewoc, ewoc_star, ivoc, constrained_optimal, lookahead)");
    }
    r.finish();
    detail::with_path(path, [&] {
        validate_policy(pol);
        return 0;
    });
    return pol;
}

inline GridResolution parse_grid(const json& j, const std::string& path, GridResolution fallback) {
    detail::ObjectReader r(j, path);
    GridResolution g;
    g.n_rho = r.unsigned_int("n_rho", fallback.n_rho);
    g.n_eta = r.unsigned_int("n_eta", fallback.n_eta);
    r.finish();
    if (g.n_rho < 32 || g.n_eta < 32) throw validation_error(path, "grid resolution must be at least 32x32");
    return g;
}

inline ScenarioSpec parse_scenario(const json& j, const std::string& path) {
    detail::ObjectReader r(j, path);
    ScenarioSpec s;
    s.name = r.string("name");
    detail::ObjectReader t(r.at("truth"), r.field("truth"));
    const std::string kind = t.string("kind");
    if (kind == "fixed") {
        s.fixed = FixedTruth{t.number("rho"), t.number("eta")};
    } else if (kind != "bayesian") {
        throw validation_error(t.field("kind"), "expected bayesian or fixed");
    }
    t.finish();
    s.n = r.unsigned_int("n", s.n);
    s.replications = r.unsigned_int("replications", s.replications);
    s.seed = r.unsigned_int("seed", s.seed);
    r.finish();
    detail::with_path(path, [&] {
        s.validate();
        return 0;
    });
    return s;
}

struct StudyConfig {
    StudySpec spec;
    std::string output_dir = "out";
};

inline void validate_truths(const StudySpec& spec) {
    for (std::size_t i = 0; i < spec.scenarios.size(); ++i) {
        const auto& s = spec.scenarios[i];
        if (!s.fixed) continue;
        const std::string path = "scenarios[" + std::to_string(i) + "].truth";
        const auto& m = spec.model;
        if (!(s.fixed->rho >= m.rho_lo() && s.fixed->rho <= m.rho_hi()))
            throw validation_error(path + ".rho", "outside the clipped prior support");
        if (!(s.fixed->eta >= m.eta_lo() && s.fixed->eta <= m.eta_hi()))
            throw validation_error(path + ".eta", "outside the clipped prior support");
    }
}

inline StudyConfig parse_study_config(const json& j) {
    detail::ObjectReader r(j, "");
    StudyConfig cfg;
    cfg.spec.model = parse_model(r.at("model"), "model");

    const json& pols = r.at("policies");
    if (!pols.is_array() || pols.empty()) throw validation_error("policies", "expected a non-empty array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < pols.size(); ++i) {
        const std::string path = "policies[" + std::to_string(i) + "]";
        NamedPolicy np;
        np.policy = parse_policy(pols[i], path, &np.name);
        if (!names.insert(np.name).second) throw validation_error(path + ".name", "duplicate policy name");
        cfg.spec.policies.push_back(std::move(np));
    }

    const json& scs = r.at("scenarios");
    if (!scs.is_array() || scs.empty()) throw validation_error("scenarios", "expected a non-empty array");
    for (std::size_t i = 0; i < scs.size(); ++i)
        cfg.spec.scenarios.push_back(parse_scenario(scs[i], "scenarios[" + std::to_string(i) + "]"));
    validate_truths(cfg.spec);

    if (r.has("simulation")) {
        detail::ObjectReader s(r.at("simulation"), "simulation");
        if (s.has("grid")) cfg.spec.resolution = parse_grid(s.at("grid"), "simulation.grid", cfg.spec.resolution);
        if (s.has("risk")) {
            detail::ObjectReader rk(s.at("risk"), "simulation.risk");
            cfg.spec.losses.omega = rk.number("omega", cfg.spec.losses.omega);
            cfg.spec.losses.gamma = rk.number("gamma", cfg.spec.losses.gamma);
            rk.finish();
        }
        cfg.spec.workers = s.unsigned_int("workers", 0);
        s.finish();
    }
    if (r.has("output")) {
        detail::ObjectReader o(r.at("output"), "output");
        cfg.output_dir = o.string("dir", cfg.output_dir);
        o.finish();
    }
    r.finish();
    return cfg;
}

/// Parses JSON text; syntax errors become validation errors naming the byte offset.
inline json parse_json_text(const std::string& text, const std::string& what = "config") {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw validation_error(what, std::string("malformed JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Serialization (the inverse of the parsers above)

inline json model_to_json(const TrialModel& m) {
    return {{"x_min", m.space.x_min}, {"x_max", m.space.x_max}, {"p", m.p}, {"prior", {{"kind", "uniform"}}}};
}

inline json loss_to_json(const LossSpec& spec) {
    switch (spec.index()) {
        case 0: return {{"loss", "squared_error"}};
        case 1: return {{"loss", "ewoc"}, {"omega", std::get<loss::Ewoc>(spec).omega}};
        case 2: return {{"loss", "inverted"}, {"gamma", std::get<loss::Inverted>(spec).gamma}};
        default: throw validation_error("h", "design-criterion losses have no standalone JSON form");
    }
}

inline json policy_to_json(const DesignPolicy& pol, const std::string& name = "") {
    json j;
    j["rule"] = policy_kind(pol);
    if (!name.empty()) j["name"] = name;
    j["enforce_coherence"] = pol.enforce_coherence;
    j["search"] = {{"grid_points", pol.search.grid_points},
                   {"stride", pol.search.stride},
                   {"lookahead_stride", pol.search.lookahead_stride},
                   {"golden_iterations", pol.search.golden_iterations}};
    std::visit(
        [&](const auto& r) {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, policy::Ewoc>) {
                j["omega"] = r.omega;
            } else if constexpr (std::is_same_v<T, policy::EwocStar>) {
                j["omega_start"] = r.omega_start;
                j["omega_end"] = r.omega_end;
                j["n"] = r.n;
            } else if constexpr (std::is_same_v<T, policy::Ivoc>) {
                j["gamma"] = r.gamma;
            } else if constexpr (std::is_same_v<T, policy::ConstrainedOptimal>) {
                j["criterion"] = r.psi.kind == loss::CriterionKind::D ? "D" : "c";
                if (r.psi.c) j["c"] = {(*r.psi.c)[0], (*r.psi.c)[1]};
                j["q"] = r.q;
                j["omega"] = r.omega;
                j["initial_k"] = r.initial_k;
            } else if constexpr (std::is_same_v<T, policy::Lookahead>) {
                j["h"] = loss_to_json(r.h);
                j["lambda"] = r.lambda;
                j["engine"] = r.engine == policy::Engine::grid ? "grid" : "importance";
                j["particles"] = r.particles;
            }
        },
        pol.rule);
    return j;
}

inline json scenario_to_json(const ScenarioSpec& s) {
    json truth = s.fixed ? json{{"kind", "fixed"}, {"rho", s.fixed->rho}, {"eta", s.fixed->eta}} : json{{"kind", "bayesian"}};
    return {{"name", s.name}, {"truth", truth}, {"n", s.n}, {"replications", s.replications}, {"seed", s.seed}};
}

inline json study_config_to_json(const StudyConfig& cfg) {
    json j;
    j["model"] = model_to_json(cfg.spec.model);
    j["policies"] = json::array();
    for (const auto& p : cfg.spec.policies) j["policies"].push_back(policy_to_json(p.policy, p.name));
    j["scenarios"] = json::array();
    for (const auto& s : cfg.spec.scenarios) j["scenarios"].push_back(scenario_to_json(s));
    j["simulation"] = {{"grid", {{"n_rho", cfg.spec.resolution.n_rho}, {"n_eta", cfg.spec.resolution.n_eta}}},
                       {"risk", {{"omega", cfg.spec.losses.omega}, {"gamma", cfg.spec.losses.gamma}}},
                       {"workers", cfg.spec.workers}};
    j["output"] = {{"dir", cfg.output_dir}};
    return j;
}

}  // namespace dosefind
