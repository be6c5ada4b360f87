#pragma once

// Live trial conduct. Each trial is an append-only event log (one JSON object
// per line in <data_dir>/<id>.jsonl); the in-memory state is a fold over that
// log and is rebuilt by replay at startup. Mutations of one trial are
// serialized by a per-trial mutex; reads return the latest immutable snapshot.
//
// Events:
//   trial_created     {id, config}
//   outcome_recorded  {patient_index, dose_given, outcome, recommended_dose, next_recommendation}

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "designs.hpp"
#include "errors.hpp"
#include "posterior.hpp"
#include "random.hpp"

namespace dosefind {

class not_found_error : public error {
   public:
    using error::error;
};

/// Duplicate or out-of-order patient_index, or an outcome for a completed trial.
class conflict_error : public error {
   public:
    using error::error;
};

struct TrialConfig {
    TrialModel model;
    DesignPolicy policy = {policy::Ewoc{0.25}, false, {}};
    std::string policy_name = "ewoc";
    std::size_t n = 24;
    std::uint64_t seed = 0;  // particles of importance-sampling lookahead
    GridResolution resolution{128, 128};
};

/// Missing model fields default to the 5-FU setting (doses 140 to 425 mg/m2, target 1/3); a missing seed is drawn and stored.
inline TrialConfig parse_trial_config(const json& j) {
    detail::ObjectReader r(j, "");
    TrialConfig c;
    if (r.has("model")) c.model = parse_model(r.at("model"), "model");
    c.policy = parse_policy(r.at("policy"), "policy", &c.policy_name);
    c.n = r.unsigned_int("n", c.n);
    if (c.n < 1) throw validation_error("n", "must be at least 1");
    if (r.has("seed")) {
        c.seed = r.unsigned_int("seed");
    } else {
        std::random_device rd;
        c.seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    }
    if (r.has("grid")) c.resolution = parse_grid(r.at("grid"), "grid", c.resolution);
    r.finish();
    return c;
}

inline json trial_config_to_json(const TrialConfig& c) {
    return {{"model", model_to_json(c.model)},
            {"policy", policy_to_json(c.policy, c.policy_name)},
            {"n", c.n},
            {"seed", c.seed},
            {"grid", {{"n_rho", c.resolution.n_rho}, {"n_eta", c.resolution.n_eta}}}};
}

/// Posterior construction for one trial configuration. Geometry and particles are built once.
class Recommender {
   public:
    explicit Recommender(const TrialConfig& cfg) : cfg_(cfg) {
        geom_ = GridGeometry::make(cfg.model, cfg.resolution);
        if (const auto* la = std::get_if<policy::Lookahead>(&cfg.policy.rule);
            la && la->engine == policy::Engine::importance) {
            RngStream rng(cfg.seed);
            particles_ = ParticleSet::draw(cfg.model, la->particles, rng);
        }
    }

    GridPosterior posterior(const History& h) const { return GridPosterior::build(geom_, h); }

    DoseDecision decide(const History& h) const {
        const DesignState state = DesignState::from_history(h);
        if (particles_) return dosefind::decide(cfg_.policy, WeightedSample::build(particles_, h), state);
        return dosefind::decide(cfg_.policy, posterior(h), state);
    }

   private:
    TrialConfig cfg_;
    std::shared_ptr<const GridGeometry> geom_;
    std::shared_ptr<const ParticleSet> particles_;
};

/// The library's recommendation for a history, built from scratch.
inline DoseDecision recommend(const TrialConfig& cfg, const History& h) { return Recommender(cfg).decide(h); }

/// omega reported alongside the posterior: the policy's feasibility bound for the next patient.
inline double reporting_omega(const DesignPolicy& pol, std::size_t next_patient) {
    return std::visit(
        [&](const auto& r) -> double {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, policy::Ewoc>) return r.omega;
            else if constexpr (std::is_same_v<T, policy::EwocStar>) return ewoc_star_bound(next_patient, r);
            else if constexpr (std::is_same_v<T, policy::ConstrainedOptimal>) return std::min(r.omega, 0.5);
            else if constexpr (std::is_same_v<T, policy::Lookahead>) {
                if (const auto* e = std::get_if<loss::Ewoc>(&r.h)) return e->omega;
                return 0.25;
            } else return 0.25;
        },
        pol.rule);
}

inline constexpr std::size_t kDensityPoints = 200;

inline json posterior_summary(const GridPosterior& post, double omega) {
    const auto& m = post.eta_marginal();
    const DoseSpace& s = post.space();
    json xs = json::array(), ys = json::array();
    for (std::size_t i = 0; i < kDensityPoints; ++i) {
        const double x = s.x_min + s.width() * static_cast<double>(i) / static_cast<double>(kDensityPoints - 1);
        xs.push_back(x);
        ys.push_back(m.density(x));
    }
    return {{"mean", m.mean()},
            {"sd", std::sqrt(m.variance())},
            {"omega", omega},
            {"quantile", m.quantile(omega)},
            {"interval_90", {m.quantile(0.05), m.quantile(0.95)}},
            {"density", {{"x", xs}, {"y", ys}}}};
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

struct PatientRecord {
    std::size_t patient_index = 0;
    double dose_given = 0.0;
    int outcome = 0;
    double recommended_dose = 0.0;
    std::optional<DoseDecision> next;  // recommendation after this patient (empty once complete)
};

inline json decision_to_json(const DoseDecision& d, std::size_t patient_index, std::optional<Observation> last,
                             bool enforce) {
    const bool flag = !enforce && last && coherence_violation(last->dose, last->outcome, d.dose);
    return {{"patient_index", patient_index},
            {"dose", d.dose},
            {"unrestricted_dose", d.unrestricted_dose},
            {"coherence_adjusted", d.coherence_adjusted},
            {"coherence_flag", flag},
            {"infeasible", d.infeasible},
            {"degenerate_sample", d.degenerate_sample}};
}

/// Immutable view of one trial.
struct TrialSnapshot {
    std::string id;
    TrialConfig config;
    std::vector<PatientRecord> patients;
    std::optional<DoseDecision> recommendation;  // first recommendation when no patients yet
    std::string created_at, updated_at;
    json state;  // rendered GET /trials/{id} body

    bool complete() const noexcept { return patients.size() >= config.n; }
    History history() const {
        History h;
        for (const auto& p : patients) h.push_back({p.dose_given, p.outcome});
        return h;
    }
};

class TrialService {
   public:
    /// data_dir empty: in-memory only.
    explicit TrialService(std::string data_dir = "") : dir_(std::move(data_dir)) {
        if (!dir_.empty()) {
            std::filesystem::create_directories(dir_);
            load_all();
        }
    }

    json create_trial(const json& body) {
        TrialConfig cfg = parse_trial_config(body);
        auto entry = std::make_shared<Entry>(cfg);
        std::string id;
        {
            std::unique_lock lock(map_mu_);
            do id = new_id();
            while (trials_.count(id));
            trials_[id] = entry;
        }
        std::lock_guard lock(entry->mu);
        const std::string ts = utc_timestamp();
        json event = {{"seq", 1},
                      {"event", "trial_created"},
                      {"timestamp", ts},
                      {"payload", {{"id", id}, {"config", trial_config_to_json(cfg)}}}};
        append(id, event);
        auto snap = std::make_shared<TrialSnapshot>();
        snap->id = id;
        snap->config = cfg;
        snap->created_at = snap->updated_at = ts;
        snap->recommendation = entry->recommender.decide({});
        render(*snap, *entry);
        entry->publish(snap);
        entry->seq = 1;
        return snap->state;
    }

    json get_state(const std::string& id) const { return snapshot(id)->state; }

    json get_recommendation(const std::string& id) const {
        const auto s = snapshot(id);
        return {{"trial_id", id}, {"status", s->state["status"]}, {"recommendation", s->state["recommendation"]}};
    }

    std::shared_ptr<const TrialSnapshot> snapshot(const std::string& id) const { return find(id)->load(); }

    json record_outcome(const std::string& id, const json& body) {
        detail::ObjectReader r(body, "");
        const std::size_t index = r.unsigned_int("patient_index");
        const double dose = r.number("dose_given");
        const std::uint64_t y = r.unsigned_int("outcome");
        r.finish();
        if (y > 1) throw validation_error("outcome", "outcome must be 0 or 1");
        const int outcome = static_cast<int>(y);

        auto entry = find(id);
        std::lock_guard lock(entry->mu);
        auto cur = entry->load();
        if (index >= 1 && index <= cur->patients.size()) {
            const auto& p = cur->patients[index - 1];
            if (p.dose_given == dose && p.outcome == outcome) return outcome_response(*cur, index);
            throw conflict_error("patient " + std::to_string(index) + " already recorded with a different payload");
        }
        if (cur->complete()) throw conflict_error("trial is complete");
        if (index != cur->patients.size() + 1)
            throw conflict_error("expected patient_index " + std::to_string(cur->patients.size() + 1) + ", got " +
                                 std::to_string(index));
        if (!std::isfinite(dose) || !cur->config.model.space.contains(dose))
            throw validation_error("dose_given", "dose outside the dose space");

        auto next = std::make_shared<TrialSnapshot>(*cur);
        PatientRecord rec;
        rec.patient_index = index;
        rec.dose_given = dose;
        rec.outcome = outcome;
        rec.recommended_dose = cur->recommendation ? cur->recommendation->dose : dose;
        next->patients.push_back(rec);
        if (!next->complete())
            next->patients.back().next = entry->recommender.decide(next->history());
        next->recommendation = next->patients.back().next;
        next->updated_at = utc_timestamp();

        json payload = {{"patient_index", index},
                        {"dose_given", dose},
                        {"outcome", outcome},
                        {"recommended_dose", rec.recommended_dose},
                        {"next_recommendation",
                         next->recommendation ? json(next->recommendation->dose) : json(nullptr)}};
        append(id, {{"seq", entry->seq + 1},
                    {"event", "outcome_recorded"},
                    {"timestamp", next->updated_at},
                    {"payload", payload}});
        ++entry->seq;
        render(*next, *entry);
        entry->publish(next);
        return outcome_response(*next, index);
    }

    std::size_t trial_count() const {
        std::shared_lock lock(map_mu_);
        return trials_.size();
    }

    std::vector<std::string> trial_ids() const {
        std::shared_lock lock(map_mu_);
        std::vector<std::string> ids;
        for (const auto& [id, e] : trials_) ids.push_back(id);
        return ids;
    }

    /// Path of a trial's event log ("" when running in memory).
    std::string log_path(const std::string& id) const { return dir_.empty() ? "" : dir_ + "/" + id + ".jsonl"; }

    /// Replays an event log from scratch and checks every logged recommendation
    /// against the recomputed one. Returns the rebuilt state.
    static json replay(const std::vector<json>& events, bool verify = true) {
        TrialService tmp;
        const std::string id = tmp.apply_events(events, verify);
        return tmp.get_state(id);
    }

    static std::vector<json> read_log(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw not_found_error("cannot open event log " + path);
        std::vector<json> events;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                events.push_back(json::parse(line));
            } catch (const json::parse_error&) {
                if (in.peek() == EOF) break;  // torn final write
                throw error("corrupt event log " + path);
            }
        }
        return events;
    }

   private:
    struct Entry {
        explicit Entry(const TrialConfig& cfg) : recommender(cfg) {}
        std::mutex mu;
        Recommender recommender;
        std::shared_ptr<const TrialSnapshot> snap;
        std::uint64_t seq = 0;

        std::shared_ptr<const TrialSnapshot> load() const { return std::atomic_load(&snap); }
        void publish(std::shared_ptr<const TrialSnapshot> s) { std::atomic_store(&snap, std::move(s)); }
    };

    std::shared_ptr<Entry> find(const std::string& id) const {
        std::shared_lock lock(map_mu_);
        const auto it = trials_.find(id);
        if (it == trials_.end()) throw not_found_error("unknown trial '" + id + "'");
        return it->second;
    }

    static std::string new_id() {
        static thread_local std::mt19937_64 gen{std::random_device{}()};
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(gen()));
        return buf;
    }

    void append(const std::string& id, const json& event) {
        if (dir_.empty()) return;
        const std::string line = event.dump() + "\n";
        const std::string path = log_path(id);
        const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
        if (fd < 0) throw error("cannot open event log " + path);
        const ssize_t w = ::write(fd, line.data(), line.size());
        const int synced = ::fsync(fd);
        ::close(fd);
        if (w != static_cast<ssize_t>(line.size()) || synced != 0) throw error("failed to append to event log " + path);
    }

    void render(TrialSnapshot& s, const Entry& e) const {
        const History h = s.history();
        const GridPosterior post = e.recommender.posterior(h);
        const auto& pol = s.config.policy;
        json patients = json::array();
        int dlts = 0;
        for (const auto& p : s.patients) {
            dlts += p.outcome;
            patients.push_back({{"patient_index", p.patient_index},
                                {"dose_given", p.dose_given},
                                {"outcome", p.outcome},
                                {"recommended_dose", p.recommended_dose},
                                {"override", p.dose_given != p.recommended_dose}});
        }
        std::optional<Observation> last;
        if (!h.empty()) last = h.back();
        json st;
        st["id"] = s.id;
        st["status"] = s.complete() ? "complete" : "active";
        st["config"] = trial_config_to_json(s.config);
        st["patients_treated"] = s.patients.size();
        st["n"] = s.config.n;
        st["history"] = patients;
        st["dlt_count"] = dlts;
        st["dlt_rate"] = s.patients.empty() ? 0.0 : static_cast<double>(dlts) / static_cast<double>(s.patients.size());
        st["target_p"] = s.config.model.p;
        st["recommendation"] = s.recommendation
                                   ? decision_to_json(*s.recommendation, s.patients.size() + 1, last, pol.enforce_coherence)
                                   : json(nullptr);
        st["posterior"] = posterior_summary(post, reporting_omega(pol, s.patients.size() + 1));
        st["eta_hat"] = s.complete() ? json(post.eta_marginal().mean()) : json(nullptr);
        st["created_at"] = s.created_at;
        st["updated_at"] = s.updated_at;
        s.state = std::move(st);
    }

    json outcome_response(const TrialSnapshot& s, std::size_t index) const {
        const auto& p = s.patients[index - 1];
        const bool complete_after = index >= s.config.n;
        return {{"trial_id", s.id},
                {"patient_index", index},
                {"dose_given", p.dose_given},
                {"outcome", p.outcome},
                {"override", p.dose_given != p.recommended_dose},
                {"status", complete_after ? "complete" : "active"},
                {"recommendation", p.next ? decision_to_json(*p.next, index + 1, Observation{p.dose_given, p.outcome},
                                                             s.config.policy.enforce_coherence)
                                          : json(nullptr)}};
    }

    /// Folds a full event log into this service (without re-appending). Returns the trial id.
    std::string apply_events(const std::vector<json>& events, bool verify) {
        if (events.empty() || events[0].value("event", "") != "trial_created")
            throw error("event log must start with trial_created");
        const json& p0 = events[0].at("payload");
        const std::string id = p0.at("id").get<std::string>();
        const TrialConfig cfg = parse_trial_config(p0.at("config"));
        auto entry = std::make_shared<Entry>(cfg);
        auto snap = std::make_shared<TrialSnapshot>();
        snap->id = id;
        snap->config = cfg;
        snap->created_at = snap->updated_at = events[0].value("timestamp", "");
        snap->recommendation = entry->recommender.decide({});
        for (std::size_t k = 1; k < events.size(); ++k) {
            const json& ev = events[k];
            if (ev.value("event", "") != "outcome_recorded") throw error("unknown event in log of trial " + id);
            const json& p = ev.at("payload");
            PatientRecord rec;
            rec.patient_index = p.at("patient_index").get<std::size_t>();
            rec.dose_given = p.at("dose_given").get<double>();
            rec.outcome = p.at("outcome").get<int>();
            rec.recommended_dose = p.at("recommended_dose").get<double>();
            if (rec.patient_index != snap->patients.size() + 1) throw error("out-of-order event in log of trial " + id);
            if (verify && snap->recommendation && snap->recommendation->dose != rec.recommended_dose)
                throw error("replay diverged at patient " + std::to_string(rec.patient_index) + " of trial " + id);
            snap->patients.push_back(rec);
            if (!snap->complete()) snap->patients.back().next = entry->recommender.decide(snap->history());
            snap->recommendation = snap->patients.back().next;
            if (verify) {
                const json& logged = p.at("next_recommendation");
                const bool match = snap->recommendation ? (logged.is_number() && logged.get<double>() == snap->recommendation->dose)
                                                        : logged.is_null();
                if (!match)
                    throw error("replay diverged after patient " + std::to_string(rec.patient_index) + " of trial " + id);
            }
            snap->updated_at = ev.value("timestamp", snap->updated_at);
        }
        entry->seq = events.size();
        render(*snap, *entry);
        entry->publish(snap);
        std::unique_lock lock(map_mu_);
        trials_[id] = entry;
        return id;
    }

    void load_all() {
        for (const auto& f : std::filesystem::directory_iterator(dir_)) {
            if (f.path().extension() != ".jsonl") continue;
            apply_events(read_log(f.path().string()), true);
        }
    }

    std::string dir_;
    mutable std::shared_mutex map_mu_;
    std::map<std::string, std::shared_ptr<Entry>> trials_;
};

}  // namespace dosefind
