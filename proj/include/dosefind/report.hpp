#pragma once

// Study output: a text table with policies as columns and metrics as rows,
// one machine-readable record per scenario x policy x metric, and a manifest
// sufficient to rerun the study.

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "simulator.hpp"

namespace dosefind {

inline constexpr const char* kVersion = "0.1.0";

namespace detail {

inline std::string format_number(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::string format_se(double v) {
    char buf[64];
    if (v != 0.0 && std::abs(v) < 1e-3)
        std::snprintf(buf, sizeof buf, "%.1e", v);
    else
        std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

}  // namespace detail

struct MetricFormat {
    const char* label;
    double scale;  // rates are shown in percent
    int digits;
};

inline constexpr MetricFormat kMetricFormats[] = {
    {"Risk1", 1.0, 1}, {"Risk2", 1.0, 3},   {"Bias", 1.0, 2},      {"RMSE", 1.0, 1},
    {"DLT (%)", 100.0, 1}, {"OD (%)", 100.0, 1}, {"OD*", 1.0, 4}, {"ChV (%)", 100.0, 2},
};

inline std::string format_estimate(const Estimate& e, const MetricFormat& f) {
    std::string s = detail::format_number(e.mean * f.scale, f.digits);
    s += " (" + (e.se ? detail::format_se(*e.se * f.scale) : std::string("-")) + ")";
    return s;
}

inline void write_table(std::ostream& os, const std::vector<ScenarioReport>& reports, const StudySpec& spec) {
    for (std::size_t s = 0; s < reports.size(); ++s) {
        const auto& rep = reports[s];
        const auto& sc = spec.scenarios[s];
        os << "Scenario " << rep.scenario;
        if (sc.fixed)
            os << ": rho=" << sc.fixed->rho << ", eta=" << sc.fixed->eta;
        else
            os << ": (rho, eta) ~ prior";
        os << "  [n=" << sc.n << ", replications=" << sc.replications << ", seed=" << sc.seed << "]\n";

        std::vector<std::vector<std::string>> cells;
        std::vector<std::string> header{"Statistic"};
        for (const auto& p : rep.policies) header.push_back(p.policy);
        cells.push_back(header);
        for (std::size_t k = 0; k < 8; ++k) {
            std::vector<std::string> row{kMetricFormats[k].label};
            for (const auto& p : rep.policies) row.push_back(format_estimate(metric(p.metrics, k), kMetricFormats[k]));
            cells.push_back(row);
        }
        std::vector<std::size_t> width(header.size(), 0);
        for (const auto& row : cells)
            for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
        for (std::size_t r = 0; r < cells.size(); ++r) {
            for (std::size_t c = 0; c < cells[r].size(); ++c) {
                const std::string& v = cells[r][c];
                if (c == 0)
                    os << v << std::string(width[c] - v.size(), ' ');
                else
                    os << "  " << std::string(width[c] - v.size(), ' ') << v;
            }
            os << '\n';
            if (r == 0) os << std::string(width.size() * 2 + [&] {
                std::size_t t = 0;
                for (auto w : width) t += w;
                return t;
            }(), '-') << '\n';
        }
        bool any_failed = false;
        for (const auto& p : rep.policies) any_failed |= p.metrics.failures > 0;
        if (any_failed) {
            os << "failed replications:";
            for (const auto& p : rep.policies) os << ' ' << p.policy << '=' << p.metrics.failures;
            os << '\n';
        }
        os << '\n';
    }
}

/// One record per scenario x policy x metric: {scenario, policy, metric, mean, se}.
inline std::vector<json> metric_rows(const std::vector<ScenarioReport>& reports) {
    std::vector<json> rows;
    for (const auto& rep : reports)
        for (const auto& p : rep.policies)
            for (std::size_t k = 0; k < 8; ++k) {
                const Estimate& e = metric(p.metrics, k);
                rows.push_back({{"scenario", rep.scenario},
                                {"policy", p.policy},
                                {"metric", kMetricNames[k]},
                                {"mean", e.mean},
                                {"se", e.se ? json(*e.se) : json(nullptr)}});
            }
    return rows;
}

inline void write_rows(std::ostream& os, const std::vector<ScenarioReport>& reports) {
    for (const auto& row : metric_rows(reports)) os << row.dump() << '\n';
}

struct RunInfo {
    std::string started_at;
    std::string finished_at;
    double seconds = 0.0;
    std::vector<std::string> argv;
};

inline json manifest(const StudyConfig& cfg, const std::vector<ScenarioReport>& reports, const RunInfo& info) {
    json m;
    m["tool"] = "dosefind";
    m["version"] = kVersion;
    m["config"] = study_config_to_json(cfg);
    m["command"] = info.argv;
    m["started_at"] = info.started_at;
    m["finished_at"] = info.finished_at;
    m["seconds"] = info.seconds;
    json timings = json::array();
    for (const auto& rep : reports)
        for (const auto& p : rep.policies)
            timings.push_back({{"scenario", rep.scenario},
                               {"policy", p.policy},
                               {"seconds", p.seconds},
                               {"replications", p.metrics.replications},
                               {"failures", p.metrics.failures}});
    m["timings"] = timings;
    m["outputs"] = {"table.txt", "rows.jsonl", "manifest.json"};
    return m;
}

}  // namespace dosefind
