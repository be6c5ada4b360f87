#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "dosefind/config.hpp"

using namespace dosefind;

namespace {

json load(const std::string& name) {
    std::ifstream in(std::string(DOSEFIND_SOURCE_DIR) + "/configs/" + name);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_json_text(ss.str(), name);
}

json minimal() {
    return json::parse(R"({
        "model": {"x_min": 140, "x_max": 425, "p": "1/3"},
        "policies": [{"rule": "ewoc", "omega": 0.25}],
        "scenarios": [{"name": "s", "truth": {"kind": "bayesian"}}]
    })");
}

std::string field_of(const json& j) {
    try {
        parse_study_config(j);
    } catch (const validation_error& e) {
        return e.field();
    }
    return "<accepted>";
}

}  // namespace

TEST(Config, BundledConfigsParse) {
    const StudyConfig t = parse_study_config(load("bayes.json"));
    ASSERT_EQ(t.spec.policies.size(), 5u);
    EXPECT_EQ(t.spec.policies[0].name, "EWOC*");
    EXPECT_EQ(policy_kind(t.spec.policies[1].policy), "ivoc");
    EXPECT_EQ(t.spec.policies[1].policy.search.stride, 10u);
    EXPECT_DOUBLE_EQ(t.spec.model.p, 1.0 / 3.0);
    EXPECT_EQ(t.spec.scenarios[0].replications, 2000u);
    EXPECT_FALSE(t.spec.scenarios[0].fixed.has_value());
    EXPECT_DOUBLE_EQ(std::get<policy::Lookahead>(t.spec.policies[4].policy.rule).lambda, 0.4);

    const StudyConfig f = parse_study_config(load("frequentist.json"));
    ASSERT_EQ(f.spec.scenarios.size(), 3u);
    EXPECT_DOUBLE_EQ(f.spec.scenarios[0].fixed->eta, 403.9);
    EXPECT_NO_THROW(parse_study_config(load("smoke.json")));
}

TEST(Config, DefaultsWhenSectionsAreOmitted) {
    const StudyConfig c = parse_study_config(minimal());
    EXPECT_EQ(c.spec.scenarios[0].n, 24u);
    EXPECT_EQ(c.spec.resolution.n_rho, 64u);
    EXPECT_EQ(c.spec.policies[0].name, "ewoc");
    EXPECT_FALSE(c.spec.policies[0].policy.enforce_coherence);
}

TEST(Config, UnknownKeysAreRejectedByPath) {
    json j = minimal();
    j["policies"][0]["omgea"] = 0.2;
    EXPECT_EQ(field_of(j), "policies[0].omgea");
    j = minimal();
    j["extra"] = 1;
    EXPECT_EQ(field_of(j), "extra");
    j = minimal();
    j["scenarios"][0]["truth"]["sigma"] = 1;
    EXPECT_EQ(field_of(j), "scenarios[0].truth.sigma");
}

TEST(Config, InvalidValuesNameTheField) {
    json j = minimal();
    j["policies"][0]["omega"] = 0.7;
    EXPECT_EQ(field_of(j), "policies[0].omega");
    j = minimal();
    j["policies"].push_back({{"rule", "lookahead"}, {"lambda", -1}});
    EXPECT_EQ(field_of(j), "policies[1].lambda");
    j = minimal();
    j["model"]["p"] = 1.5;
    EXPECT_EQ(field_of(j), "model.p");
    j = minimal();
    j["policies"][0]["rule"] = "bogus";
    EXPECT_EQ(field_of(j), "policies[0].rule");
    j = minimal();
    j["scenarios"][0]["truth"] = {{"kind", "fixed"}, {"rho", 0.5}, {"eta", 300}};
    EXPECT_EQ(field_of(j), "scenarios[0].truth.rho");
    j = minimal();
    j["policies"].push_back({{"rule", "ewoc"}, {"omega", 0.3}});
    EXPECT_EQ(field_of(j), "policies[1].name");
    j = minimal();
    j["model"]["x_min"] = "abc";
    EXPECT_EQ(field_of(j), "model.x_min");
    j = minimal();
    j.erase("scenarios");
    EXPECT_EQ(field_of(j), "scenarios");
}

TEST(Config, MalformedJson) {
    try {
        parse_json_text("{\"model\": ", "study.json");
        FAIL();
    } catch (const validation_error& e) {
        EXPECT_EQ(e.field(), "study.json");
    }
}

TEST(Config, FractionStrings) {
    json j = minimal();
    j["policies"][0]["omega"] = "1/4";
    EXPECT_DOUBLE_EQ(std::get<policy::Ewoc>(parse_study_config(j).spec.policies[0].policy.rule).omega, 0.25);
    j["policies"][0]["omega"] = "1/0";
    EXPECT_EQ(field_of(j), "policies[0].omega");
}

TEST(Config, RoundTrip) {
    const StudyConfig a = parse_study_config(load("bayes.json"));
    const json ja = study_config_to_json(a);
    const StudyConfig b = parse_study_config(ja);
    EXPECT_EQ(study_config_to_json(b), ja);
    EXPECT_EQ(b.spec.policies.size(), a.spec.policies.size());
    EXPECT_EQ(b.output_dir, a.output_dir);

    const StudyConfig f = parse_study_config(load("frequentist.json"));
    EXPECT_EQ(study_config_to_json(parse_study_config(study_config_to_json(f))), study_config_to_json(f));
}

TEST(Config, PolicyRoundTripCoversEveryRule) {
    const json policies = json::parse(R"([
        {"rule": "crm", "enforce_coherence": true},
        {"rule": "ewoc", "omega": 0.2},
        {"rule": "ewoc_star", "omega_start": 0.2, "omega_end": 0.4, "n": 30},
        {"rule": "ivoc", "gamma": 0.3, "search": {"grid_points": 286, "stride": 5}},
        {"rule": "constrained_optimal", "criterion": "c", "c": [1, 0], "q": 0.4, "omega": 0.6, "initial_k": 3},
        {"rule": "lookahead", "h": {"loss": "inverted", "gamma": 0.25}, "lambda": 0.2, "engine": "importance", "particles": 5000}
    ])");
    for (std::size_t i = 0; i < policies.size(); ++i) {
        std::string name;
        const DesignPolicy p = parse_policy(policies[i], "p", &name);
        const json back = policy_to_json(p, name);
        std::string name2;
        EXPECT_EQ(policy_to_json(parse_policy(back, "p", &name2), name2), back) << i;
    }
}
