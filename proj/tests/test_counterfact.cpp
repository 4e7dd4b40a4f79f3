#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "ttwin/counterfact.hpp"

using namespace ttwin;

namespace {

EventRecord ev(const std::string& t, const std::string& kind, const std::string& code = "",
               std::optional<double> num = {}, std::optional<std::string> str = {},
               std::optional<std::string> outcome = {}) {
    return {parse_minute(t), kind, code, num, str, outcome};
}

std::vector<PatientTimeline> fit_corpus() {
    // enough distinct CRP values to fit a non-degenerate scaler
    std::vector<PatientTimeline> c;
    for (int i = 0; i < 10; ++i) {
        std::string day = std::to_string(10 + i);
        std::vector<EventRecord> e = {
            ev("2023-01-" + day + "T07:00", "adm"),
            ev("2023-01-" + day + "T07:00", "dx", "D1"),
            ev("2023-01-" + day + "T08:00", "lab", "CRP", 10.0 * (i + 1)),
            ev("2023-01-" + day + "T09:00", "rx", i % 2 ? "DRUG" : "M1"),
            ev("2023-01-" + day + "T18:00", "dsc"),
            ev("2023-01-" + day + "T18:00", "outcome", "", {}, {},
               std::string(i % 3 ? "alive" : "deceased"))};
        c.push_back(canonicalize("p" + std::to_string(i), i % 2 ? "F" : "M",
                                 parse_minute("1953-04-11T06:00"), e));
    }
    return c;
}

}  // namespace

TEST_CASE("modification ids and JSON round trip") {
    CHECK(Modification::identity().id() == "actual");
    CHECK(Modification::age_shift(5).id() == "age+5");
    CHECK(Modification::age_shift(-10).id() == "age-10");
    CHECK(Modification::lab_delta("CRP", 50).id() == "CRP+50");
    CHECK(Modification::lab_delta("CRP", -25).id() == "CRP-25");
    for (const Modification& m : {Modification::identity(), Modification::age_shift(15),
                                  Modification::lab_delta("CRP", 100)}) {
        Modification back = Modification::from_json(m.to_json());
        CHECK(back.id() == m.id());
    }
}

TEST_CASE("identity modification changes nothing") {
    auto corpus = fit_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    PatientTimeline out = apply_modification(corpus[0], Modification::identity(), v);
    REQUIRE(out.entries.size() == corpus[0].entries.size());
    for (size_t i = 0; i < out.entries.size(); ++i)
        CHECK(v.id_for_entry(out.entries[i]) == v.id_for_entry(corpus[0].entries[i]));
}

TEST_CASE("age shift moves only the age anchor") {
    auto corpus = fit_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    const PatientTimeline& base = corpus[0];  // ~69y9m at admission
    PatientTimeline older = apply_modification(base, Modification::age_shift(15), v);
    REQUIRE(older.entries.size() == base.entries.size());
    const AgeVector& a0 = base.entries[1].age;
    const AgeVector& a1 = older.entries[1].age;
    double y0 = a0.components[0] * kAgeNormalizers[0];
    double y1 = a1.components[0] * kAgeNormalizers[0];
    CHECK(y1 == doctest::Approx(y0 + 15).epsilon(1e-9));
    // sub-year components unchanged by a whole-year shift
    for (int k = 1; k < 5; ++k)
        CHECK(a1.components[k] == doctest::Approx(a0.components[k]).epsilon(1e-9));
    for (size_t i = 0; i < base.entries.size(); ++i)
        if (i != 1) CHECK(v.id_for_entry(older.entries[i]) == v.id_for_entry(base.entries[i]));
    // shifting below zero age is rejected
    CHECK_THROWS(apply_modification(base, Modification::age_shift(-200), v));
}

TEST_CASE("lab delta rebins every matching value") {
    auto corpus = fit_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    const PatientTimeline& base = corpus[2];  // CRP = 30
    PatientTimeline shifted = apply_modification(base, Modification::lab_delta("CRP", 50), v);
    const PercentileScaler& s = v.scaler("CRP");
    bool saw = false;
    for (size_t i = 0; i < base.entries.size(); ++i) {
        const TimelineEntry& b = base.entries[i];
        const TimelineEntry& m = shifted.entries[i];
        if (b.kind == EntryKind::LabValueBinned && b.code == "CRP") {
            saw = true;
            CHECK(m.raw_value == doctest::Approx(b.raw_value + 50));
            CHECK(s.bin(m.raw_value) == s.bin(80.0));  // independent rebin oracle
        } else {
            CHECK(v.id_for_entry(m) == v.id_for_entry(b));
        }
    }
    CHECK(saw);
    CHECK_THROWS(apply_modification(base, Modification::lab_delta("UNSEEN", 50), v));
}

TEST_CASE("event detection from flags") {
    EventFlags f;
    f.died_in_hospital = true;
    CHECK(event_fired(f, EventKind::Death));
    CHECK_FALSE(event_fired(f, EventKind::Drug));
    CHECK_FALSE(event_fired(f, EventKind::Stay));
    f = EventFlags{};
    f.target_drug_prescribed = true;
    CHECK(event_fired(f, EventKind::Drug));
    f = EventFlags{};
    f.stay_exceeded_horizon = true;
    CHECK(event_fired(f, EventKind::Stay));
}

TEST_CASE("event probability estimation over stub rollouts") {
    auto detector = [](const EventFlags& f) { return f.died_in_hospital; };
    RolloutFn never = [](int, uint64_t) { return EventFlags{}; };
    EventProbability p0 = estimate_event_probability(never, 64, 1, "a1", "actual", detector);
    CHECK(p0.n_e == 0);
    CHECK(p0.S == 64);
    CHECK(p0.p_e == 0.0);

    RolloutFn always = [](int, uint64_t) {
        EventFlags f;
        f.died_in_hospital = true;
        return f;
    };
    EventProbability p1 = estimate_event_probability(always, 64, 1, "a1", "actual", detector);
    CHECK(p1.p_e == 1.0);

    // seed-driven Bernoulli(0.3): estimate within 3 sigma at S=10000
    RolloutFn bern = [](int, uint64_t seed) {
        Rng rng(seed);
        EventFlags f;
        f.died_in_hospital = rng.uniform() < 0.3;
        return f;
    };
    EventProbability pb = estimate_event_probability(bern, 10000, 7, "a1", "actual", detector);
    CHECK(std::abs(pb.p_e - 0.3) < 3 * std::sqrt(0.3 * 0.7 / 10000.0));

    // per-rollout seeds are distinct and depend on the rollout index
    std::set<uint64_t> seeds;
    RolloutFn capture = [&](int, uint64_t seed) {
        seeds.insert(seed);
        return EventFlags{};
    };
    estimate_event_probability(capture, 32, 7, "a1", "actual", detector);
    CHECK(seeds.size() == 32);
    // a different admission id gives disjoint seed streams
    std::set<uint64_t> other;
    RolloutFn capture2 = [&](int, uint64_t seed) {
        other.insert(seed);
        return EventFlags{};
    };
    estimate_event_probability(capture2, 32, 7, "a2", "actual", detector);
    for (uint64_t s : other) CHECK(seeds.count(s) == 0);
}

TEST_CASE("cohort rate arithmetic") {
    std::vector<int> real = {1, 0, 0, 1};
    std::vector<double> p = {0.5, 0.25, 0.0, 1.0};
    CohortRates r = cohort_rates(real, p);
    CHECK(r.N_p == 4);
    CHECK(r.E_r == 2);
    CHECK(r.R_r == doctest::Approx(0.5));
    CHECK(r.R_s == doctest::Approx(0.4375));
    // simulated rate is invariant under cohort permutation
    std::vector<int> real2 = {0, 1, 1, 0};
    std::vector<double> p2 = {0.25, 1.0, 0.5, 0.0};
    CohortRates r2 = cohort_rates(real2, p2);
    CHECK(r2.R_s == doctest::Approx(r.R_s));
    CHECK(r2.R_r == doctest::Approx(r.R_r));
}

TEST_CASE("cohort prompt construction") {
    auto corpus = fit_corpus();
    const int64_t horizon = 7 * kMinutesPerDay;
    CohortAdmission adm = make_cohort_admission(corpus[1], "CRP", "DRUG", horizon);
    CHECK(adm.admission_id == corpus[1].patient_id);
    // cut right after the first post-admission lab panel
    CHECK(adm.prompt.entries.back().kind == EntryKind::LabValueBinned);
    CHECK(adm.prompt.entries.size() < corpus[1].entries.size());
    // the anchor sits at the CRP measurement: one hour after admission
    CHECK(adm.clock_at_prompt_end.elapsed == 0);
    CHECK(adm.clock_at_prompt_end.time_of_day == 8 * 60);
    // real flags come from the full timeline (patient 1 got DRUG, survived,
    // went home the same day)
    CHECK(adm.real.target_drug_prescribed);
    CHECK_FALSE(adm.real.died_in_hospital);
    CHECK_FALSE(adm.real.stay_exceeded_horizon);
}

TEST_CASE("rollout batching is deterministic and respects the lane count") {
    auto corpus = fit_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    auto model = Transformer::init_params(ModelConfig::tiny(v.size()), 23);
    CohortAdmission adm = make_cohort_admission(corpus[0], "CRP", "DRUG", 7 * kMinutesPerDay);
    SamplerConfig base;
    base.clock_at_prompt_end = adm.clock_at_prompt_end;
    base.max_entries = 64;
    RolloutCounts a = run_rollouts(model, v, adm.prompt, base, 16, 0, 99, adm.admission_id,
                                   "actual", "DRUG");
    RolloutCounts b = run_rollouts(model, v, adm.prompt, base, 16, 0, 99, adm.admission_id,
                                   "actual", "DRUG");
    CHECK(a.S == 16);
    CHECK(a.n_e == b.n_e);
    CHECK(a.steps_generated == b.steps_generated);
    for (int e = 0; e < 3; ++e) {
        CHECK(a.n_e[e] >= 0);
        CHECK(a.n_e[e] <= 16);
    }
    // splitting the same rollout indices across two calls changes nothing
    RolloutCounts c1 = run_rollouts(model, v, adm.prompt, base, 8, 0, 99, adm.admission_id,
                                    "actual", "DRUG");
    RolloutCounts c2 = run_rollouts(model, v, adm.prompt, base, 8, 8, 99, adm.admission_id,
                                    "actual", "DRUG");
    for (int e = 0; e < 3; ++e) CHECK(c1.n_e[e] + c2.n_e[e] == a.n_e[e]);
}

TEST_CASE("experiment: identity-only ladder compares a condition with itself") {
    auto corpus = fit_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    auto model = Transformer::init_params(ModelConfig::tiny(v.size()), 23);
    std::vector<CohortAdmission> cohort;
    for (int i = 0; i < 3; ++i)
        cohort.push_back(make_cohort_admission(corpus[i], "CRP", "DRUG", 7 * kMinutesPerDay));
    ExperimentConfig cfg;
    cfg.S = 8;
    cfg.seed = 3;
    cfg.target_drug = "DRUG";
    cfg.max_entries = 48;
    cfg.bootstrap_iters = 200;
    std::vector<Modification> ladder;  // empty: "actual" is prepended automatically
    ExperimentReport rep = run_experiment(model, v, cohort, ladder, cfg);
    REQUIRE(rep.modification_ids == std::vector<std::string>{"actual"});
    for (int e = 0; e < 3; ++e) {
        const ConditionStats& st = rep.stats.at("actual")[e];
        CHECK(st.N_p == 3);
        CHECK(st.t == 0.0);  // self-comparison
        CHECK(st.p_value == 1.0);
        CHECK(st.ci_lo <= st.R_s + 1e-12);
        CHECK(st.ci_hi >= st.R_s - 1e-12);
    }
    // per-admission probabilities are present for every cohort member
    CHECK(rep.p_e.at("actual").size() == 3);
}

TEST_CASE("worker count does not change the serialized report") {
    auto corpus = fit_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    auto model = Transformer::init_params(ModelConfig::tiny(v.size()), 23);
    std::vector<CohortAdmission> cohort;
    for (int i = 0; i < 4; ++i)
        cohort.push_back(make_cohort_admission(corpus[i], "CRP", "DRUG", 7 * kMinutesPerDay));
    std::vector<Modification> ladder = {Modification::lab_delta("CRP", 40),
                                        Modification::age_shift(10)};
    ExperimentConfig cfg;
    cfg.S = 8;
    cfg.seed = 12;
    cfg.target_drug = "DRUG";
    cfg.max_entries = 48;
    cfg.bootstrap_iters = 100;
    cfg.rollout_block = 4;  // force multiple jobs per condition
    cfg.workers = 1;
    std::string one = run_experiment(model, v, cohort, ladder, cfg).to_json().dump();
    cfg.workers = 4;
    std::string four = run_experiment(model, v, cohort, ladder, cfg).to_json().dump();
    cfg.workers = 8;
    std::string eight = run_experiment(model, v, cohort, ladder, cfg).to_json().dump();
    CHECK(one == four);
    CHECK(one == eight);

    ExperimentReport back = ExperimentReport::from_json(nlohmann::json::parse(one));
    CHECK(back.to_json().dump() == one);
    CHECK(back.modification_ids.front() == "actual");
    CHECK(back.modification_ids.size() == 3);

    std::string csv = back.summary_csv();
    CHECK(csv.rfind("modification,event,N_p,R_r,R_s,ci_lo,ci_hi,t,df,p_value", 0) == 0);
    // one row per modification x event plus the header
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 3);
}

TEST_CASE("duplicate ladder entries are rejected") {
    auto corpus = fit_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    auto model = Transformer::init_params(ModelConfig::tiny(v.size()), 23);
    std::vector<CohortAdmission> cohort = {
        make_cohort_admission(corpus[0], "CRP", "DRUG", 7 * kMinutesPerDay)};
    std::vector<Modification> ladder = {Modification::age_shift(5), Modification::age_shift(5)};
    ExperimentConfig cfg;
    cfg.S = 4;
    cfg.target_drug = "DRUG";
    CHECK_THROWS(run_experiment(model, v, cohort, ladder, cfg));
}
