#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "ttwin/model.hpp"
#include "ttwin/sample.hpp"
#include "ttwin/stats.hpp"
#include "ttwin/timeline.hpp"
#include "ttwin/vocab.hpp"

namespace ttwin {

// Prompt edit applied before simulation: shift the age anchor or add a fixed
// amount to every recorded value of one lab code. Identity = no change.
struct Modification {
    enum class Kind { Identity, AgeShift, LabDelta };
    Kind kind = Kind::Identity;
    double years = 0;       // AgeShift
    std::string lab_code;   // LabDelta
    double amount = 0;      // LabDelta, raw units

    static Modification identity() { return {}; }
    static Modification age_shift(double years);
    static Modification lab_delta(std::string code, double amount);

    std::string id() const;  // e.g. "actual", "age+5", "CRP+50"

    nlohmann::json to_json() const;
    static Modification from_json(const nlohmann::json& j);
};

PatientTimeline apply_modification(const PatientTimeline& prompt, const Modification& mod,
                                   const Vocabulary& vocab);

enum class EventKind { Death = 0, Drug = 1, Stay = 2 };
inline constexpr std::array<const char*, 3> kEventNames = {"death", "drug", "stay"};
bool event_fired(const EventFlags& f, EventKind e);

struct EventProbability {
    std::string admission_id;
    int n_e = 0;
    int S = 0;
    double p_e = 0;
};

// One Monte Carlo rollout keyed by its derived seed; returns which events
// fired within the horizon.
using RolloutFn = std::function<EventFlags(int rollout_index, uint64_t seed)>;

EventProbability estimate_event_probability(const RolloutFn& rollout, int S, uint64_t master_seed,
                                            const std::string& admission_id,
                                            const std::string& modification_id,
                                            const std::function<bool(const EventFlags&)>& detector);

struct CohortRates {
    int N_p = 0;
    int E_r = 0;
    double R_r = 0;
    double R_s = 0;
};

CohortRates cohort_rates(std::span<const int> real_indicators, std::span<const double> p_e);

// Batched lockstep rollouts: S lanes share one prompt prefill, then decode
// in parallel against private caches. Returns per-event fire counts.
struct RolloutCounts {
    int S = 0;
    std::array<int, 3> n_e{};
    int64_t steps_generated = 0;
};

RolloutCounts run_rollouts(const Transformer& model, const Vocabulary& vocab,
                           const PatientTimeline& prompt, const SamplerConfig& base, int S,
                           int first_index, uint64_t master_seed, const std::string& admission_id,
                           const std::string& modification_id, const std::string& target_drug);

struct ExperimentConfig {
    int S = 256;
    int64_t horizon_minutes = 7 * kMinutesPerDay;
    int workers = 1;
    uint64_t seed = 0;
    std::string target_drug;
    double temperature = 1.0;
    int max_entries = 4096;
    int bootstrap_iters = 1000;
    double ci_level = 0.95;
    int rollout_block = 64;       // lanes decoded in lockstep per job
    bool pooled_binary = false;   // Welch over pooled 0/1 rollout outcomes
                                  // instead of per-admission probabilities

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
};

// One admission of the experiment cohort: the (already truncated, canonical)
// prompt, the clock anchor at its end, and the real outcome flags.
struct CohortAdmission {
    std::string admission_id;
    PatientTimeline prompt;
    SimClock clock_at_prompt_end;
    EventFlags real;
};

// Builds a prompt by cutting a full timeline after the first completed lab
// panel of the admission; the clock anchor is the admission time for
// AgeShift/identity ladders or the first matching lab time for LabDelta.
CohortAdmission make_cohort_admission(const PatientTimeline& full, const std::string& anchor_lab,
                                      const std::string& target_drug, int64_t horizon_minutes);

struct ConditionStats {
    int N_p = 0;
    double R_r = 0;
    double R_s = 0;
    double ci_lo = 0;
    double ci_hi = 0;
    double t = 0;
    double df = 0;
    double p_value = 1;
    bool degenerate = false;
};

struct ExperimentReport {
    std::vector<std::string> modification_ids;  // [0] is always "actual"
    // per modification: admission_id -> p_e per event
    std::map<std::string, std::map<std::string, std::array<double, 3>>> p_e;
    // per modification x event
    std::map<std::string, std::array<ConditionStats, 3>> stats;
    double sims_per_second = 0;  // not serialized into report.json

    nlohmann::json to_json() const;  // deterministic; excludes timing
    static ExperimentReport from_json(const nlohmann::json& j);
    std::string summary_csv() const;
};

ExperimentReport run_experiment(const Transformer& model, const Vocabulary& vocab,
                                std::span<const CohortAdmission> cohort,
                                std::span<const Modification> ladder,
                                const ExperimentConfig& cfg);

}  // namespace ttwin
