#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "ttwin/counterfact.hpp"
#include "ttwin/timeline.hpp"

namespace ttwin {

// Synthetic inpatient world with programmed causal structure: two latent
// markers M (inflammation-like) and R (renal-like) drive daily logistic
// hazards. Dying and drug prescription increase with M; drug decreases and
// death increases with R; discharge decreases with M. Serves as corpus
// generator and as ground-truth oracle for counterfactual rates.
struct WorldConfig {
    // population draws; age is a truncated normal
    double age_mean = 55, age_sd = 15, age_min = 18, age_max = 95;
    // Markers are two-component right-skewed mixtures: a large baseline
    // population plus a severe subgroup with elevated values, as in real
    // inpatient cohorts. The severe mass keeps the upper percentile range
    // populated, so counterfactual shifts of a few sigma stay inside the
    // value region a model can actually learn from.
    double m_base_mean = 85, m_base_sd = 30, m_min = 1;
    double m_sev_frac = 0.10, m_sev_mean = 250, m_sev_sd = 60;
    double r_base_mean = 1.0, r_base_sd = 0.25, r_min = 0.1;
    double r_sev_frac = 0.10, r_sev_mean = 3.0, r_sev_sd = 0.8;
    // hazard centering/scale; also the sigma unit for shift ladders.
    // Chosen to match the mixture's overall mean and standard deviation.
    double m_mean = 100, m_sd = 60;
    double r_mean = 1.2, r_sd = 0.7;
    // daily latent dynamics: mean reversion plus process noise
    double kappa = 0.05;
    double m_noise = 4.0, r_noise = 0.05;
    // observation noise on lab measurements
    double m_obs_noise = 2.0, r_obs_noise = 0.03;
    double p_lab = 0.9;  // re-measurement probability per day (day 0 always)
    // daily hazards on normalized covariates (x - mean)/sd, clamped to
    // +/- hazard_z_cap: dose-response saturates past the severe range
    double hazard_z_cap = 2.0;
    double death_b0 = -3.4, death_ba = 0.3, death_bm = 0.16, death_br = 0.28;
    double drug_g0 = -2.75, drug_gm = 0.28, drug_gr = 0.40;  // minus gr * r_n
    double dsc_d0 = -2.0, dsc_dm = 0.4;                    // minus dm * m_n
    int max_stay_days = 21;  // forced discharge
    // vocabulary of the world
    std::string lab_m = "M";
    std::string lab_r = "R";
    std::string drug_code = "DRUG";
    std::string dx_code = "DX1";

    nlohmann::json to_json() const;
    static WorldConfig from_json(const nlohmann::json& j);
    static WorldConfig load(const std::string& path);
};

struct LatentPatient {
    std::string sex;
    double age = 0;
    double m = 0;
    double r = 0;
};

// One simulated hospital day; the trace ends on the death/discharge day.
struct DayTrace {
    bool labs = false;
    double m_obs = 0, r_obs = 0;
    bool drug = false;
    bool death = false;
    bool discharge = false;
};

LatentPatient draw_patient(const WorldConfig& cfg, Rng& rng);
std::vector<DayTrace> simulate_stay(const WorldConfig& cfg, const LatentPatient& p, Rng& rng);

// Deterministic per-patient seeds; timelines in canonical form, id order.
std::vector<PatientTimeline> generate_cohort(const WorldConfig& cfg, int n_patients,
                                             uint64_t seed);

struct OracleRate {
    double rate = 0;
    double se = 0;  // Monte Carlo standard error
    int n_mc = 0;
};

// Ground-truth 7-day event rate under a modification, by re-simulating the
// generator with shifted latents.
OracleRate oracle_rate(const WorldConfig& cfg, const Modification& mod, EventKind event, int n_mc,
                       uint64_t seed);

// Ground-truth rate conditioned on a specific generated cohort: replays the
// latent draws of generate_cohort(cfg, n_patients, cohort_seed) and
// re-simulates each patient reps times under the shifted latents. This is the
// admission-matched counterfactual rate, free of cohort sampling offset when
// compared against simulations over that same cohort.
OracleRate oracle_cohort_rate(const WorldConfig& cfg, int n_patients, uint64_t cohort_seed,
                              const Modification& mod, EventKind event, int reps, uint64_t seed);

}  // namespace ttwin
