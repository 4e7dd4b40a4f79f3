#include "ttwin/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>

#include "ttwin/rng.hpp"

namespace ttwin {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double truncated_normal(Rng& rng, double mean, double sd, double lo, double hi) {
    for (int i = 0; i < 1000; ++i) {
        double x = rng.normal(mean, sd);
        if (x >= lo && x <= hi) return x;
    }
    throw std::runtime_error("truncated_normal: rejection failed; bad bounds");
}

// Lab markers are drawn right-skewed (lognormal, matched to the requested
// arithmetic mean and standard deviation, floored at lo), as clinical markers
// are heavy-tailed on the high side. The skew also keeps additive
// counterfactual shifts of a few sigma inside the value range the percentile
// scaler observes, instead of collapsing them into the extreme top bins.
double skewed_marker(Rng& rng, double mean, double sd, double lo) {
    const double cv2 = (sd / mean) * (sd / mean);
    const double sigma2 = std::log1p(cv2);
    const double mu = std::log(mean) - 0.5 * sigma2;
    return std::max(std::exp(rng.normal(mu, std::sqrt(sigma2))), lo);
}

constexpr double kMinutesPerYearAvg = 525960.0;  // 365.25 days

}  // namespace

nlohmann::json WorldConfig::to_json() const {
    return {{"age_mean", age_mean},       {"age_sd", age_sd},
            {"age_min", age_min},         {"age_max", age_max},
            {"m_mean", m_mean},           {"m_sd", m_sd},
            {"m_min", m_min},             {"r_mean", r_mean},
            {"r_sd", r_sd},               {"r_min", r_min},
            {"m_base_mean", m_base_mean}, {"m_base_sd", m_base_sd},
            {"m_sev_frac", m_sev_frac},   {"m_sev_mean", m_sev_mean},
            {"m_sev_sd", m_sev_sd},       {"r_base_mean", r_base_mean},
            {"r_base_sd", r_base_sd},     {"r_sev_frac", r_sev_frac},
            {"r_sev_mean", r_sev_mean},   {"r_sev_sd", r_sev_sd},
            {"kappa", kappa},             {"m_noise", m_noise},
            {"r_noise", r_noise},         {"m_obs_noise", m_obs_noise},
            {"r_obs_noise", r_obs_noise}, {"p_lab", p_lab},
            {"death_b0", death_b0},       {"death_ba", death_ba},
            {"death_bm", death_bm},       {"death_br", death_br},
            {"drug_g0", drug_g0},         {"drug_gm", drug_gm},
            {"drug_gr", drug_gr},         {"dsc_d0", dsc_d0},
            {"dsc_dm", dsc_dm},           {"max_stay_days", max_stay_days},
            {"lab_m", lab_m},             {"lab_r", lab_r},
            {"drug_code", drug_code},     {"dx_code", dx_code}};
}

WorldConfig WorldConfig::from_json(const nlohmann::json& j) {
    WorldConfig c;
    auto num = [&](const char* k, double& v) {
        if (j.contains(k)) v = j.at(k).get<double>();
    };
    auto str = [&](const char* k, std::string& v) {
        if (j.contains(k)) v = j.at(k).get<std::string>();
    };
    num("age_mean", c.age_mean);
    num("age_sd", c.age_sd);
    num("age_min", c.age_min);
    num("age_max", c.age_max);
    num("m_mean", c.m_mean);
    num("m_sd", c.m_sd);
    num("m_min", c.m_min);
    num("r_mean", c.r_mean);
    num("r_sd", c.r_sd);
    num("r_min", c.r_min);
    num("m_base_mean", c.m_base_mean);
    num("m_base_sd", c.m_base_sd);
    num("m_sev_frac", c.m_sev_frac);
    num("m_sev_mean", c.m_sev_mean);
    num("m_sev_sd", c.m_sev_sd);
    num("r_base_mean", c.r_base_mean);
    num("r_base_sd", c.r_base_sd);
    num("r_sev_frac", c.r_sev_frac);
    num("r_sev_mean", c.r_sev_mean);
    num("r_sev_sd", c.r_sev_sd);
    num("kappa", c.kappa);
    num("m_noise", c.m_noise);
    num("r_noise", c.r_noise);
    num("m_obs_noise", c.m_obs_noise);
    num("r_obs_noise", c.r_obs_noise);
    num("p_lab", c.p_lab);
    num("death_b0", c.death_b0);
    num("death_ba", c.death_ba);
    num("death_bm", c.death_bm);
    num("death_br", c.death_br);
    num("drug_g0", c.drug_g0);
    num("drug_gm", c.drug_gm);
    num("drug_gr", c.drug_gr);
    num("dsc_d0", c.dsc_d0);
    num("dsc_dm", c.dsc_dm);
    if (j.contains("max_stay_days")) c.max_stay_days = j.at("max_stay_days").get<int>();
    str("lab_m", c.lab_m);
    str("lab_r", c.lab_r);
    str("drug_code", c.drug_code);
    str("dx_code", c.dx_code);
    return c;
}

WorldConfig WorldConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open world config: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
}

LatentPatient draw_patient(const WorldConfig& cfg, Rng& rng) {
    LatentPatient p;
    p.sex = rng.bernoulli(0.5) ? "F" : "M";
    p.age = truncated_normal(rng, cfg.age_mean, cfg.age_sd, cfg.age_min, cfg.age_max);
    p.m = rng.bernoulli(cfg.m_sev_frac) ? skewed_marker(rng, cfg.m_sev_mean, cfg.m_sev_sd, cfg.m_min)
                                        : skewed_marker(rng, cfg.m_base_mean, cfg.m_base_sd, cfg.m_min);
    p.r = rng.bernoulli(cfg.r_sev_frac) ? skewed_marker(rng, cfg.r_sev_mean, cfg.r_sev_sd, cfg.r_min)
                                        : skewed_marker(rng, cfg.r_base_mean, cfg.r_base_sd, cfg.r_min);
    return p;
}

std::vector<DayTrace> simulate_stay(const WorldConfig& cfg, const LatentPatient& p, Rng& rng) {
    std::vector<DayTrace> trace;
    double m = p.m, r = p.r;
    auto znorm = [&](double x, double mean, double sd) {
        return std::clamp((x - mean) / sd, -cfg.hazard_z_cap, cfg.hazard_z_cap);
    };
    double age_n = znorm(p.age, cfg.age_mean, cfg.age_sd);
    bool drug_given = false;
    for (int day = 0; day <= cfg.max_stay_days; ++day) {
        if (day > 0) {
            m += cfg.kappa * (cfg.m_mean - m) + rng.normal(0, cfg.m_noise);
            r += cfg.kappa * (cfg.r_mean - r) + rng.normal(0, cfg.r_noise);
            m = std::max(m, cfg.m_min);
            r = std::max(r, cfg.r_min);
        }
        double m_n = (m - cfg.m_mean) / cfg.m_sd;
        double r_n = (r - cfg.r_mean) / cfg.r_sd;
        DayTrace t;
        t.labs = day == 0 || rng.bernoulli(cfg.p_lab);
        if (t.labs) {
            t.m_obs = std::max(m + rng.normal(0, cfg.m_obs_noise), cfg.m_min);
            t.r_obs = std::max(r + rng.normal(0, cfg.r_obs_noise), cfg.r_min);
        }
        if (!drug_given &&
            rng.bernoulli(sigmoid(cfg.drug_g0 + cfg.drug_gm * m_n - cfg.drug_gr * r_n))) {
            t.drug = true;
            drug_given = true;
        }
        if (rng.bernoulli(
                sigmoid(cfg.death_b0 + cfg.death_ba * age_n + cfg.death_bm * m_n +
                        cfg.death_br * r_n))) {
            t.death = true;
            trace.push_back(t);
            return trace;
        }
        if (day == cfg.max_stay_days || rng.bernoulli(sigmoid(cfg.dsc_d0 - cfg.dsc_dm * m_n))) {
            t.discharge = true;
            trace.push_back(t);
            return trace;
        }
        trace.push_back(t);
    }
    throw std::runtime_error("simulate_stay: unreachable");
}

std::vector<PatientTimeline> generate_cohort(const WorldConfig& cfg, int n_patients,
                                             uint64_t seed) {
    if (n_patients < 1) throw std::runtime_error("generate_cohort: n_patients must be positive");
    const MinuteStamp year_start = parse_minute("2023-01-01T07:00");
    std::vector<PatientTimeline> out;
    out.reserve(n_patients);
    for (int i = 0; i < n_patients; ++i) {
        Rng rng(derive_seed(seed, "synthworld-patient", static_cast<uint64_t>(i), 0));
        LatentPatient p = draw_patient(cfg, rng);
        MinuteStamp t_adm = year_start + static_cast<int64_t>(rng.below(365)) * kMinutesPerDay;
        MinuteStamp birth = t_adm - static_cast<MinuteStamp>(std::llround(p.age * kMinutesPerYearAvg));
        std::vector<DayTrace> trace = simulate_stay(cfg, p, rng);

        std::vector<EventRecord> events;
        events.push_back({t_adm, "adm", "", {}, {}, {}});
        events.push_back({t_adm, "dx", cfg.dx_code, {}, {}, {}});
        for (size_t day = 0; day < trace.size(); ++day) {
            MinuteStamp t0 = t_adm + static_cast<int64_t>(day) * kMinutesPerDay;
            const DayTrace& t = trace[day];
            if (t.labs) {
                events.push_back({t0 + 60, "lab", cfg.lab_m, t.m_obs, {}, {}});
                events.push_back({t0 + 60, "lab", cfg.lab_r, t.r_obs, {}, {}});
            }
            if (t.drug) events.push_back({t0 + 120, "rx", cfg.drug_code, {}, {}, {}});
            if (t.death) {
                events.push_back({t0 + 300, "dsc", "", {}, {}, {}});
                events.push_back({t0 + 300, "outcome", "", {}, {}, std::string("deceased")});
            } else if (t.discharge) {
                events.push_back({t0 + 660, "dsc", "", {}, {}, {}});
                events.push_back({t0 + 660, "outcome", "", {}, {}, std::string("alive")});
            }
        }
        char pid[16];
        std::snprintf(pid, sizeof(pid), "p%06d", i);
        out.push_back(canonicalize(pid, p.sex, birth, std::move(events)));
    }
    return out;
}

namespace {

void apply_to_latents(const WorldConfig& cfg, const Modification& mod, LatentPatient& p) {
    switch (mod.kind) {
        case Modification::Kind::Identity: break;
        case Modification::Kind::AgeShift: p.age += mod.years; break;
        case Modification::Kind::LabDelta:
            if (mod.lab_code == cfg.lab_m)
                p.m += mod.amount;
            else if (mod.lab_code == cfg.lab_r)
                p.r += mod.amount;
            else
                throw std::runtime_error("oracle: modification not expressible: " + mod.lab_code);
            break;
    }
}

bool trace_hits(std::span<const DayTrace> trace, EventKind event) {
    constexpr int kHorizonDays = 7;
    int last_day = static_cast<int>(trace.size()) - 1;
    switch (event) {
        case EventKind::Death:
            return trace.back().death && last_day < kHorizonDays;
        case EventKind::Drug:
            for (int d = 0; d < static_cast<int>(trace.size()) && d < kHorizonDays; ++d)
                if (trace[d].drug) return true;
            return false;
        case EventKind::Stay:
            // still admitted when the horizon lapses
            return last_day >= kHorizonDays;
    }
    return false;
}

}  // namespace

OracleRate oracle_rate(const WorldConfig& cfg, const Modification& mod, EventKind event, int n_mc,
                       uint64_t seed) {
    if (n_mc < 1) throw std::runtime_error("oracle_rate: n_mc must be positive");
    int64_t fired = 0;
    for (int i = 0; i < n_mc; ++i) {
        Rng rng(derive_seed(seed, "synthworld-oracle", static_cast<uint64_t>(i), 0));
        LatentPatient p = draw_patient(cfg, rng);
        apply_to_latents(cfg, mod, p);
        std::vector<DayTrace> trace = simulate_stay(cfg, p, rng);
        if (trace_hits(trace, event)) ++fired;
    }
    OracleRate r;
    r.n_mc = n_mc;
    r.rate = static_cast<double>(fired) / n_mc;
    r.se = std::sqrt(r.rate * (1.0 - r.rate) / n_mc);
    return r;
}

OracleRate oracle_cohort_rate(const WorldConfig& cfg, int n_patients, uint64_t cohort_seed,
                              const Modification& mod, EventKind event, int reps, uint64_t seed) {
    if (n_patients < 1 || reps < 1)
        throw std::runtime_error("oracle_cohort_rate: n_patients and reps must be positive");
    double sum_rate = 0, sum_var = 0;
    for (int i = 0; i < n_patients; ++i) {
        // Replay patient i's latent draw exactly as generate_cohort made it.
        Rng draw_rng(derive_seed(cohort_seed, "synthworld-patient", static_cast<uint64_t>(i), 0));
        LatentPatient p = draw_patient(cfg, draw_rng);
        apply_to_latents(cfg, mod, p);
        int fired = 0;
        for (int j = 0; j < reps; ++j) {
            Rng rng(derive_seed(seed, "synthworld-cohort-oracle", static_cast<uint64_t>(i),
                                static_cast<uint64_t>(j)));
            if (trace_hits(simulate_stay(cfg, p, rng), event)) ++fired;
        }
        double rate = static_cast<double>(fired) / reps;
        sum_rate += rate;
        sum_var += rate * (1.0 - rate) / reps;
    }
    OracleRate r;
    r.n_mc = n_patients * reps;
    r.rate = sum_rate / n_patients;
    r.se = std::sqrt(sum_var) / n_patients;
    return r;
}

}  // namespace ttwin
