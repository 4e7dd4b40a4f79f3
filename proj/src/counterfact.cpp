#include "ttwin/counterfact.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include "ttwin/logging.hpp"
#include "ttwin/rng.hpp"

namespace ttwin {

namespace {

std::string fmt_num(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", x);
    return buf;
}

std::string fmt_signed(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%+g", x);
    return buf;
}

// JSON has no infinities; clamp the degenerate-test t statistic.
double json_safe(double x) {
    if (std::isfinite(x)) return x;
    return x > 0 ? std::numeric_limits<double>::max() : std::numeric_limits<double>::lowest();
}

}  // namespace

Modification Modification::age_shift(double years) {
    Modification m;
    m.kind = Kind::AgeShift;
    m.years = years;
    return m;
}

Modification Modification::lab_delta(std::string code, double amount) {
    Modification m;
    m.kind = Kind::LabDelta;
    m.lab_code = std::move(code);
    m.amount = amount;
    return m;
}

std::string Modification::id() const {
    switch (kind) {
        case Kind::Identity: return "actual";
        case Kind::AgeShift: return "age" + fmt_signed(years);
        case Kind::LabDelta: return lab_code + fmt_signed(amount);
    }
    return "?";
}

nlohmann::json Modification::to_json() const {
    switch (kind) {
        case Kind::Identity: return {{"kind", "identity"}};
        case Kind::AgeShift: return {{"kind", "age_shift"}, {"years", years}};
        case Kind::LabDelta: return {{"kind", "lab_delta"}, {"code", lab_code}, {"amount", amount}};
    }
    return {};
}

Modification Modification::from_json(const nlohmann::json& j) {
    std::string k = j.at("kind").get<std::string>();
    if (k == "identity") return identity();
    if (k == "age_shift") return age_shift(j.at("years").get<double>());
    if (k == "lab_delta")
        return lab_delta(j.at("code").get<std::string>(), j.at("amount").get<double>());
    throw std::runtime_error("Modification: unknown kind '" + k + "'");
}

PatientTimeline apply_modification(const PatientTimeline& prompt, const Modification& mod,
                                   const Vocabulary& vocab) {
    PatientTimeline out = prompt;
    switch (mod.kind) {
        case Modification::Kind::Identity:
            return out;
        case Modification::Kind::AgeShift: {
            if (out.entries.size() < 2 || out.entries[1].kind != EntryKind::AgeAnchor)
                throw std::runtime_error("apply_modification: prompt lacks an age anchor");
            // Shift the birth year so the anchor re-encodes consistently.
            CivilMinute birth = from_minutes(out.birth);
            birth.year -= static_cast<int>(std::llround(mod.years));
            if (birth.day > days_in_month(birth.year, birth.month))
                birth.day = days_in_month(birth.year, birth.month);
            out.birth = to_minutes(birth);
            AgeBreakdown a = age_between(out.birth, out.timestamps[1]);
            if (a.years < 0) throw std::runtime_error("apply_modification: negative shifted age");
            out.entries[1].age = encode_age(a);
            return out;
        }
        case Modification::Kind::LabDelta: {
            if (!vocab.has_scaler(mod.lab_code))
                throw std::runtime_error("apply_modification: unknown lab code " + mod.lab_code);
            bool found = false;
            for (TimelineEntry& e : out.entries) {
                if (e.kind == EntryKind::LabValueBinned && e.code == mod.lab_code) {
                    e.raw_value += mod.amount;
                    found = true;
                }
            }
            for (EventRecord& ev : out.events) {
                if (ev.kind == "lab" && ev.code == mod.lab_code && ev.num_value)
                    ev.num_value = *ev.num_value + mod.amount;
            }
            if (!found)
                throw std::runtime_error("apply_modification: prompt has no value for " +
                                         mod.lab_code);
            return out;
        }
    }
    throw std::runtime_error("apply_modification: bad kind");
}

bool event_fired(const EventFlags& f, EventKind e) {
    switch (e) {
        case EventKind::Death: return f.died_in_hospital;
        case EventKind::Drug: return f.target_drug_prescribed;
        case EventKind::Stay: return f.stay_exceeded_horizon;
    }
    return false;
}

EventProbability estimate_event_probability(
    const RolloutFn& rollout, int S, uint64_t master_seed, const std::string& admission_id,
    const std::string& modification_id, const std::function<bool(const EventFlags&)>& detector) {
    if (S < 1) throw std::runtime_error("estimate_event_probability: S must be >= 1");
    EventProbability r;
    r.admission_id = admission_id;
    r.S = S;
    uint64_t mod_key = fnv1a64(modification_id);
    for (int i = 0; i < S; ++i) {
        EventFlags f = rollout(i, derive_seed(master_seed, admission_id, mod_key, i));
        if (detector(f)) ++r.n_e;
    }
    r.p_e = static_cast<double>(r.n_e) / static_cast<double>(S);
    return r;
}

CohortRates cohort_rates(std::span<const int> real_indicators, std::span<const double> p_e) {
    if (real_indicators.empty() || real_indicators.size() != p_e.size())
        throw std::runtime_error("cohort_rates: empty or mismatched cohort");
    CohortRates r;
    r.N_p = static_cast<int>(real_indicators.size());
    double sum = 0;
    for (size_t i = 0; i < p_e.size(); ++i) {
        if (real_indicators[i]) ++r.E_r;
        sum += p_e[i];
    }
    r.R_r = static_cast<double>(r.E_r) / r.N_p;
    r.R_s = sum / r.N_p;
    return r;
}

RolloutCounts run_rollouts(const Transformer& model, const Vocabulary& vocab,
                           const PatientTimeline& prompt, const SamplerConfig& base, int S,
                           int first_index, uint64_t master_seed, const std::string& admission_id,
                           const std::string& modification_id, const std::string& target_drug) {
    if (S < 1) throw std::runtime_error("run_rollouts: S must be >= 1");
    if (prompt.entries.empty()) throw std::runtime_error("run_rollouts: empty prompt");
    if (static_cast<int>(prompt.entries.size()) >= model.cfg.d_seq)
        throw std::runtime_error("run_rollouts: prompt does not fit the context window");

    // Shared prompt replay: prefill one cache and the per-step state, then
    // clone across lanes.
    std::vector<EncodedEntry> prompt_encoded(prompt.entries.size());
    for (size_t i = 0; i < prompt.entries.size(); ++i)
        prompt_encoded[i] = vocab.encode_entry(prompt.entries[i]);
    DecodeCache prefill;
    prefill.reset(model.cfg);
    Eigen::VectorXf prompt_logits;
    for (const EncodedEntry& e : prompt_encoded)
        prompt_logits = model.forward_cached(prefill, e).transpose();

    RolloutState proto_state;
    for (const TimelineEntry& e : prompt.entries) proto_state.advance(e);
    proto_state.set_clock(base.clock_at_prompt_end);

    MinuteStamp anchor = prompt.timestamps.back() - base.clock_at_prompt_end.elapsed;
    std::vector<SimStep> prompt_steps(prompt.entries.size());
    for (size_t i = 0; i < prompt.entries.size(); ++i) {
        prompt_steps[i].entry = prompt.entries[i];
        prompt_steps[i].clock.elapsed = prompt.timestamps[i] - anchor;
        prompt_steps[i].clock.time_of_day = time_of_day(prompt.timestamps[i]);
        prompt_steps[i].admitted = prompt.entries[i].admitted;
    }

    struct Lane {
        DecodeCache cache;
        RolloutState state;
        Rng rng{0};
        Eigen::VectorXf logits;
        std::vector<SimStep> steps;
        bool done = false;
    };
    uint64_t mod_key = fnv1a64(modification_id);
    std::vector<Lane> lanes(S);
    for (int i = 0; i < S; ++i) {
        lanes[i].cache = prefill;
        lanes[i].state = proto_state;
        lanes[i].rng = Rng(derive_seed(master_seed, admission_id, mod_key, first_index + i));
        lanes[i].logits = prompt_logits;
        if (proto_state.clock().elapsed >= base.horizon_minutes) lanes[i].done = true;
    }

    RolloutCounts counts;
    counts.S = S;
    bool overflow_warned = false;
    std::vector<DecodeCache*> batch_caches;
    std::vector<EncodedEntry> batch_entries;
    std::vector<int> batch_lanes;
    while (true) {
        batch_caches.clear();
        batch_entries.clear();
        batch_lanes.clear();
        for (int i = 0; i < S; ++i) {
            Lane& ln = lanes[i];
            if (ln.done) continue;
            Eigen::VectorXf z = ln.logits;
            if (base.restrict_structural) restrict_logits(z, vocab, ln.state);
            Eigen::VectorXf p = temperature_softmax(z, base.temperature);
            int token = sample_from(p, base.greedy, ln.rng);
            TimelineEntry e = vocab.entry_for_token(token, ln.state.active_lab());
            bool adm = ln.state.advance(e);
            e.admitted = adm;
            ln.steps.push_back({e, ln.state.clock(), adm});
            ++counts.steps_generated;
            if (e.kind == EntryKind::EndOfTimeline ||
                ln.state.clock().elapsed >= base.horizon_minutes ||
                static_cast<int>(ln.steps.size()) >= base.max_entries) {
                ln.done = true;
                continue;
            }
            if (ln.cache.len >= model.cfg.d_seq) {
                // lockstep lanes do not slide the window; flag and stop
                if (!overflow_warned) {
                    log_warn("counterfact", "rollout context overflow for admission " +
                                                admission_id + "; trajectory truncated");
                    overflow_warned = true;
                }
                ln.done = true;
                continue;
            }
            batch_caches.push_back(&ln.cache);
            batch_entries.push_back(vocab.encode_entry(e));
            batch_lanes.push_back(i);
        }
        if (batch_lanes.empty()) break;
        Mat<float> logits = model.step_batch(batch_caches, batch_entries);
        for (size_t row = 0; row < batch_lanes.size(); ++row)
            lanes[batch_lanes[row]].logits = logits.row(static_cast<int>(row)).transpose();
    }

    std::vector<SimStep> steps;
    for (int i = 0; i < S; ++i) {
        steps = prompt_steps;
        steps.insert(steps.end(), lanes[i].steps.begin(), lanes[i].steps.end());
        EventFlags f = detect_events(steps, base.horizon_minutes, target_drug);
        for (int e = 0; e < 3; ++e)
            if (event_fired(f, static_cast<EventKind>(e))) ++counts.n_e[e];
    }
    return counts;
}

nlohmann::json ExperimentConfig::to_json() const {
    return {{"S", S},
            {"horizon_minutes", horizon_minutes},
            {"workers", workers},
            {"seed", seed},
            {"target_drug", target_drug},
            {"temperature", temperature},
            {"max_entries", max_entries},
            {"bootstrap_iters", bootstrap_iters},
            {"ci_level", ci_level},
            {"rollout_block", rollout_block},
            {"pooled_binary", pooled_binary}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (j.contains("S")) c.S = j.at("S").get<int>();
    if (j.contains("horizon_minutes")) c.horizon_minutes = j.at("horizon_minutes").get<int64_t>();
    if (j.contains("workers")) c.workers = j.at("workers").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("target_drug")) c.target_drug = j.at("target_drug").get<std::string>();
    if (j.contains("temperature")) c.temperature = j.at("temperature").get<double>();
    if (j.contains("max_entries")) c.max_entries = j.at("max_entries").get<int>();
    if (j.contains("bootstrap_iters")) c.bootstrap_iters = j.at("bootstrap_iters").get<int>();
    if (j.contains("ci_level")) c.ci_level = j.at("ci_level").get<double>();
    if (j.contains("rollout_block")) c.rollout_block = j.at("rollout_block").get<int>();
    if (j.contains("pooled_binary")) c.pooled_binary = j.at("pooled_binary").get<bool>();
    return c;
}

CohortAdmission make_cohort_admission(const PatientTimeline& full, const std::string& anchor_lab,
                                      const std::string& target_drug, int64_t horizon_minutes) {
    CohortAdmission a;
    a.admission_id = full.patient_id;

    size_t i_adm = full.events.size();
    for (size_t i = 0; i < full.events.size(); ++i) {
        if (full.events[i].kind == "adm") {
            i_adm = i;
            break;
        }
    }
    if (i_adm == full.events.size())
        throw std::runtime_error("make_cohort_admission: timeline has no admission: " +
                                 full.patient_id);
    MinuteStamp t_adm = full.events[i_adm].t;

    // Cut after the first lab panel of the admission: all events sharing the
    // first post-admission lab timestamp.
    size_t cut = i_adm;
    MinuteStamp t_panel = 0;
    bool have_panel = false;
    for (size_t i = i_adm + 1; i < full.events.size(); ++i) {
        if (full.events[i].kind == "lab") {
            t_panel = full.events[i].t;
            have_panel = true;
            break;
        }
    }
    if (have_panel) {
        for (size_t i = i_adm; i < full.events.size(); ++i)
            if (full.events[i].t <= t_panel) cut = i;
    }
    std::vector<EventRecord> truncated(full.events.begin(),
                                       full.events.begin() + static_cast<long>(cut) + 1);
    a.prompt = canonicalize(full.patient_id, full.sex, full.birth, std::move(truncated));

    MinuteStamp anchor = t_adm;
    if (!anchor_lab.empty()) {
        bool found = false;
        for (size_t i = i_adm + 1; i < full.events.size(); ++i) {
            if (full.events[i].kind == "lab" && full.events[i].code == anchor_lab) {
                anchor = full.events[i].t;
                found = true;
                break;
            }
        }
        if (!found)
            log_warn("counterfact", "no " + anchor_lab + " measurement for " + full.patient_id +
                                        "; clock anchored at admission");
    }
    MinuteStamp end = a.prompt.timestamps.back();
    a.clock_at_prompt_end.elapsed = end - anchor;
    a.clock_at_prompt_end.time_of_day = time_of_day(end);

    // Real outcomes over the full timeline, clocked from the same anchor.
    std::vector<SimStep> steps(full.entries.size());
    for (size_t i = 0; i < full.entries.size(); ++i) {
        steps[i].entry = full.entries[i];
        steps[i].clock.elapsed = full.timestamps[i] - anchor;
        steps[i].clock.time_of_day = time_of_day(full.timestamps[i]);
        steps[i].admitted = full.entries[i].admitted;
    }
    a.real = detect_events(steps, horizon_minutes, target_drug);
    return a;
}

nlohmann::json ExperimentReport::to_json() const {
    nlohmann::json conditions = nlohmann::json::array();
    for (const std::string& mod_id : modification_ids) {
        nlohmann::json adms = nlohmann::json::array();
        for (const auto& [adm_id, p] : p_e.at(mod_id)) {
            adms.push_back({{"admission_id", adm_id},
                            {"p_death", p[0]},
                            {"p_drug", p[1]},
                            {"p_stay", p[2]}});
        }
        nlohmann::json ev = nlohmann::json::object();
        const auto& st = stats.at(mod_id);
        for (int e = 0; e < 3; ++e) {
            ev[kEventNames[e]] = {{"N_p", st[e].N_p},       {"R_r", st[e].R_r},
                                  {"R_s", st[e].R_s},       {"ci_lo", st[e].ci_lo},
                                  {"ci_hi", st[e].ci_hi},   {"t", json_safe(st[e].t)},
                                  {"df", st[e].df},         {"p_value", st[e].p_value},
                                  {"degenerate", st[e].degenerate}};
        }
        conditions.push_back(
            {{"modification", mod_id}, {"admissions", adms}, {"stats", ev}});
    }
    return {{"conditions", conditions}};
}

ExperimentReport ExperimentReport::from_json(const nlohmann::json& j) {
    ExperimentReport r;
    for (const nlohmann::json& c : j.at("conditions")) {
        std::string mod_id = c.at("modification").get<std::string>();
        r.modification_ids.push_back(mod_id);
        auto& per_adm = r.p_e[mod_id];
        for (const nlohmann::json& a : c.at("admissions")) {
            per_adm[a.at("admission_id").get<std::string>()] = {
                a.at("p_death").get<double>(), a.at("p_drug").get<double>(),
                a.at("p_stay").get<double>()};
        }
        auto& st = r.stats[mod_id];
        for (int e = 0; e < 3; ++e) {
            const nlohmann::json& s = c.at("stats").at(kEventNames[e]);
            st[e].N_p = s.at("N_p").get<int>();
            st[e].R_r = s.at("R_r").get<double>();
            st[e].R_s = s.at("R_s").get<double>();
            st[e].ci_lo = s.at("ci_lo").get<double>();
            st[e].ci_hi = s.at("ci_hi").get<double>();
            st[e].t = s.at("t").get<double>();
            st[e].df = s.at("df").get<double>();
            st[e].p_value = s.at("p_value").get<double>();
            st[e].degenerate = s.at("degenerate").get<bool>();
        }
    }
    return r;
}

std::string ExperimentReport::summary_csv() const {
    std::string csv =
        "modification,event,N_p,R_r,R_s,ci_lo,ci_hi,t,df,p_value,sims_per_second\n";
    for (const std::string& mod_id : modification_ids) {
        const auto& st = stats.at(mod_id);
        for (int e = 0; e < 3; ++e) {
            csv += mod_id;
            csv += ',';
            csv += kEventNames[e];
            csv += ',' + std::to_string(st[e].N_p) + ',' + fmt_num(st[e].R_r) + ',' +
                   fmt_num(st[e].R_s) + ',' + fmt_num(st[e].ci_lo) + ',' + fmt_num(st[e].ci_hi) +
                   ',' + fmt_num(st[e].t) + ',' + fmt_num(st[e].df) + ',' +
                   fmt_num(st[e].p_value) + ',' + fmt_num(sims_per_second) + '\n';
        }
    }
    return csv;
}

ExperimentReport run_experiment(const Transformer& model, const Vocabulary& vocab,
                                std::span<const CohortAdmission> cohort,
                                std::span<const Modification> ladder,
                                const ExperimentConfig& cfg) {
    if (cohort.empty()) throw std::runtime_error("run_experiment: empty cohort");
    if (cfg.S < 1 || cfg.workers < 1 || cfg.rollout_block < 1)
        throw std::runtime_error("run_experiment: bad config");
    if (model.cfg.vocab_size != vocab.size())
        throw std::runtime_error("run_experiment: checkpoint/vocabulary size mismatch");

    // Always lead with the identity baseline ("the actual condition was used
    // as the reference").
    std::vector<Modification> mods;
    if (ladder.empty() || ladder.front().kind != Modification::Kind::Identity)
        mods.push_back(Modification::identity());
    mods.insert(mods.end(), ladder.begin(), ladder.end());
    {
        std::set<std::string> ids;
        for (const Modification& m : mods)
            if (!ids.insert(m.id()).second)
                throw std::runtime_error("run_experiment: duplicate modification " + m.id());
    }

    // Eligibility: LabDelta needs at least one recorded value of the code.
    auto eligible = [&](const CohortAdmission& a, const Modification& m) {
        if (m.kind != Modification::Kind::LabDelta) return true;
        for (const TimelineEntry& e : a.prompt.entries)
            if (e.kind == EntryKind::LabValueBinned && e.code == m.lab_code) return true;
        return false;
    };

    struct Job {
        int mod_idx;
        int adm_idx;
        int first;  // first rollout index of the block
        int count;
    };
    std::vector<Job> jobs;
    std::vector<std::vector<std::array<std::atomic<int>, 3>>> counts(mods.size());
    for (size_t m = 0; m < mods.size(); ++m) {
        counts[m] = std::vector<std::array<std::atomic<int>, 3>>(cohort.size());
        for (auto& arr : counts[m])
            for (auto& c : arr) c.store(0);
        for (size_t a = 0; a < cohort.size(); ++a) {
            if (!eligible(cohort[a], mods[m])) continue;
            for (int first = 0; first < cfg.S; first += cfg.rollout_block)
                jobs.push_back({static_cast<int>(m), static_cast<int>(a), first,
                                std::min(cfg.rollout_block, cfg.S - first)});
        }
    }

    std::atomic<size_t> next_job{0};
    std::atomic<int64_t> total_rollouts{0};
    std::mutex err_mu;
    std::vector<std::string> errors;
    auto t0 = std::chrono::steady_clock::now();
    auto work = [&]() {
        for (;;) {
            size_t j = next_job.fetch_add(1);
            if (j >= jobs.size()) return;
            const Job& job = jobs[j];
            const CohortAdmission& adm = cohort[job.adm_idx];
            try {
                SamplerConfig base;
                base.temperature = cfg.temperature;
                base.horizon_minutes = cfg.horizon_minutes;
                base.max_entries = cfg.max_entries;
                base.clock_at_prompt_end = adm.clock_at_prompt_end;
                PatientTimeline prompt = apply_modification(adm.prompt, mods[job.mod_idx], vocab);
                RolloutCounts rc =
                    run_rollouts(model, vocab, prompt, base, job.count, job.first, cfg.seed,
                                 adm.admission_id, mods[job.mod_idx].id(), cfg.target_drug);
                for (int e = 0; e < 3; ++e)
                    counts[job.mod_idx][job.adm_idx][e] += rc.n_e[e];
                total_rollouts += rc.S;
            } catch (const std::exception& ex) {
                std::lock_guard<std::mutex> lock(err_mu);
                errors.push_back(adm.admission_id + " / " + mods[job.mod_idx].id() + ": " +
                                 ex.what());
            }
        }
    };
    if (cfg.workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < cfg.workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!errors.empty()) {
        for (const std::string& e : errors) log_error("counterfact", e);
        throw std::runtime_error("run_experiment: " + std::to_string(errors.size()) +
                                 " admission estimates failed; first: " + errors.front());
    }

    ExperimentReport report;
    report.sims_per_second = wall > 0 ? static_cast<double>(total_rollouts.load()) / wall : 0;
    for (const Modification& m : mods) report.modification_ids.push_back(m.id());

    for (size_t m = 0; m < mods.size(); ++m) {
        const std::string mod_id = mods[m].id();
        auto& per_adm = report.p_e[mod_id];
        for (size_t a = 0; a < cohort.size(); ++a) {
            if (!eligible(cohort[a], mods[m])) continue;
            std::array<double, 3> p{};
            for (int e = 0; e < 3; ++e)
                p[e] = static_cast<double>(counts[m][a][e].load()) / cfg.S;
            per_adm[cohort[a].admission_id] = p;
        }
        if (per_adm.empty())
            throw std::runtime_error("run_experiment: no eligible admissions for " + mod_id);
    }

    const auto& actual_p = report.p_e.at(report.modification_ids.front());
    for (size_t m = 0; m < mods.size(); ++m) {
        const std::string mod_id = mods[m].id();
        const auto& per_adm = report.p_e.at(mod_id);
        auto& st = report.stats[mod_id];
        for (int e = 0; e < 3; ++e) {
            std::vector<double> p_mod, p_act;
            std::vector<int> real;
            for (const auto& [adm_id, p] : per_adm) {
                p_mod.push_back(p[e]);
                p_act.push_back(actual_p.at(adm_id)[e]);
            }
            for (const CohortAdmission& a : cohort) {
                if (per_adm.count(a.admission_id))
                    real.push_back(event_fired(a.real, static_cast<EventKind>(e)) ? 1 : 0);
            }
            CohortRates rates = cohort_rates(real, p_mod);
            st[e].N_p = rates.N_p;
            st[e].R_r = rates.R_r;
            st[e].R_s = rates.R_s;
            BootstrapCI ci = bootstrap_mean_ci(
                p_mod, cfg.ci_level, cfg.bootstrap_iters,
                derive_seed(cfg.seed, "bootstrap:" + mod_id, fnv1a64(kEventNames[e]), 0));
            st[e].ci_lo = ci.lo;
            st[e].ci_hi = ci.hi;
            WelchResult w;
            if (cfg.pooled_binary) {
                auto pooled = [&](const std::vector<double>& ps) {
                    std::vector<double> v;
                    v.reserve(ps.size() * cfg.S);
                    for (double p : ps) {
                        int ones = static_cast<int>(std::llround(p * cfg.S));
                        v.insert(v.end(), ones, 1.0);
                        v.insert(v.end(), cfg.S - ones, 0.0);
                    }
                    return v;
                };
                w = welch_t_test(pooled(p_mod), pooled(p_act));
            } else {
                w = welch_t_test(p_mod, p_act);
            }
            st[e].t = w.t;
            st[e].df = w.df;
            st[e].p_value = w.p_value;
            st[e].degenerate = w.degenerate;
        }
    }
    return report;
}

}  // namespace ttwin
