#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "ttwin/counterfact.hpp"
#include "ttwin/logging.hpp"
#include "ttwin/model.hpp"
#include "ttwin/sample.hpp"
#include "ttwin/synthworld.hpp"
#include "ttwin/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ttwin;

namespace {

constexpr const char* kVersion = "0.1.0";

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j;
    in >> j;
    return j;
}

// Provenance note dropped next to every artifact-producing run.
void write_run_config(const std::string& dir, json resolved) {
    resolved["tool_version"] = kVersion;
    write_text(dir + "/resolved_config.json", resolved.dump(2) + "\n");
}

struct BuildVocabArgs {
    std::string corpus, out;
};

void run_build_vocab(const BuildVocabArgs& a) {
    std::vector<PatientTimeline> corpus = read_timelines(a.corpus);
    Vocabulary vocab = Vocabulary::build(corpus);
    vocab.save(a.out);
    json stats;
    for (const auto& [k, v] : vocab.composition_stats()) stats[k] = v;
    log_info("cli", "vocabulary built", {{"size", vocab.size()}, {"composition", stats}});
}

struct TrainArgs {
    std::string corpus, vocab, config, out, preset = "desk";
    uint64_t seed = 0;
    bool seed_set = false;
    int epochs = -1;
    int threads = -1;
    bool resume = false;
};

void run_train(const TrainArgs& a) {
    std::vector<PatientTimeline> corpus = read_timelines(a.corpus);
    Vocabulary vocab = Vocabulary::load(a.vocab);

    ModelConfig mcfg;
    if (a.preset == "desk")
        mcfg = ModelConfig::desk(vocab.size());
    else if (a.preset == "tiny")
        mcfg = ModelConfig::tiny(vocab.size());
    else if (a.preset == "paper")
        mcfg = ModelConfig::paper_scale(vocab.size());
    else
        throw std::runtime_error("unknown model preset: " + a.preset);
    TrainConfig tcfg;
    if (!a.config.empty()) {
        json j = read_json_file(a.config);
        if (j.contains("model")) {
            mcfg = ModelConfig::from_json(j.at("model").dump());
            mcfg.vocab_size = vocab.size();
        }
        if (j.contains("train")) tcfg = TrainConfig::from_json(j.at("train").dump());
    }
    if (a.seed_set) tcfg.seed = a.seed;
    if (a.epochs > 0) tcfg.epochs = a.epochs;
    if (a.threads > 0) tcfg.threads = a.threads;
    tcfg.resume = a.resume;

    fs::create_directories(a.out);
    write_run_config(a.out, {{"model", json::parse(mcfg.to_json())},
                             {"train", json::parse(tcfg.to_json())},
                             {"corpus", a.corpus},
                             {"vocab", a.vocab}});
    TrainResult r = train(corpus, vocab, mcfg, tcfg, a.out);
    log_info("cli", "training complete",
             {{"epochs_run", r.epochs_run},
              {"best_val_loss", r.best_val_loss},
              {"final_train_loss", r.final_train_loss},
              {"checkpoint", r.final_checkpoint}});
}

struct SimulateArgs {
    std::string checkpoint, vocab, prompt, out;
    int n = 1;
    double horizon_days = 7;
    uint64_t seed = 0;
    double temperature = 1.0;
    bool greedy = false;
};

void run_simulate(const SimulateArgs& a) {
    Transformer model = load_checkpoint(a.checkpoint);
    Vocabulary vocab = Vocabulary::load(a.vocab);
    if (model.cfg.vocab_size != vocab.size())
        throw std::runtime_error("checkpoint/vocabulary size mismatch");
    std::vector<PatientTimeline> prompts = read_timelines(a.prompt);
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + a.out);
    for (const PatientTimeline& p : prompts) {
        for (int k = 0; k < a.n; ++k) {
            SamplerConfig cfg;
            cfg.temperature = a.temperature;
            cfg.greedy = a.greedy;
            cfg.horizon_minutes = static_cast<int64_t>(a.horizon_days * kMinutesPerDay);
            cfg.seed = derive_seed(a.seed, p.patient_id, 0, static_cast<uint64_t>(k));
            cfg.clock_at_prompt_end.elapsed = 0;
            cfg.clock_at_prompt_end.time_of_day = time_of_day(p.timestamps.back());
            TransformerDecoder decoder(model);
            Trajectory traj = generate(decoder, vocab, p, cfg);

            PatientTimeline sim;
            sim.patient_id = p.patient_id + "#" + std::to_string(k);
            sim.sex = p.sex;
            sim.birth = p.birth;
            sim.events = p.events;
            MinuteStamp anchor = p.timestamps.back();
            for (const SimStep& s : traj.generated) {
                MinuteStamp t = anchor + s.clock.elapsed;
                const TimelineEntry& e = s.entry;
                switch (e.kind) {
                    case EntryKind::Diagnosis:
                        sim.events.push_back({t, "dx", e.code, {}, {}, {}});
                        break;
                    case EntryKind::Medication:
                        sim.events.push_back({t, "rx", e.code, {}, {}, {}});
                        break;
                    case EntryKind::LabValueBinned:
                        sim.events.push_back({t, "lab", e.code, e.raw_value, {}, {}});
                        break;
                    case EntryKind::LabValueCategorical:
                        sim.events.push_back({t, "lab", e.code, {}, e.text, {}});
                        break;
                    case EntryKind::Admission:
                        sim.events.push_back({t, "adm", "", {}, {}, {}});
                        break;
                    case EntryKind::Discharge:
                        sim.events.push_back({t, "dsc", "", {}, {}, {}});
                        break;
                    case EntryKind::DischargeOutcome:
                        sim.events.push_back(
                            {t, "outcome", "", {}, {},
                             std::string(e.outcome == Outcome::Deceased ? "deceased" : "alive")});
                        break;
                    default:
                        break;  // structural entries are not events
                }
            }
            json line = json::parse(timeline_to_json_line(sim));
            line["stop_reason"] = to_string(traj.stop_reason);
            out << line.dump() << "\n";
        }
    }
    log_info("cli", "simulation written", {{"out", a.out}});
}

struct CounterfactualArgs {
    std::string checkpoint, vocab, cohort, mods, out;
    int S = 256;
    double horizon_days = 7;
    int workers = 1;
    uint64_t seed = 0;
    double temperature = 1.0;
    bool pooled_binary = false;
};

void run_counterfactual(const CounterfactualArgs& a) {
    Transformer model = load_checkpoint(a.checkpoint);
    Vocabulary vocab = Vocabulary::load(a.vocab);
    std::vector<PatientTimeline> timelines = read_timelines(a.cohort);

    json mods_j = read_json_file(a.mods);
    std::string anchor_lab = mods_j.value("anchor_lab", std::string());
    std::vector<Modification> ladder;
    for (const json& m : mods_j.at("modifications")) ladder.push_back(Modification::from_json(m));

    ExperimentConfig cfg;
    cfg.S = a.S;
    cfg.horizon_minutes = static_cast<int64_t>(a.horizon_days * kMinutesPerDay);
    cfg.workers = a.workers;
    cfg.seed = a.seed;
    cfg.target_drug = mods_j.value("target_drug", std::string());
    cfg.temperature = a.temperature;
    cfg.pooled_binary = a.pooled_binary;

    std::vector<CohortAdmission> cohort;
    for (const PatientTimeline& tl : timelines)
        cohort.push_back(
            make_cohort_admission(tl, anchor_lab, cfg.target_drug, cfg.horizon_minutes));

    fs::create_directories(a.out);
    write_run_config(a.out, {{"experiment", cfg.to_json()},
                             {"anchor_lab", anchor_lab},
                             {"mods", mods_j},
                             {"checkpoint", a.checkpoint},
                             {"vocab", a.vocab},
                             {"cohort", a.cohort}});
    ExperimentReport report = run_experiment(model, vocab, cohort, ladder, cfg);
    write_text(a.out + "/report.json", report.to_json().dump(2) + "\n");
    write_text(a.out + "/summary.csv", report.summary_csv());
    write_text(a.out + "/timing.json",
               json{{"sims_per_second", report.sims_per_second}}.dump(2) + "\n");
    log_info("cli", "experiment complete",
             {{"out", a.out}, {"sims_per_second", report.sims_per_second}});
}

struct SynthArgs {
    std::string config, out;
    int n = 10000;
    uint64_t seed = 0;
};

void run_synth(const SynthArgs& a) {
    WorldConfig cfg = a.config.empty() ? WorldConfig{} : WorldConfig::load(a.config);
    std::vector<PatientTimeline> cohort = generate_cohort(cfg, a.n, a.seed);
    write_timelines(a.out, cohort);
    log_info("cli", "cohort written", {{"out", a.out}, {"n", a.n}});
}

struct OracleArgs {
    std::string config, mod, event = "death";
    int n_mc = 100000;
    uint64_t seed = 0;
};

void run_oracle(const OracleArgs& a) {
    WorldConfig cfg = a.config.empty() ? WorldConfig{} : WorldConfig::load(a.config);
    Modification mod =
        a.mod.empty() ? Modification::identity() : Modification::from_json(read_json_file(a.mod));
    EventKind ev;
    if (a.event == "death")
        ev = EventKind::Death;
    else if (a.event == "drug")
        ev = EventKind::Drug;
    else if (a.event == "stay")
        ev = EventKind::Stay;
    else
        throw std::runtime_error("unknown event kind: " + a.event);
    OracleRate r = oracle_rate(cfg, mod, ev, a.n_mc, a.seed);
    json out = {{"modification", mod.id()},
                {"event", a.event},
                {"rate", r.rate},
                {"se", r.se},
                {"n_mc", r.n_mc}};
    std::cout << out.dump() << "\n";
}

void run_report(const std::string& dir) {
    ExperimentReport report = ExperimentReport::from_json(read_json_file(dir + "/report.json"));
    if (fs::exists(dir + "/timing.json"))
        report.sims_per_second =
            read_json_file(dir + "/timing.json").value("sims_per_second", 0.0);
    write_text(dir + "/summary.csv", report.summary_csv());
    // plot-ready grouped-bar data: one row per (modification, event)
    std::string fig = "modification,event,R_s,ci_lo,ci_hi,p_value\n";
    for (const std::string& mod_id : report.modification_ids) {
        const auto& st = report.stats.at(mod_id);
        for (int e = 0; e < 3; ++e) {
            char buf[256];
            std::snprintf(buf, sizeof(buf), "%s,%s,%.10g,%.10g,%.10g,%.10g\n", mod_id.c_str(),
                          kEventNames[e], st[e].R_s, st[e].ci_lo, st[e].ci_hi, st[e].p_value);
            fig += buf;
        }
    }
    write_text(dir + "/figure_data.csv", fig);
    log_info("cli", "report written", {{"dir", dir}});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"timeline-twin: autoregressive clinical timeline simulator"};
    app.require_subcommand(1);

    BuildVocabArgs bv;
    auto* c_bv = app.add_subcommand("build-vocab", "Build the token vocabulary from a corpus");
    c_bv->add_option("--corpus", bv.corpus, "training corpus (JSONL)")->required();
    c_bv->add_option("--out", bv.out, "output vocabulary JSON")->required();

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "Pretrain the model on a corpus");
    c_tr->add_option("--corpus", tr.corpus)->required();
    c_tr->add_option("--vocab", tr.vocab)->required();
    c_tr->add_option("--config", tr.config, "JSON with optional 'model'/'train' objects");
    c_tr->add_option("--out", tr.out, "output directory")->required();
    c_tr->add_option("--model", tr.preset, "preset: desk|tiny|paper");
    auto* seed_opt = c_tr->add_option("--seed", tr.seed);
    c_tr->add_option("--epochs", tr.epochs);
    c_tr->add_option("--threads", tr.threads);
    c_tr->add_flag("--resume", tr.resume, "continue from saved optimizer state");

    SimulateArgs si;
    auto* c_si = app.add_subcommand("simulate", "Generate trajectories from prompts");
    c_si->add_option("--checkpoint", si.checkpoint)->required();
    c_si->add_option("--vocab", si.vocab)->required();
    c_si->add_option("--prompt", si.prompt, "prompt timelines (JSONL)")->required();
    c_si->add_option("--n", si.n, "rollouts per prompt");
    c_si->add_option("--horizon-days", si.horizon_days);
    c_si->add_option("--seed", si.seed);
    c_si->add_option("--temperature", si.temperature);
    c_si->add_flag("--greedy", si.greedy);
    c_si->add_option("--out", si.out, "output JSONL")->required();

    CounterfactualArgs cf;
    auto* c_cf = app.add_subcommand("counterfactual", "Run a Monte Carlo what-if experiment");
    c_cf->add_option("--checkpoint", cf.checkpoint)->required();
    c_cf->add_option("--vocab", cf.vocab)->required();
    c_cf->add_option("--cohort", cf.cohort, "cohort timelines (JSONL)")->required();
    c_cf->add_option("--mods", cf.mods, "modification ladder JSON")->required();
    c_cf->add_option("--S", cf.S, "rollouts per admission per condition");
    c_cf->add_option("--horizon-days", cf.horizon_days);
    c_cf->add_option("--workers", cf.workers);
    c_cf->add_option("--seed", cf.seed);
    c_cf->add_option("--temperature", cf.temperature);
    c_cf->add_flag("--pooled-binary", cf.pooled_binary,
                   "Welch over pooled 0/1 rollout outcomes");
    c_cf->add_option("--out", cf.out, "output directory")->required();

    SynthArgs sy;
    auto* c_sy = app.add_subcommand("synth", "Generate a synthetic cohort");
    c_sy->add_option("--config", sy.config, "world config JSON");
    c_sy->add_option("--n", sy.n, "number of patients");
    c_sy->add_option("--seed", sy.seed);
    c_sy->add_option("--out", sy.out, "output corpus JSONL");

    OracleArgs orc;
    auto* c_or = c_sy->add_subcommand("oracle", "Ground-truth 7-day event rate");
    c_or->add_option("--config", orc.config, "world config JSON");
    c_or->add_option("--mod", orc.mod, "modification JSON");
    c_or->add_option("--event", orc.event, "death|drug|stay");
    c_or->add_option("--n-mc", orc.n_mc);
    c_or->add_option("--seed", orc.seed);

    std::string report_dir;
    auto* c_rp = app.add_subcommand("report", "Rebuild summary/figure CSVs from report.json");
    c_rp->add_option("--dir", report_dir, "experiment directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*c_bv) run_build_vocab(bv);
        if (*c_tr) {
            tr.seed_set = seed_opt->count() > 0;
            run_train(tr);
        }
        if (*c_si) run_simulate(si);
        if (*c_cf) run_counterfactual(cf);
        if (*c_sy) {
            if (*c_or)
                run_oracle(orc);
            else
                run_synth(sy);
        }
        if (*c_rp) run_report(report_dir);
    } catch (const std::exception& e) {
        log_error("cli", e.what());
        return 2;
    }
    return 0;
}
