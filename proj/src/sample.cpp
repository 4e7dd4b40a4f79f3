#include "ttwin/sample.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ttwin/logging.hpp"

namespace ttwin {

const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::Horizon: return "horizon";
        case StopReason::EndToken: return "end_token";
        case StopReason::MaxEntries: return "max_entries";
        case StopReason::ContextOverflow: return "context_overflow";
    }
    return "?";
}

bool RolloutState::advance(const TimelineEntry& e) {
    if (e.kind != EntryKind::LabCode) active_lab_.clear();
    switch (e.kind) {
        case EntryKind::Admission:
            admitted_ = true;
            return true;
        case EntryKind::Discharge:
            closing_ = true;
            return true;
        case EntryKind::DischargeOutcome:
            admitted_ = false;
            closing_ = false;
            return true;
        case EntryKind::LabCode:
            active_lab_ = e.code;
            return admitted_;
        case EntryKind::TimeProgression: {
            int64_t dur = TimeBinTable::token_to_duration(e.time);
            clock_.elapsed += dur;
            if (e.time.sub_day)
                clock_.time_of_day = static_cast<int>((clock_.time_of_day + dur) % kMinutesPerDay);
            else
                clock_.time_of_day = e.time.hour_bin * 60 + 30;
            return admitted_;
        }
        default:
            return admitted_;
    }
}

int sample_from(const Eigen::VectorXf& p, bool greedy, Rng& rng) {
    if (p.size() == 0) throw std::runtime_error("sample_from: empty distribution");
    if (greedy) {
        int best = 0;
        p.maxCoeff(&best);
        return best;
    }
    double u = rng.uniform();
    double acc = 0.0;
    for (int i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return i;
    }
    // numerical slack: fall back to the last positive-mass token
    for (int i = static_cast<int>(p.size()) - 1; i >= 0; --i)
        if (p[i] > 0.0f) return i;
    throw std::runtime_error("sample_from: distribution has no mass");
}

Eigen::VectorXf temperature_softmax(const Eigen::VectorXf& logits, double temperature) {
    if (!(temperature > 0.0)) throw std::runtime_error("temperature must be positive");
    // -inf marks masked-out tokens (zero probability); NaN is an error
    float mx = -std::numeric_limits<float>::infinity();
    for (int i = 0; i < logits.size(); ++i) {
        if (std::isnan(logits[i]))
            throw std::runtime_error("temperature_softmax: NaN logits");
        mx = std::max(mx, logits[i]);
    }
    if (!std::isfinite(mx))
        throw std::runtime_error("temperature_softmax: all tokens masked");
    Eigen::VectorXf p(logits.size());
    double sum = 0;
    for (int i = 0; i < logits.size(); ++i) {
        double e = std::isinf(logits[i]) ? 0.0
                                         : std::exp((logits[i] - mx) / temperature);
        p[i] = static_cast<float>(e);
        sum += e;
    }
    p /= static_cast<float>(sum);
    return p;
}

void restrict_logits(Eigen::VectorXf& logits, const Vocabulary& vocab, const RolloutState& state) {
    const float kNegInf = -std::numeric_limits<float>::infinity();
    if (!state.active_lab().empty()) {
        // only a value for the pending lab code may follow
        Eigen::VectorXf masked = Eigen::VectorXf::Constant(logits.size(), kNegInf);
        int lo = vocab.first_value_bin_id();
        masked.segment(lo, PercentileScaler::kBins) = logits.segment(lo, PercentileScaler::kBins);
        for (int id = vocab.first_categorical_id(); id < vocab.size(); ++id) {
            const Token& t = vocab.token(id);
            if (t.kind == Token::Kind::LabCategorical && t.code == state.active_lab())
                masked[id] = logits[id];
        }
        logits = masked;
    } else if (state.awaiting_outcome()) {
        Eigen::VectorXf masked = Eigen::VectorXf::Constant(logits.size(), kNegInf);
        masked[vocab.outcome_id(Outcome::Alive)] = logits[vocab.outcome_id(Outcome::Alive)];
        masked[vocab.outcome_id(Outcome::Deceased)] = logits[vocab.outcome_id(Outcome::Deceased)];
        logits = masked;
    } else {
        // outside their forced slots, context-bound tokens are invalid:
        // values/outcomes, and the prefix-only sex/age anchors
        logits.segment(vocab.first_value_bin_id(), PercentileScaler::kBins).setConstant(kNegInf);
        logits[vocab.outcome_id(Outcome::Alive)] = kNegInf;
        logits[vocab.outcome_id(Outcome::Deceased)] = kNegInf;
        logits[vocab.sex_id("F")] = kNegInf;
        logits[vocab.sex_id("M")] = kNegInf;
        logits[vocab.age_anchor_id()] = kNegInf;
        for (int id = vocab.first_categorical_id(); id < vocab.size(); ++id)
            if (vocab.token(id).kind == Token::Kind::LabCategorical) logits[id] = kNegInf;
    }
}

namespace {

constexpr double kMinutesPerYear = 525960.0;   // 365.25 days
constexpr double kMinutesPerMonth = 43830.0;   // average month

// Approximate calendar refresh of an age anchor after `extra` simulated
// minutes, using average year/month lengths (no calendar date is available
// mid-simulation).
AgeVector refresh_age(const AgeVector& base, int64_t extra_minutes) {
    double total = base.components[0] * kAgeNormalizers[0] * kMinutesPerYear +
                   base.components[1] * kAgeNormalizers[1] * kMinutesPerMonth +
                   base.components[2] * kAgeNormalizers[2] * kMinutesPerDay +
                   base.components[3] * kAgeNormalizers[3] * 60.0 +
                   base.components[4] * kAgeNormalizers[4];
    total += static_cast<double>(extra_minutes);
    AgeBreakdown a;
    a.years = static_cast<int>(total / kMinutesPerYear);
    total -= a.years * kMinutesPerYear;
    a.months = std::min(11, static_cast<int>(total / kMinutesPerMonth));
    total -= a.months * kMinutesPerMonth;
    a.days = std::min(30, static_cast<int>(total / kMinutesPerDay));
    total -= a.days * kMinutesPerDay;
    a.hours = std::min(23, static_cast<int>(total / 60.0));
    total -= a.hours * 60.0;
    a.minutes = std::min(59, static_cast<int>(total));
    return encode_age(a);
}

}  // namespace

Trajectory generate(Decoder& decoder, const Vocabulary& vocab, const PatientTimeline& prompt,
                    const SamplerConfig& cfg) {
    if (prompt.entries.empty()) throw std::runtime_error("generate: empty prompt");
    if (cfg.max_entries <= 0) throw std::runtime_error("generate: max_entries must be positive");

    Trajectory traj;
    RolloutState state;

    // Replay the prompt to establish admission / adjacency state, then pin
    // the clock to the caller-supplied anchor offset.
    MinuteStamp anchor = prompt.timestamps.back() - cfg.clock_at_prompt_end.elapsed;
    std::vector<TimelineEntry> fed;  // entries in the decoder context
    size_t fed_count = 0;            // prefix of `fed` already given to the decoder
    fed.reserve(prompt.entries.size());
    decoder.reset();
    Eigen::VectorXf logits;
    const AgeVector base_age =
        prompt.entries.size() > 1 && prompt.entries[1].kind == EntryKind::AgeAnchor
            ? prompt.entries[1].age
            : AgeVector{};

    // Slide the window: keep [sex, refreshed age anchor] plus the most
    // recent half-window of entries.
    auto slide = [&]() -> bool {
        int cap = decoder.max_positions();
        int keep = cap / 2 - 2;
        if (keep < 1 || fed.size() < 2 || fed[0].kind != EntryKind::Sex ||
            fed[1].kind != EntryKind::AgeAnchor)
            return false;
        keep = std::min<int>(keep, static_cast<int>(fed.size()) - 2);
        std::vector<TimelineEntry> next;
        next.push_back(fed[0]);
        TimelineEntry age_entry = fed[1];
        age_entry.age = refresh_age(base_age, state.clock().elapsed);
        age_entry.admitted = state.admitted();
        next.push_back(age_entry);
        next.insert(next.end(), fed.end() - keep, fed.end());
        decoder.reset();
        for (const TimelineEntry& e : next) logits = decoder.step(vocab.encode_entry(e));
        fed = std::move(next);
        fed_count = fed.size();
        return true;
    };
    // Feed any unfed context entries, sliding when the cache fills.
    auto feed_all = [&]() -> bool {
        int cap = decoder.max_positions();
        while (fed_count < fed.size()) {
            if (cap > 0 && decoder.positions_used() >= cap) {
                if (!slide()) return false;
                continue;
            }
            logits = decoder.step(vocab.encode_entry(fed[fed_count]));
            ++fed_count;
        }
        return true;
    };

    for (size_t i = 0; i < prompt.entries.size(); ++i) {
        const TimelineEntry& e = prompt.entries[i];
        bool adm = state.advance(e);
        SimStep step;
        step.entry = e;
        step.clock.elapsed = prompt.timestamps[i] - anchor;
        step.clock.time_of_day = time_of_day(prompt.timestamps[i]);
        step.admitted = adm;
        traj.prompt_steps.push_back(step);
        fed.push_back(e);
    }
    state.set_clock(cfg.clock_at_prompt_end);
    if (!feed_all()) {
        traj.stop_reason = StopReason::ContextOverflow;
        return traj;
    }

    Rng rng(cfg.seed);
    traj.stop_reason = StopReason::MaxEntries;
    while (static_cast<int>(traj.generated.size()) < cfg.max_entries) {
        if (state.clock().elapsed >= cfg.horizon_minutes) {
            traj.stop_reason = StopReason::Horizon;
            break;
        }
        Eigen::VectorXf z = logits;
        if (cfg.restrict_structural) restrict_logits(z, vocab, state);
        Eigen::VectorXf p = temperature_softmax(z, cfg.temperature);
        int token = sample_from(p, cfg.greedy, rng);
        TimelineEntry e = vocab.entry_for_token(token, state.active_lab());
        bool adm = state.advance(e);
        e.admitted = adm;
        SimStep step;
        step.entry = e;
        step.clock = state.clock();
        step.admitted = adm;
        traj.generated.push_back(step);
        fed.push_back(e);
        if (e.kind == EntryKind::EndOfTimeline) {
            traj.stop_reason = StopReason::EndToken;
            break;
        }
        if (state.clock().elapsed >= cfg.horizon_minutes) {
            traj.stop_reason = StopReason::Horizon;
            break;
        }
        if (!feed_all()) {
            traj.stop_reason = StopReason::ContextOverflow;
            break;
        }
    }
    return traj;
}

double sequence_logprob(const Transformer& model, const Vocabulary& vocab,
                        const PatientTimeline& tl) {
    std::vector<EncodedEntry> entries = vocab.encode_timeline(tl, /*append_eot=*/false);
    if (entries.size() < 2) return 0.0;
    Mat<float> logits = model.forward_entries(entries);
    double lp = 0.0;
    for (size_t t = 1; t < entries.size(); ++t) {
        Eigen::VectorXf row = logits.row(static_cast<int>(t - 1)).transpose();
        Eigen::VectorXf p = softmax<float>(row);
        double q = p[entries[t].token_id];
        lp += std::log(std::max(q, 1e-45));
    }
    return lp;
}

}  // namespace ttwin
