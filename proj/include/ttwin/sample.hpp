#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ttwin/model.hpp"
#include "ttwin/rng.hpp"
#include "ttwin/timeline.hpp"
#include "ttwin/vocab.hpp"

namespace ttwin {

enum class StopReason { Horizon, EndToken, MaxEntries, ContextOverflow };
const char* to_string(StopReason r);

struct SamplerConfig {
    double temperature = 1.0;
    bool greedy = false;
    uint64_t seed = 0;
    int64_t horizon_minutes = 7 * kMinutesPerDay;
    int max_entries = 4096;  // guards against degenerate non-advancing loops
    bool restrict_structural = true;  // renormalize after LabCode/Discharge
    SimClock clock_at_prompt_end{};   // elapsed is measured from the clock anchor
};

struct Trajectory {
    std::vector<SimStep> prompt_steps;
    std::vector<SimStep> generated;
    StopReason stop_reason = StopReason::Horizon;

    std::vector<SimStep> all_steps() const {
        std::vector<SimStep> s = prompt_steps;
        s.insert(s.end(), generated.begin(), generated.end());
        return s;
    }
};

// Tracks the simulation clock, admission state and the forced-adjacency
// context (pending lab code / pending discharge outcome) along a rollout.
class RolloutState {
  public:
    RolloutState() = default;
    explicit RolloutState(SimClock start) : clock_(start) {}

    // Applies one entry; returns the admission flag the entry carries for
    // the model's admission encoding.
    bool advance(const TimelineEntry& e);

    const SimClock& clock() const { return clock_; }
    void set_clock(SimClock c) { clock_ = c; }
    bool admitted() const { return admitted_; }
    bool awaiting_outcome() const { return closing_; }
    const std::string& active_lab() const { return active_lab_; }

  private:
    SimClock clock_{};
    bool admitted_ = false;
    bool closing_ = false;
    std::string active_lab_;
};

// Inverse-CDF draw over the fixed token-id ordering; argmax when greedy.
int sample_from(const Eigen::VectorXf& p, bool greedy, Rng& rng);

Eigen::VectorXf temperature_softmax(const Eigen::VectorXf& logits, double temperature);

// Forced adjacency: after a LabCode only value tokens are allowed, after a
// Discharge only outcome tokens. Disallowed logits are set to -inf.
void restrict_logits(Eigen::VectorXf& logits, const Vocabulary& vocab, const RolloutState& state);

// Minimal decoding interface so rollouts can run against stub models.
class Decoder {
  public:
    virtual ~Decoder() = default;
    virtual void reset() = 0;
    virtual Eigen::VectorXf step(const EncodedEntry& e) = 0;  // logits for the next entry
    virtual int positions_used() const = 0;
    virtual int max_positions() const = 0;  // <= 0 means unbounded
};

class TransformerDecoder : public Decoder {
  public:
    explicit TransformerDecoder(const Transformer& model) : model_(&model) { reset(); }
    void reset() override { cache_.reset(model_->cfg); }
    Eigen::VectorXf step(const EncodedEntry& e) override {
        return model_->forward_cached(cache_, e).transpose();
    }
    int positions_used() const override { return cache_.len; }
    int max_positions() const override { return model_->cfg.d_seq; }

  private:
    const Transformer* model_;
    DecodeCache cache_;
};

// Autoregressive rollout from a canonical prompt.
Trajectory generate(Decoder& decoder, const Vocabulary& vocab, const PatientTimeline& prompt,
                    const SamplerConfig& cfg);

// Sum over scorable positions of log p(e_t | e_1..e_{t-1}).
double sequence_logprob(const Transformer& model, const Vocabulary& vocab,
                        const PatientTimeline& tl);

}  // namespace ttwin
