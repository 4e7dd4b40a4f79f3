#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "ttwin/sample.hpp"

using namespace ttwin;

namespace {

EventRecord ev(const std::string& t, const std::string& kind, const std::string& code = "",
               std::optional<double> num = {}, std::optional<std::string> str = {},
               std::optional<std::string> outcome = {}) {
    return {parse_minute(t), kind, code, num, str, outcome};
}

std::vector<PatientTimeline> tiny_corpus() {
    std::vector<PatientTimeline> c;
    std::vector<EventRecord> e1 = {ev("2023-01-05T07:00", "adm"),
                                   ev("2023-01-05T07:00", "dx", "D1"),
                                   ev("2023-01-05T08:00", "lab", "CRP", 10.0),
                                   ev("2023-01-05T08:00", "lab", "NA", {}, std::string("high")),
                                   ev("2023-01-06T09:00", "rx", "M1"),
                                   ev("2023-01-07T18:00", "dsc"),
                                   ev("2023-01-07T18:00", "outcome", "", {}, {},
                                      std::string("alive"))};
    c.push_back(canonicalize("a", "F", parse_minute("1958-07-20T10:00"), e1));
    std::vector<EventRecord> e2 = {ev("2023-02-01T07:00", "adm"),
                                   ev("2023-02-01T08:00", "lab", "CRP", 25.0),
                                   ev("2023-02-02T08:00", "lab", "CRP", 40.0),
                                   ev("2023-02-02T12:00", "dsc"),
                                   ev("2023-02-02T12:00", "outcome", "", {}, {},
                                      std::string("deceased"))};
    c.push_back(canonicalize("b", "M", parse_minute("1958-07-20T10:00"), e2));
    return c;
}

// Prompt cut just after the first lab value: an open admission mid-stay.
PatientTimeline open_prompt(const PatientTimeline& tl, size_t n_entries) {
    PatientTimeline p = tl;
    p.entries.resize(n_entries);
    p.timestamps.resize(n_entries);
    return p;
}

// Emits a constant preference for one token, regardless of context.
class FixedDecoder : public Decoder {
  public:
    FixedDecoder(int vocab_size, int favored) : v_(vocab_size), favored_(favored) {}
    void reset() override { used_ = 0; }
    Eigen::VectorXf step(const EncodedEntry&) override {
        ++used_;
        Eigen::VectorXf z = Eigen::VectorXf::Zero(v_);
        z[favored_] = 50.0f;
        return z;
    }
    int positions_used() const override { return used_; }
    int max_positions() const override { return 0; }

  private:
    int v_, favored_, used_ = 0;
};

// Reference decoder: re-runs the full (uncached) forward pass every step.
class UncachedDecoder : public Decoder {
  public:
    explicit UncachedDecoder(const Transformer& m) : model_(&m) {}
    void reset() override { entries_.clear(); }
    Eigen::VectorXf step(const EncodedEntry& e) override {
        entries_.push_back(e);
        Mat<float> logits = model_->forward_entries(entries_);
        return logits.row(logits.rows() - 1).transpose();
    }
    int positions_used() const override { return static_cast<int>(entries_.size()); }
    int max_positions() const override { return model_->cfg.d_seq; }

  private:
    const Transformer* model_;
    std::vector<EncodedEntry> entries_;
};

}  // namespace

TEST_CASE("stop reasons have stable names") {
    CHECK(std::string(to_string(StopReason::Horizon)) == "horizon");
    CHECK(std::string(to_string(StopReason::EndToken)) == "end_token");
    CHECK(std::string(to_string(StopReason::MaxEntries)) == "max_entries");
    CHECK(std::string(to_string(StopReason::ContextOverflow)) == "context_overflow");
}

TEST_CASE("sample_from: one-hot mass and greedy argmax") {
    Rng rng(1);
    Eigen::VectorXf p = Eigen::VectorXf::Zero(6);
    p[4] = 1.0f;
    for (int i = 0; i < 100; ++i) CHECK(sample_from(p, false, rng) == 4);
    CHECK(sample_from(p, true, rng) == 4);
    Eigen::VectorXf q(4);
    q << 0.1f, 0.2f, 0.6f, 0.1f;
    CHECK(sample_from(q, true, rng) == 2);
    Eigen::VectorXf empty;
    CHECK_THROWS(sample_from(empty, false, rng));
}

TEST_CASE("temperature softmax: simplex, masking, zero-temperature limit") {
    Eigen::VectorXf z(5);
    z << 1, 3, 2, -1, 0;
    Eigen::VectorXf p = temperature_softmax(z, 1.0);
    CHECK(p.sum() == doctest::Approx(1.0f).epsilon(1e-6));
    CHECK(p.minCoeff() > 0.0f);
    CHECK(p[1] > p[2]);

    Eigen::VectorXf cold = temperature_softmax(z, 1e-3);
    CHECK(cold[1] == doctest::Approx(1.0f).epsilon(1e-5));  // max takes all the mass

    const float inf = std::numeric_limits<float>::infinity();
    Eigen::VectorXf m = z;
    m[1] = -inf;
    m[3] = -inf;
    Eigen::VectorXf pm = temperature_softmax(m, 1.0);
    CHECK(pm[1] == 0.0f);
    CHECK(pm[3] == 0.0f);
    CHECK(pm.sum() == doctest::Approx(1.0f).epsilon(1e-6));

    Eigen::VectorXf all_masked = Eigen::VectorXf::Constant(3, -inf);
    CHECK_THROWS(temperature_softmax(all_masked, 1.0));
    Eigen::VectorXf with_nan = z;
    with_nan[0] = std::nanf("");
    CHECK_THROWS(temperature_softmax(with_nan, 1.0));
    CHECK_THROWS(temperature_softmax(z, 0.0));
    CHECK_THROWS(temperature_softmax(z, -1.0));
}

TEST_CASE("sampled frequencies concentrate on the distribution") {
    Rng rng(77);
    Eigen::VectorXf p(2);
    p << 0.75f, 0.25f;
    int hits = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) hits += (sample_from(p, false, rng) == 0);
    double f = static_cast<double>(hits) / n;
    CHECK(std::abs(f - 0.75) < 0.013);  // 3 sigma
}

TEST_CASE("sampled draws pass a chi-square goodness-of-fit") {
    Rng rng(91);
    const int k = 10, n = 100000;
    Eigen::VectorXf p(k);
    for (int i = 0; i < k; ++i) p[i] = 1.0f + static_cast<float>(i % 4);
    p /= p.sum();
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) ++counts[sample_from(p, false, rng)];
    double chi2 = 0;
    for (int i = 0; i < k; ++i) {
        double expect = static_cast<double>(p[i]) * n;
        chi2 += (counts[i] - expect) * (counts[i] - expect) / expect;
    }
    CHECK(chi2 < 27.877);  // df = 9, alpha = 0.001
}

TEST_CASE("forced adjacency restriction") {
    auto corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    auto finite_ids = [&](const Eigen::VectorXf& z) {
        std::vector<int> ids;
        for (int i = 0; i < z.size(); ++i)
            if (std::isfinite(z[i])) ids.push_back(i);
        return ids;
    };

    // after a lab code: only its value bins (no categorical fitted for CRP)
    RolloutState st;
    TimelineEntry lab;
    lab.kind = EntryKind::LabCode;
    lab.code = "CRP";
    st.advance(lab);
    Eigen::VectorXf z = Eigen::VectorXf::Zero(v.size());
    restrict_logits(z, v, st);
    std::vector<int> ids = finite_ids(z);
    CHECK(static_cast<int>(ids.size()) == PercentileScaler::kBins);
    CHECK(ids.front() == v.first_value_bin_id());

    // a categorical lab admits its own categorical token as well
    RolloutState st_na;
    TimelineEntry na = lab;
    na.code = "NA";
    st_na.advance(na);
    z = Eigen::VectorXf::Zero(v.size());
    restrict_logits(z, v, st_na);
    ids = finite_ids(z);
    CHECK(static_cast<int>(ids.size()) == PercentileScaler::kBins + 1);
    CHECK(v.token(ids.back()).kind == Token::Kind::LabCategorical);
    CHECK(v.token(ids.back()).code == "NA");

    // after a discharge: only the two outcomes
    RolloutState st_dsc;
    TimelineEntry dsc;
    dsc.kind = EntryKind::Discharge;
    st_dsc.advance(dsc);
    z = Eigen::VectorXf::Zero(v.size());
    restrict_logits(z, v, st_dsc);
    ids = finite_ids(z);
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] == v.outcome_id(Outcome::Alive));
    CHECK(ids[1] == v.outcome_id(Outcome::Deceased));

    // default state: values, outcomes, sex/age prefix and categoricals are out
    RolloutState st_free;
    z = Eigen::VectorXf::Zero(v.size());
    restrict_logits(z, v, st_free);
    CHECK(!std::isfinite(z[v.first_value_bin_id()]));
    CHECK(!std::isfinite(z[v.outcome_id(Outcome::Alive)]));
    CHECK(!std::isfinite(z[v.sex_id("F")]));
    CHECK(!std::isfinite(z[v.age_anchor_id()]));
    CHECK(std::isfinite(z[v.admission_id()]));
    CHECK(std::isfinite(z[v.discharge_id()]));
    CHECK(std::isfinite(z[v.end_of_timeline_id()]));
    CHECK(std::isfinite(z[v.id_of(v.token(v.first_categorical_id()).key()) == -1
                              ? v.admission_id()
                              : v.first_categorical_id()]) ==
          (v.token(v.first_categorical_id()).kind != Token::Kind::LabCategorical));
}

TEST_CASE("generate stops immediately at a zero horizon") {
    auto corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    PatientTimeline prompt = open_prompt(corpus[0], 7);  // through the CRP value
    FixedDecoder dec(v.size(), v.end_of_timeline_id());
    SamplerConfig cfg;
    cfg.horizon_minutes = 0;
    Trajectory t = generate(dec, v, prompt, cfg);
    CHECK(t.generated.empty());
    CHECK(t.stop_reason == StopReason::Horizon);
    CHECK(t.prompt_steps.size() == prompt.entries.size());
}

TEST_CASE("generate stops on the end token") {
    auto corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    PatientTimeline prompt = open_prompt(corpus[0], 7);
    FixedDecoder dec(v.size(), v.end_of_timeline_id());
    SamplerConfig cfg;
    cfg.greedy = true;
    Trajectory t = generate(dec, v, prompt, cfg);
    CHECK(t.stop_reason == StopReason::EndToken);
    REQUIRE(t.generated.size() == 1);
    CHECK(t.generated.back().entry.kind == EntryKind::EndOfTimeline);
    CHECK(t.all_steps().size() == prompt.entries.size() + 1);
}

TEST_CASE("generate stops on the entry cap when nothing advances time") {
    auto corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    PatientTimeline prompt = open_prompt(corpus[0], 7);
    FixedDecoder dec(v.size(), v.id_of("dx:D1"));
    SamplerConfig cfg;
    cfg.greedy = true;
    cfg.max_entries = 7;
    Trajectory t = generate(dec, v, prompt, cfg);
    CHECK(t.stop_reason == StopReason::MaxEntries);
    CHECK(t.generated.size() == 7);
    for (const SimStep& s : t.generated) CHECK(s.clock.elapsed == 0);
}

TEST_CASE("the clock is monotone and the horizon-crossing entry is last") {
    auto corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    PatientTimeline prompt = open_prompt(corpus[0], 7);
    TimeToken tt = TimeBinTable::token_from_index(0);  // shortest sub-day bin
    const int64_t dur = TimeBinTable::token_to_duration(tt);
    REQUIRE(dur > 0);
    FixedDecoder dec(v.size(), v.time_token_id(tt));
    SamplerConfig cfg;
    cfg.greedy = true;
    cfg.horizon_minutes = 60;
    Trajectory t = generate(dec, v, prompt, cfg);
    CHECK(t.stop_reason == StopReason::Horizon);
    int64_t prev = 0;
    for (const SimStep& s : t.generated) {
        CHECK(s.clock.elapsed == prev + dur);
        prev = s.clock.elapsed;
    }
    // every step but the last is inside the horizon; the last crosses it
    REQUIRE(!t.generated.empty());
    CHECK(t.generated.back().clock.elapsed >= 60);
    for (size_t i = 0; i + 1 < t.generated.size(); ++i)
        CHECK(t.generated[i].clock.elapsed < 60);
}

TEST_CASE("cached decoding generates the same greedy trajectory as full recompute") {
    auto corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    auto model = Transformer::init_params(ModelConfig::tiny(v.size()), 19);
    PatientTimeline prompt = open_prompt(corpus[0], 7);

    SamplerConfig cfg;
    cfg.greedy = true;
    cfg.max_entries = 24;
    cfg.horizon_minutes = 3 * kMinutesPerDay;
    TransformerDecoder cached(model);
    UncachedDecoder full(model);
    Trajectory a = generate(cached, v, prompt, cfg);
    Trajectory b = generate(full, v, prompt, cfg);
    CHECK(a.stop_reason == b.stop_reason);
    REQUIRE(a.generated.size() == b.generated.size());
    for (size_t i = 0; i < a.generated.size(); ++i) {
        CHECK(v.id_for_entry(a.generated[i].entry) == v.id_for_entry(b.generated[i].entry));
        CHECK(a.generated[i].clock.elapsed == b.generated[i].clock.elapsed);
    }
    // restriction invariant holds along the rollout
    for (const SimStep& s : a.generated) {
        CHECK(s.entry.kind != EntryKind::Sex);
        CHECK(s.entry.kind != EntryKind::AgeAnchor);
    }
}

TEST_CASE("generation is deterministic in the seed") {
    auto corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    auto model = Transformer::init_params(ModelConfig::tiny(v.size()), 19);
    PatientTimeline prompt = open_prompt(corpus[0], 7);
    SamplerConfig cfg;
    cfg.seed = 5;
    cfg.max_entries = 16;
    auto run = [&]() {
        TransformerDecoder dec(model);
        return generate(dec, v, prompt, cfg);
    };
    Trajectory a = run(), b = run();
    REQUIRE(a.generated.size() == b.generated.size());
    for (size_t i = 0; i < a.generated.size(); ++i)
        CHECK(v.id_for_entry(a.generated[i].entry) == v.id_for_entry(b.generated[i].entry));
    cfg.seed = 6;
    TransformerDecoder dec(model);
    Trajectory c = generate(dec, v, prompt, cfg);
    bool differs = c.generated.size() != a.generated.size();
    for (size_t i = 0; !differs && i < a.generated.size(); ++i)
        differs = v.id_for_entry(a.generated[i].entry) != v.id_for_entry(c.generated[i].entry);
    CHECK(differs);
}

TEST_CASE("a zero-parameter model scores sequences uniformly") {
    auto corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    Transformer zero(ModelConfig::tiny(v.size()));  // all parameters zero
    const PatientTimeline& tl = corpus[1];
    double lp = sequence_logprob(zero, v, tl);
    double expect = -static_cast<double>(tl.entries.size() - 1) *
                    std::log(static_cast<double>(v.size()));
    CHECK(lp == doctest::Approx(expect).epsilon(1e-4));
    auto trained = Transformer::init_params(ModelConfig::tiny(v.size()), 2);
    CHECK(sequence_logprob(trained, v, tl) < 0.0);
}
