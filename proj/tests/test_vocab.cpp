#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "ttwin/rng.hpp"
#include "ttwin/timeline.hpp"
#include "ttwin/vocab.hpp"

using namespace ttwin;

namespace {

// Brute-force empirical CDF with midpoint ranks, the oracle the scaler's
// breakpoint interpolation must agree with on fitted points.
double ecdf_midrank(const std::vector<double>& sorted, double x) {
    size_t below = 0, equal = 0;
    for (double v : sorted) {
        if (v < x) ++below;
        else if (v == x) ++equal;
    }
    return (static_cast<double>(below) + static_cast<double>(equal) / 2.0) /
           static_cast<double>(sorted.size());
}

EventRecord ev(const std::string& t, const std::string& kind, const std::string& code = "",
               std::optional<double> num = {}, std::optional<std::string> str = {},
               std::optional<std::string> outcome = {}) {
    return {parse_minute(t), kind, code, num, str, outcome};
}

const MinuteStamp kBirth = parse_minute("1958-07-20T10:00");

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
    c.push_back(canonicalize("a", "F", kBirth, e1));
    std::vector<EventRecord> e2 = {ev("2023-02-01T07:00", "adm"),
                                   ev("2023-02-01T08:00", "lab", "CRP", 25.0),
                                   ev("2023-02-02T08:00", "lab", "CRP", 40.0),
                                   ev("2023-02-02T12:00", "dsc"),
                                   ev("2023-02-02T12:00", "outcome", "", {}, {},
                                      std::string("deceased"))};
    c.push_back(canonicalize("b", "M", kBirth, e2));
    return c;
}

}  // namespace

TEST_CASE("scaler boundary behavior") {
    PercentileScaler s = PercentileScaler::fit("CRP", {1, 2, 3, 4, 5});
    CHECK(s.scale(1.0) == 0.0);  // fitted minimum pins the low edge
    CHECK(s.scale(0.5) == 0.0);  // below range clamps
    CHECK(s.scale(99.0) == 1.0);                  // above range clamps
    CHECK(s.scale(3.0) == doctest::Approx(0.5));  // median with midpoint ranks
    CHECK_THROWS(s.scale(std::nan("")));
}

TEST_CASE("scaler agrees with brute-force midrank CDF on fitted values") {
    Rng rng(3);
    std::vector<double> values;
    for (int i = 0; i < 4000; ++i) values.push_back(std::round(rng.normal(50, 12)));  // many ties
    PercentileScaler s = PercentileScaler::fit("X", values);
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 200; ++i) {
        double x = sorted[rng.below(sorted.size())];
        CHECK(s.scale(x) == doctest::Approx(ecdf_midrank(sorted, x)).epsilon(2e-3));
    }
}

TEST_CASE("scaler monotonicity") {
    Rng rng(8);
    std::vector<double> values;
    for (int i = 0; i < 1000; ++i) values.push_back(rng.normal(0, 5));
    PercentileScaler s = PercentileScaler::fit("X", values);
    double prev = -1;
    for (double x = -20; x <= 20; x += 0.05) {
        double p = s.scale(x);
        CHECK(p >= prev);
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        prev = p;
    }
}

TEST_CASE("bin arithmetic and stable round trip") {
    // dense uniform sample over [0,100]
    std::vector<double> values;
    for (int i = 0; i <= 100000; ++i) values.push_back(i / 1000.0);
    PercentileScaler s = PercentileScaler::fit("U", values);
    CHECK(s.bin(0.0) == 0);
    CHECK(s.bin(100.0) == 1999);
    CHECK(s.bin(37.6) == 752);  // floor(0.376 * 2000)
    Rng rng(4);
    for (int i = 0; i < 500; ++i) {
        double x = rng.uniform(0, 100);
        int b = s.bin(x);
        CHECK(s.bin(s.unbin(b)) == b);  // bin-stable round trip
    }
    // unscale(scale(v)) stays within the containing bin's value interval
    for (int i = 0; i < 200; ++i) {
        double x = rng.uniform(0, 100);
        double back = s.unscale(s.scale(x));
        CHECK(back == doctest::Approx(x).epsilon(1e-3));
    }
}

TEST_CASE("degenerate scaler maps everything to the middle bin") {
    PercentileScaler s = PercentileScaler::fit("K", {7.5, 7.5, 7.5});
    CHECK(s.degenerate());
    CHECK(s.bin(-100.0) == 1000);
    CHECK(s.bin(7.5) == 1000);
    CHECK(s.bin(1e9) == 1000);
    CHECK(s.unbin(1000) == doctest::Approx(7.5));
    CHECK_THROWS(s.unbin(2000));
    CHECK_THROWS(s.unbin(-1));
}

TEST_CASE("vocabulary composition by construction") {
    std::vector<PatientTimeline> corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    auto stats = v.composition_stats();
    CHECK(stats.at("diagnoses") == 1);
    CHECK(stats.at("medications") == 1);
    CHECK(stats.at("lab_names") == 2);  // CRP + NA
    CHECK(stats.at("numeric_values") == 2000);
    CHECK(stats.at("time") == TimeBinTable::n_tokens());
    CHECK(stats.at("other") == 9);  // 8 structural + the NA=high categorical
    int total = 0;
    for (auto& [k, n] : stats) total += n;
    CHECK(total == v.size());
    // dense ids, unique keys
    for (int id = 0; id < v.size(); ++id) CHECK(v.id_of(v.token(id).key()) == id);
}

TEST_CASE("vocabulary is order-invariant over the corpus") {
    std::vector<PatientTimeline> corpus = tiny_corpus();
    Vocabulary v1 = Vocabulary::build(corpus);
    std::reverse(corpus.begin(), corpus.end());
    Vocabulary v2 = Vocabulary::build(corpus);
    REQUIRE(v1.size() == v2.size());
    for (int id = 0; id < v1.size(); ++id) CHECK(v1.token(id).key() == v2.token(id).key());
}

TEST_CASE("vocabulary rejects empty corpus") {
    std::vector<PatientTimeline> none;
    CHECK_THROWS(Vocabulary::build(none));
}

TEST_CASE("encode and invert entries") {
    std::vector<PatientTimeline> corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    const PatientTimeline& tl = corpus[0];
    std::vector<EncodedEntry> enc = v.encode_timeline(tl, true);
    REQUIRE(enc.size() == tl.entries.size() + 1);
    CHECK(enc.back().token_id == v.end_of_timeline_id());
    for (size_t i = 0; i < tl.entries.size(); ++i)
        CHECK(enc[i].token_id == v.id_for_entry(tl.entries[i]));

    // numeric pathway payloads
    for (size_t i = 0; i < tl.entries.size(); ++i) {
        const TimelineEntry& e = tl.entries[i];
        if (e.kind == EntryKind::LabValueBinned) {
            CHECK(enc[i].numeric);
            CHECK(enc[i].percentile == doctest::Approx(v.scaler(e.code).scale(e.raw_value)));
        }
        if (e.kind == EntryKind::AgeAnchor) {
            CHECK(enc[i].temporal);
            CHECK(enc[i].age == e.age);
        }
    }

    // token -> entry inversion for a value bin needs the active lab code
    const PercentileScaler& s = v.scaler("CRP");
    int bin = s.bin(25.0);
    TimelineEntry back = v.entry_for_token(v.bin_token_id(bin), "CRP");
    CHECK(back.kind == EntryKind::LabValueBinned);
    CHECK(back.code == "CRP");
    CHECK(s.bin(back.raw_value) == bin);
    CHECK_THROWS(v.entry_for_token(v.bin_token_id(bin), ""));

    // time token inversion
    TimeToken tt = TimeBinTable::bin_duration(35, 0);
    TimelineEntry te = v.entry_for_token(v.time_token_id(tt), "");
    CHECK(te.kind == EntryKind::TimeProgression);
    CHECK(te.time == tt);
}

TEST_CASE("encode rejects unknown codes") {
    std::vector<PatientTimeline> corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    TimelineEntry e;
    e.kind = EntryKind::Diagnosis;
    e.code = "UNSEEN";
    CHECK_THROWS(v.encode_entry(e));
}

TEST_CASE("vocabulary save/load is byte-stable and structure-identical") {
    std::vector<PatientTimeline> corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    const std::string p1 = "vocab_test1.json", p2 = "vocab_test2.json";
    v.save(p1);
    Vocabulary w = Vocabulary::load(p1);
    REQUIRE(w.size() == v.size());
    for (int id = 0; id < v.size(); ++id) CHECK(w.token(id).key() == v.token(id).key());
    CHECK(w.scaler("CRP").edges == v.scaler("CRP").edges);
    w.save(p2);
    std::ifstream f1(p1), f2(p2);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
    CHECK(s1.find("\"version\"") != std::string::npos);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("structural token ids are fixed") {
    std::vector<PatientTimeline> corpus = tiny_corpus();
    Vocabulary v = Vocabulary::build(corpus);
    CHECK(v.sex_id("F") == 0);
    CHECK(v.sex_id("M") == 1);
    CHECK(v.age_anchor_id() == 2);
    CHECK(v.admission_id() == 3);
    CHECK(v.discharge_id() == 4);
    CHECK(v.outcome_id(Outcome::Alive) == 5);
    CHECK(v.outcome_id(Outcome::Deceased) == 6);
    CHECK(v.end_of_timeline_id() == 7);
    CHECK(v.first_value_bin_id() == 8);
    CHECK(v.time_token_id(TimeBinTable::token_from_index(0)) == 2008);
}
