#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "ttwin/timeline.hpp"

namespace ttwin {

// Empirical-CDF scaler for one lab code. Stores 2,001 quantile breakpoints at
// 1/2000 percentile steps; scaling interpolates linearly between breakpoints
// with midpoint ranks for ties, clamped to [0,1] outside the fitted range.
struct PercentileScaler {
    static constexpr int kBins = 2000;

    std::string lab_code;
    std::vector<double> edges;  // 2001 non-decreasing breakpoints
    size_t n_fit = 0;

    static PercentileScaler fit(std::string lab_code, std::vector<double> values);

    bool degenerate() const { return edges.front() == edges.back(); }

    double scale(double raw) const;    // -> percentile in [0,1]
    double unscale(double pct) const;  // inverse via linear interpolation

    int bin(double raw) const;         // -> [0, 1999]
    double unbin(int bin) const;       // representative raw at the bin midpoint
};

struct Token {
    enum class Kind {
        Sex,
        AgeAnchor,
        Admission,
        Discharge,
        Outcome,
        EndOfTimeline,
        ValueBin,
        Time,
        Diagnosis,
        Medication,
        LabCode,
        LabCategorical,
    };
    Kind kind = Kind::EndOfTimeline;
    std::string code;  // dx/rx/lab code, sex letter, outcome string, categorical value code
    std::string text;  // categorical value text
    int bin = -1;      // ValueBin
    TimeToken time{};  // Time

    std::string key() const;
};

// One model input position: the vocabulary id plus the continuous payload the
// encoder pathways need.
struct EncodedEntry {
    int token_id = -1;
    bool numeric = false;   // numeric-encoder pathway
    double percentile = 0;  // input scalar when numeric
    bool temporal = false;  // temporal-encoder pathway (AgeAnchor)
    AgeVector age{};
    bool admitted = false;
};

// The finite vocabulary: indexed token descriptors, fitted per-lab scalers and
// the shared 2,000 value-bin / time-token id blocks.
class Vocabulary {
  public:
    static Vocabulary build(std::span<const PatientTimeline> corpus);

    int size() const { return static_cast<int>(tokens_.size()); }
    const Token& token(int id) const { return tokens_.at(id); }
    int id_of(const std::string& key) const;
    bool contains(const std::string& key) const { return index_.count(key) > 0; }

    int sex_id(const std::string& sex) const { return id_of("sex:" + sex); }
    int age_anchor_id() const { return 2; }
    int admission_id() const { return 3; }
    int discharge_id() const { return 4; }
    int outcome_id(Outcome o) const { return o == Outcome::Deceased ? 6 : 5; }
    int end_of_timeline_id() const { return 7; }
    int bin_token_id(int bin) const { return kStructural + bin; }
    int time_token_id(const TimeToken& t) const {
        return kStructural + PercentileScaler::kBins + TimeBinTable::token_index(t);
    }
    int first_value_bin_id() const { return kStructural; }
    int first_categorical_id() const {
        return kStructural + PercentileScaler::kBins + TimeBinTable::n_tokens();
    }

    const PercentileScaler& scaler(const std::string& lab_code) const;
    bool has_scaler(const std::string& lab_code) const { return scalers_.count(lab_code) > 0; }
    const std::map<std::string, PercentileScaler>& scalers() const { return scalers_; }

    // Token id for an entry (its identity as a prediction target).
    int id_for_entry(const TimelineEntry& e) const;
    // Inverse mapping: entry template for a sampled token. Value-bin tokens
    // need the preceding lab code to recover a representative raw value.
    TimelineEntry entry_for_token(int id, const std::string& active_lab_code) const;

    std::vector<EncodedEntry> encode_timeline(const PatientTimeline& tl, bool append_eot) const;
    EncodedEntry encode_entry(const TimelineEntry& e) const;

    std::map<std::string, int> composition_stats() const;
    std::string composition_report() const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

  private:
    static constexpr int kStructural = 8;  // sexF, sexM, age, adm, dsc, alive, deceased, eot

    std::vector<Token> tokens_;
    std::unordered_map<std::string, int> index_;
    std::map<std::string, PercentileScaler> scalers_;

    void add(Token t);
    void rebuild_index();
};

}  // namespace ttwin
