#include "ttwin/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ttwin {

using nlohmann::ordered_json;

PercentileScaler PercentileScaler::fit(std::string lab_code, std::vector<double> values) {
    if (values.empty()) throw std::runtime_error("PercentileScaler: no values for " + lab_code);
    for (double v : values)
        if (!std::isfinite(v)) throw std::runtime_error("PercentileScaler: non-finite value");
    std::sort(values.begin(), values.end());

    PercentileScaler s;
    s.lab_code = std::move(lab_code);
    s.n_fit = values.size();
    s.edges.resize(kBins + 1);
    const size_t n = values.size();
    for (int q = 0; q <= kBins; ++q) {
        double pos = static_cast<double>(q) / kBins * static_cast<double>(n - 1);
        size_t i = static_cast<size_t>(pos);
        double frac = pos - static_cast<double>(i);
        s.edges[q] = i + 1 < n ? values[i] + (values[i + 1] - values[i]) * frac : values[n - 1];
    }
    return s;
}

double PercentileScaler::scale(double raw) const {
    if (!std::isfinite(raw)) throw std::runtime_error("PercentileScaler: non-finite raw value");
    if (degenerate()) return 0.5;  // < 2 distinct fitted values: everything maps to bin 1000
    if (raw <= edges.front()) return 0.0;
    if (raw >= edges.back()) return 1.0;
    auto lo = std::lower_bound(edges.begin(), edges.end(), raw);
    auto hi = std::upper_bound(lo, edges.end(), raw);
    if (lo != hi) {
        // raw coincides with a (possibly repeated) breakpoint: midpoint rank
        double i = static_cast<double>(lo - edges.begin());
        double j = static_cast<double>(hi - edges.begin()) - 1.0;
        return (i + j) / 2.0 / kBins;
    }
    size_t k = static_cast<size_t>(lo - edges.begin()) - 1;
    double frac = (raw - edges[k]) / (edges[k + 1] - edges[k]);
    return (static_cast<double>(k) + frac) / kBins;
}

double PercentileScaler::unscale(double pct) const {
    if (!(pct >= 0.0 && pct <= 1.0)) throw std::runtime_error("PercentileScaler: pct out of [0,1]");
    double x = pct * kBins;
    size_t k = static_cast<size_t>(x);
    if (k >= static_cast<size_t>(kBins)) return edges.back();
    return edges[k] + (edges[k + 1] - edges[k]) * (x - static_cast<double>(k));
}

int PercentileScaler::bin(double raw) const {
    int b = static_cast<int>(scale(raw) * kBins);
    return b > kBins - 1 ? kBins - 1 : b;
}

double PercentileScaler::unbin(int b) const {
    if (b < 0 || b >= kBins) throw std::runtime_error("PercentileScaler: bin out of range");
    return unscale((b + 0.5) / kBins);
}

std::string Token::key() const {
    switch (kind) {
        case Kind::Sex: return "sex:" + code;
        case Kind::AgeAnchor: return "age";
        case Kind::Admission: return "adm";
        case Kind::Discharge: return "dsc";
        case Kind::Outcome: return "out:" + code;
        case Kind::EndOfTimeline: return "eot";
        case Kind::ValueBin: return "bin:" + std::to_string(bin);
        case Kind::Time: return "time:" + std::to_string(TimeBinTable::token_index(time));
        case Kind::Diagnosis: return "dx:" + code;
        case Kind::Medication: return "rx:" + code;
        case Kind::LabCode: return "lab:" + code;
        case Kind::LabCategorical: return "labcat:" + code + "=" + text;
    }
    return "?";
}

void Vocabulary::add(Token t) {
    index_.emplace(t.key(), static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(t));
}

void Vocabulary::rebuild_index() {
    index_.clear();
    for (size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i].key(), static_cast<int>(i));
}

int Vocabulary::id_of(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw std::runtime_error("vocabulary: unknown token key '" + key + "'");
    return it->second;
}

Vocabulary Vocabulary::build(std::span<const PatientTimeline> corpus) {
    if (corpus.empty()) throw std::runtime_error("build_vocabulary: empty corpus");

    std::set<std::string> dx, rx, labs;
    std::set<std::pair<std::string, std::string>> labcat;
    std::map<std::string, std::vector<double>> numeric;

    for (const PatientTimeline& tl : corpus) {
        for (const TimelineEntry& e : tl.entries) {
            switch (e.kind) {
                case EntryKind::Diagnosis: dx.insert(e.code); break;
                case EntryKind::Medication: rx.insert(e.code); break;
                case EntryKind::LabCode: labs.insert(e.code); break;
                case EntryKind::LabValueBinned: numeric[e.code].push_back(e.raw_value); break;
                case EntryKind::LabValueCategorical: labcat.emplace(e.code, e.text); break;
                default: break;
            }
        }
    }

    Vocabulary v;
    for (const char* s : {"F", "M"}) v.add(Token{Token::Kind::Sex, s});
    v.add(Token{Token::Kind::AgeAnchor});
    v.add(Token{Token::Kind::Admission});
    v.add(Token{Token::Kind::Discharge});
    v.add(Token{Token::Kind::Outcome, "alive"});
    v.add(Token{Token::Kind::Outcome, "deceased"});
    v.add(Token{Token::Kind::EndOfTimeline});
    for (int b = 0; b < PercentileScaler::kBins; ++b) {
        Token t;
        t.kind = Token::Kind::ValueBin;
        t.bin = b;
        v.add(std::move(t));
    }
    for (int i = 0; i < TimeBinTable::n_tokens(); ++i) {
        Token t;
        t.kind = Token::Kind::Time;
        t.time = TimeBinTable::token_from_index(i);
        v.add(std::move(t));
    }
    for (const auto& c : dx) v.add(Token{Token::Kind::Diagnosis, c});
    for (const auto& c : rx) v.add(Token{Token::Kind::Medication, c});
    for (const auto& c : labs) v.add(Token{Token::Kind::LabCode, c});
    for (const auto& [c, val] : labcat) {
        Token t;
        t.kind = Token::Kind::LabCategorical;
        t.code = c;
        t.text = val;
        v.add(std::move(t));
    }
    for (auto& [code, values] : numeric)
        v.scalers_.emplace(code, PercentileScaler::fit(code, std::move(values)));
    return v;
}

const PercentileScaler& Vocabulary::scaler(const std::string& lab_code) const {
    auto it = scalers_.find(lab_code);
    if (it == scalers_.end())
        throw std::runtime_error("vocabulary: no scaler for lab code '" + lab_code + "'");
    return it->second;
}

int Vocabulary::id_for_entry(const TimelineEntry& e) const {
    switch (e.kind) {
        case EntryKind::Sex: return id_of("sex:" + e.code);
        case EntryKind::AgeAnchor: return age_anchor_id();
        case EntryKind::Admission: return admission_id();
        case EntryKind::Discharge: return discharge_id();
        case EntryKind::DischargeOutcome: return outcome_id(e.outcome);
        case EntryKind::EndOfTimeline: return end_of_timeline_id();
        case EntryKind::Diagnosis: return id_of("dx:" + e.code);
        case EntryKind::Medication: return id_of("rx:" + e.code);
        case EntryKind::LabCode: return id_of("lab:" + e.code);
        case EntryKind::LabValueCategorical: return id_of("labcat:" + e.code + "=" + e.text);
        case EntryKind::LabValueBinned: return bin_token_id(scaler(e.code).bin(e.raw_value));
        case EntryKind::TimeProgression: return time_token_id(e.time);
    }
    throw std::runtime_error("vocabulary: unmappable entry");
}

TimelineEntry Vocabulary::entry_for_token(int id, const std::string& active_lab_code) const {
    const Token& t = token(id);
    TimelineEntry e;
    switch (t.kind) {
        case Token::Kind::Sex:
            e.kind = EntryKind::Sex;
            e.code = t.code;
            break;
        case Token::Kind::AgeAnchor: e.kind = EntryKind::AgeAnchor; break;
        case Token::Kind::Admission: e.kind = EntryKind::Admission; break;
        case Token::Kind::Discharge: e.kind = EntryKind::Discharge; break;
        case Token::Kind::Outcome:
            e.kind = EntryKind::DischargeOutcome;
            e.outcome = t.code == "deceased" ? Outcome::Deceased : Outcome::Alive;
            break;
        case Token::Kind::EndOfTimeline: e.kind = EntryKind::EndOfTimeline; break;
        case Token::Kind::ValueBin:
            if (active_lab_code.empty())
                throw std::runtime_error("entry_for_token: value bin with no active lab code");
            e.kind = EntryKind::LabValueBinned;
            e.code = active_lab_code;
            e.raw_value = scaler(active_lab_code).unbin(t.bin);
            break;
        case Token::Kind::Time:
            e.kind = EntryKind::TimeProgression;
            e.time = t.time;
            break;
        case Token::Kind::Diagnosis:
            e.kind = EntryKind::Diagnosis;
            e.code = t.code;
            break;
        case Token::Kind::Medication:
            e.kind = EntryKind::Medication;
            e.code = t.code;
            break;
        case Token::Kind::LabCode:
            e.kind = EntryKind::LabCode;
            e.code = t.code;
            break;
        case Token::Kind::LabCategorical:
            e.kind = EntryKind::LabValueCategorical;
            e.code = t.code;
            e.text = t.text;
            break;
    }
    return e;
}

EncodedEntry Vocabulary::encode_entry(const TimelineEntry& e) const {
    EncodedEntry enc;
    enc.token_id = id_for_entry(e);
    enc.admitted = e.admitted;
    if (e.kind == EntryKind::LabValueBinned) {
        enc.numeric = true;
        enc.percentile = scaler(e.code).scale(e.raw_value);
    } else if (e.kind == EntryKind::AgeAnchor) {
        enc.temporal = true;
        enc.age = e.age;
    }
    return enc;
}

std::vector<EncodedEntry> Vocabulary::encode_timeline(const PatientTimeline& tl,
                                                      bool append_eot) const {
    std::vector<EncodedEntry> out;
    out.reserve(tl.entries.size() + 1);
    for (const TimelineEntry& e : tl.entries) out.push_back(encode_entry(e));
    if (append_eot) {
        EncodedEntry eot;
        eot.token_id = end_of_timeline_id();
        out.push_back(eot);
    }
    return out;
}

std::map<std::string, int> Vocabulary::composition_stats() const {
    std::map<std::string, int> stats = {{"diagnoses", 0},     {"numeric_values", 0},
                                        {"lab_names", 0},     {"medications", 0},
                                        {"time", 0},          {"other", 0}};
    for (const Token& t : tokens_) {
        switch (t.kind) {
            case Token::Kind::Diagnosis: ++stats["diagnoses"]; break;
            case Token::Kind::ValueBin: ++stats["numeric_values"]; break;
            case Token::Kind::LabCode: ++stats["lab_names"]; break;
            case Token::Kind::Medication: ++stats["medications"]; break;
            case Token::Kind::Time: ++stats["time"]; break;
            default: ++stats["other"]; break;
        }
    }
    return stats;
}

std::string Vocabulary::composition_report() const {
    auto stats = composition_stats();
    std::ostringstream os;
    os << "vocabulary: " << size() << " unique items";
    const char* order[] = {"diagnoses", "numeric_values", "lab_names", "medications", "time", "other"};
    for (const char* k : order) {
        double pct = 100.0 * stats[k] / size();
        char buf[64];
        std::snprintf(buf, sizeof buf, ", %s %.1f%%", k, pct);
        os << buf;
    }
    return os.str();
}

static ordered_json token_to_json(const Token& t) {
    ordered_json j;
    switch (t.kind) {
        case Token::Kind::Sex: j["k"] = "sex"; j["c"] = t.code; break;
        case Token::Kind::AgeAnchor: j["k"] = "age"; break;
        case Token::Kind::Admission: j["k"] = "adm"; break;
        case Token::Kind::Discharge: j["k"] = "dsc"; break;
        case Token::Kind::Outcome: j["k"] = "out"; j["c"] = t.code; break;
        case Token::Kind::EndOfTimeline: j["k"] = "eot"; break;
        case Token::Kind::ValueBin: j["k"] = "bin"; j["b"] = t.bin; break;
        case Token::Kind::Time: j["k"] = "time"; j["i"] = TimeBinTable::token_index(t.time); break;
        case Token::Kind::Diagnosis: j["k"] = "dx"; j["c"] = t.code; break;
        case Token::Kind::Medication: j["k"] = "rx"; j["c"] = t.code; break;
        case Token::Kind::LabCode: j["k"] = "lab"; j["c"] = t.code; break;
        case Token::Kind::LabCategorical:
            j["k"] = "labcat";
            j["c"] = t.code;
            j["v"] = t.text;
            break;
    }
    return j;
}

static Token token_from_json(const ordered_json& j) {
    Token t;
    const std::string k = j.at("k").get<std::string>();
    if (k == "sex") { t.kind = Token::Kind::Sex; t.code = j.at("c"); }
    else if (k == "age") t.kind = Token::Kind::AgeAnchor;
    else if (k == "adm") t.kind = Token::Kind::Admission;
    else if (k == "dsc") t.kind = Token::Kind::Discharge;
    else if (k == "out") { t.kind = Token::Kind::Outcome; t.code = j.at("c"); }
    else if (k == "eot") t.kind = Token::Kind::EndOfTimeline;
    else if (k == "bin") { t.kind = Token::Kind::ValueBin; t.bin = j.at("b"); }
    else if (k == "time") { t.kind = Token::Kind::Time; t.time = TimeBinTable::token_from_index(j.at("i")); }
    else if (k == "dx") { t.kind = Token::Kind::Diagnosis; t.code = j.at("c"); }
    else if (k == "rx") { t.kind = Token::Kind::Medication; t.code = j.at("c"); }
    else if (k == "lab") { t.kind = Token::Kind::LabCode; t.code = j.at("c"); }
    else if (k == "labcat") { t.kind = Token::Kind::LabCategorical; t.code = j.at("c"); t.text = j.at("v"); }
    else throw std::runtime_error("vocabulary: unknown token kind '" + k + "'");
    return t;
}

void Vocabulary::save(const std::string& path) const {
    ordered_json j;
    j["version"] = 1;
    j["tokens"] = ordered_json::array();
    for (const Token& t : tokens_) j["tokens"].push_back(token_to_json(t));
    j["scalers"] = ordered_json::object();
    for (const auto& [code, s] : scalers_) {
        ordered_json js;
        js["edges"] = s.edges;
        js["n"] = s.n_fit;
        j["scalers"][code] = std::move(js);
    }
    j["time_table"] = ordered_json::object();
    j["time_table"]["sub_day_minutes"] = TimeBinTable::kSubDayMinutes;
    j["time_table"]["sub_day_bins"] = TimeBinTable::kSubDayBins;
    j["time_table"]["hour_bins"] = TimeBinTable::kHourBins;
    auto ranges = ordered_json::array();
    for (const DayRange& r : TimeBinTable::kRanges)
        ranges.push_back({{"lo_day", r.lo_day}, {"hi_day", r.hi_day}, {"step_day", r.step_day}});
    j["time_table"]["day_ranges"] = std::move(ranges);
    j["age_normalizers"] = kAgeNormalizers;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("vocabulary: cannot open " + path);
    out << j.dump(2) << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("vocabulary: cannot open " + path);
    ordered_json j = ordered_json::parse(in);
    if (j.at("version").get<int>() != 1) throw std::runtime_error("vocabulary: unsupported version");
    Vocabulary v;
    for (const auto& jt : j.at("tokens")) v.tokens_.push_back(token_from_json(jt));
    v.rebuild_index();
    for (const auto& [code, js] : j.at("scalers").items()) {
        PercentileScaler s;
        s.lab_code = code;
        s.edges = js.at("edges").get<std::vector<double>>();
        s.n_fit = js.at("n").get<size_t>();
        if (s.edges.size() != PercentileScaler::kBins + 1)
            throw std::runtime_error("vocabulary: scaler for " + code + " has bad edge count");
        v.scalers_.emplace(code, std::move(s));
    }
    return v;
}

}  // namespace ttwin
