#include "ttwin/timeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ttwin/logging.hpp"

namespace ttwin {

using nlohmann::json;

PatientTimeline canonicalize(std::string patient_id, std::string sex, MinuteStamp birth,
                             std::vector<EventRecord> events) {
    if (sex != "F" && sex != "M") throw std::runtime_error("canonicalize: sex must be F or M");

    std::stable_sort(events.begin(), events.end(),
                     [](const EventRecord& a, const EventRecord& b) { return a.t < b.t; });

    PatientTimeline tl;
    tl.patient_id = std::move(patient_id);
    tl.sex = sex;
    tl.birth = birth;

    MinuteStamp anchor = events.empty() ? birth : events.front().t;
    if (anchor < birth) throw std::runtime_error("canonicalize: event precedes birth datetime");

    auto push = [&](TimelineEntry e, MinuteStamp t, bool admitted) {
        e.admitted = admitted;
        tl.entries.push_back(std::move(e));
        tl.timestamps.push_back(t);
    };

    TimelineEntry sex_e;
    sex_e.kind = EntryKind::Sex;
    sex_e.code = sex;
    push(sex_e, anchor, false);

    TimelineEntry age_e;
    age_e.kind = EntryKind::AgeAnchor;
    age_e.age = encode_age(age_between(birth, anchor));
    push(age_e, anchor, false);

    bool admitted = false;
    bool expect_outcome = false;  // a Discharge is waiting for its outcome entry
    MinuteStamp prev_t = anchor;

    for (size_t i = 0; i < events.size(); ++i) {
        const EventRecord& ev = events[i];
        if (ev.t < birth) throw std::runtime_error("canonicalize: event precedes birth datetime");
        if (ev.t < prev_t) throw std::runtime_error("canonicalize: timestamp regression");

        if (expect_outcome && !(ev.kind == "outcome" && ev.t == prev_t)) {
            admitted = false;  // discharge without an outcome entry closes the interval
            expect_outcome = false;
        }

        if (ev.t > prev_t) {
            TimelineEntry tp;
            tp.kind = EntryKind::TimeProgression;
            tp.time = TimeBinTable::bin_duration(ev.t - prev_t, time_of_day(ev.t));
            push(tp, ev.t, admitted);
        }

        if (ev.kind == "dx" || ev.kind == "rx") {
            if (ev.code.empty()) throw std::runtime_error("canonicalize: " + ev.kind + " without code");
            TimelineEntry e;
            e.kind = ev.kind == "dx" ? EntryKind::Diagnosis : EntryKind::Medication;
            e.code = ev.code;
            push(e, ev.t, admitted);
        } else if (ev.kind == "lab") {
            if (ev.code.empty())
                throw std::runtime_error("canonicalize: lab value with no preceding lab code");
            TimelineEntry c;
            c.kind = EntryKind::LabCode;
            c.code = ev.code;
            push(c, ev.t, admitted);
            if (ev.num_value) {
                if (!std::isfinite(*ev.num_value))
                    throw std::runtime_error("canonicalize: non-finite lab value");
                TimelineEntry v;
                v.kind = EntryKind::LabValueBinned;
                v.code = ev.code;
                v.raw_value = *ev.num_value;
                push(v, ev.t, admitted);
            } else if (ev.str_value) {
                TimelineEntry v;
                v.kind = EntryKind::LabValueCategorical;
                v.code = ev.code;
                v.text = *ev.str_value;
                push(v, ev.t, admitted);
            }
        } else if (ev.kind == "adm") {
            if (admitted) throw std::runtime_error("canonicalize: overlapping admission intervals");
            admitted = true;
            TimelineEntry e;
            e.kind = EntryKind::Admission;
            push(e, ev.t, admitted);
        } else if (ev.kind == "dsc") {
            if (!admitted) throw std::runtime_error("canonicalize: discharge without admission");
            TimelineEntry e;
            e.kind = EntryKind::Discharge;
            push(e, ev.t, admitted);
            expect_outcome = true;
        } else if (ev.kind == "outcome") {
            if (!expect_outcome)
                throw std::runtime_error("canonicalize: outcome without immediately preceding discharge");
            if (!ev.outcome || (*ev.outcome != "alive" && *ev.outcome != "deceased"))
                throw std::runtime_error("canonicalize: outcome must be alive or deceased");
            TimelineEntry e;
            e.kind = EntryKind::DischargeOutcome;
            e.outcome = *ev.outcome == "deceased" ? Outcome::Deceased : Outcome::Alive;
            push(e, ev.t, admitted);
            expect_outcome = false;
            admitted = false;
        } else {
            throw std::runtime_error("canonicalize: unknown event kind '" + ev.kind + "'");
        }
        prev_t = ev.t;
    }
    if (expect_outcome) admitted = false;

    tl.events = std::move(events);
    return tl;
}

PatientTimeline timeline_from_json_line(const std::string& line) {
    json j = json::parse(line);
    std::vector<EventRecord> events;
    for (const auto& e : j.at("events")) {
        EventRecord r;
        r.t = parse_minute(e.at("t").get<std::string>());
        r.kind = e.at("kind").get<std::string>();
        if (e.contains("code") && !e["code"].is_null()) r.code = e["code"].get<std::string>();
        if (e.contains("value") && !e["value"].is_null()) {
            if (e["value"].is_number())
                r.num_value = e["value"].get<double>();
            else
                r.str_value = e["value"].get<std::string>();
        }
        if (e.contains("outcome") && !e["outcome"].is_null())
            r.outcome = e["outcome"].get<std::string>();
        events.push_back(std::move(r));
    }
    return canonicalize(j.at("patient_id").get<std::string>(), j.at("sex").get<std::string>(),
                        parse_minute(j.at("birth_datetime").get<std::string>()), std::move(events));
}

std::string timeline_to_json_line(const PatientTimeline& tl) {
    nlohmann::ordered_json j;
    j["patient_id"] = tl.patient_id;
    j["sex"] = tl.sex;
    j["birth_datetime"] = format_minute(tl.birth);
    j["events"] = nlohmann::ordered_json::array();
    for (const EventRecord& e : tl.events) {
        nlohmann::ordered_json je;
        je["t"] = format_minute(e.t);
        je["kind"] = e.kind;
        je["code"] = e.code.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(e.code);
        if (e.num_value)
            je["value"] = *e.num_value;
        else if (e.str_value)
            je["value"] = *e.str_value;
        else
            je["value"] = nullptr;
        je["outcome"] = e.outcome ? nlohmann::ordered_json(*e.outcome) : nlohmann::ordered_json();
        j["events"].push_back(std::move(je));
    }
    return j.dump();
}

std::vector<PatientTimeline> read_timelines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_timelines: cannot open " + path);
    std::vector<PatientTimeline> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(timeline_from_json_line(line));
        } catch (const std::exception& ex) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return out;
}

void write_timelines(const std::string& path, std::span<const PatientTimeline> timelines) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_timelines: cannot open " + path);
    for (const PatientTimeline& tl : timelines) out << timeline_to_json_line(tl) << "\n";
}

EventFlags detect_events(std::span<const SimStep> steps, int64_t horizon_minutes,
                         const std::string& target_drug_code) {
    EventFlags flags;
    bool admitted_state = !steps.empty() && steps.front().admitted &&
                          steps.front().entry.kind != EntryKind::Admission;
    bool closing = false;  // Discharge seen, outcome entry may still follow
    for (const SimStep& s : steps) {
        if (s.clock.elapsed >= horizon_minutes) break;
        if (closing && s.entry.kind != EntryKind::DischargeOutcome) {
            admitted_state = false;
            closing = false;
        }
        switch (s.entry.kind) {
            case EntryKind::Admission:
                admitted_state = true;
                break;
            case EntryKind::Discharge:
                closing = true;  // the outcome entry still belongs to the stay
                break;
            case EntryKind::DischargeOutcome:
                if (s.entry.outcome == Outcome::Deceased) {
                    if (admitted_state || closing)
                        flags.died_in_hospital = true;
                    else
                        log_warn("timeline", "deceased outcome outside admission; not counted");
                }
                admitted_state = false;
                closing = false;
                break;
            case EntryKind::Medication:
                if (s.entry.code == target_drug_code) flags.target_drug_prescribed = true;
                break;
            default:
                break;
        }
    }
    if (closing) admitted_state = false;
    flags.stay_exceeded_horizon = admitted_state;
    return flags;
}

}  // namespace ttwin
