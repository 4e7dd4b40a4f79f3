#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttwin/bins.hpp"
#include "ttwin/datetime.hpp"

namespace ttwin {

enum class EntryKind {
    Sex,
    AgeAnchor,
    Diagnosis,
    Medication,
    LabCode,
    LabValueBinned,
    LabValueCategorical,
    Admission,
    Discharge,
    DischargeOutcome,
    TimeProgression,
    EndOfTimeline,
};

enum class Outcome { Alive, Deceased };

// One element of the model vocabulary, or its continuous input payload.
struct TimelineEntry {
    EntryKind kind = EntryKind::EndOfTimeline;
    std::string code;                            // dx/rx/lab code, or "F"/"M" for Sex
    std::string text;                            // categorical lab result value
    double raw_value = std::nan("");             // LabValueBinned
    TimeToken time{};                            // TimeProgression
    AgeVector age{};                             // AgeAnchor
    Outcome outcome = Outcome::Alive;            // DischargeOutcome
    bool admitted = false;                       // inside an admission interval
};

// One event line of the canonical JSONL schema.
struct EventRecord {
    MinuteStamp t = 0;
    std::string kind;  // dx | rx | lab | adm | dsc | outcome
    std::string code;
    std::optional<double> num_value;
    std::optional<std::string> str_value;
    std::optional<std::string> outcome;  // alive | deceased
};

struct PatientTimeline {
    std::string patient_id;
    std::string sex;  // "F" | "M"
    MinuteStamp birth = 0;
    std::vector<EventRecord> events;      // canonical (stably time-sorted) order
    std::vector<TimelineEntry> entries;   // tokenizable sequence incl. structural entries
    std::vector<MinuteStamp> timestamps;  // per entry, minute resolution

    bool empty() const { return events.empty(); }
};

struct SimClock {
    int64_t elapsed = 0;      // minutes since simulation start
    int time_of_day = 0;  // minutes since midnight
};

// One position of a simulated (or replayed) trajectory.
struct SimStep {
    TimelineEntry entry;
    SimClock clock;
    bool admitted = false;  // admission state at this step
};

struct EventFlags {
    bool died_in_hospital = false;
    bool target_drug_prescribed = false;
    bool stay_exceeded_horizon = false;
};

// Applies the ordering rules: stable sort by timestamp, [Sex, AgeAnchor]
// prefix, TimeProgression insertion between distinct minutes, forced
// adjacency (value after code, outcome after discharge) and admission flags.
// Throws on schema violations; never silently repairs.
PatientTimeline canonicalize(std::string patient_id, std::string sex, MinuteStamp birth,
                             std::vector<EventRecord> events);

std::vector<PatientTimeline> read_timelines(const std::string& path);
void write_timelines(const std::string& path, std::span<const PatientTimeline> timelines);

PatientTimeline timeline_from_json_line(const std::string& line);
std::string timeline_to_json_line(const PatientTimeline& tl);

EventFlags detect_events(std::span<const SimStep> steps, int64_t horizon_minutes,
                         const std::string& target_drug_code);

}  // namespace ttwin
