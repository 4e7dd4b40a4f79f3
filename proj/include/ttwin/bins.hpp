#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>

#include "ttwin/datetime.hpp"

namespace ttwin {

// Discretized elapsed-time token. Sub-day intervals use 144 ten-minute bins.
// Longer intervals use four day ranges with progressively coarser steps, each
// crossed with a 24-way hour-of-arrival sub-bin.
struct TimeToken {
    bool sub_day = true;
    int sub_bin = 0;   // 0..143 when sub_day
    int range = 0;     // 0..3 when multi-day
    int day_bin = 0;   // coarse bin offset within the range
    int hour_bin = 0;  // 0..23, arrival hour of day

    bool operator==(const TimeToken&) const = default;
};

struct DayRange {
    int lo_day;    // inclusive
    int hi_day;    // exclusive
    int step_day;  // coarse bin width
    int n_bins() const { return (hi_day - lo_day) / step_day; }
};

struct TimeBinTable {
    static constexpr int kSubDayMinutes = 10;
    static constexpr int kSubDayBins = 144;
    static constexpr int kHourBins = 24;
    static constexpr int kMaxDays = 1800;
    static constexpr std::array<DayRange, 4> kRanges = {
        DayRange{1, 31, 1}, DayRange{31, 181, 10}, DayRange{181, 361, 30}, DayRange{361, 1801, 180}};

    static int n_day_bins() {
        int n = 0;
        for (const auto& r : kRanges) n += r.n_bins();
        return n;
    }
    // 144 sub-day tokens + (range, day_bin) x 24 hour tokens.
    static int n_tokens() { return kSubDayBins + n_day_bins() * kHourBins; }

    // elapsed in minutes, arrival_time_of_day in minutes since midnight.
    static TimeToken bin_duration(int64_t elapsed, int arrival_time_of_day) {
        if (elapsed <= 0) throw std::runtime_error("bin_duration: elapsed must be positive");
        if (arrival_time_of_day < 0 || arrival_time_of_day >= kMinutesPerDay)
            throw std::runtime_error("bin_duration: time of day out of range");
        TimeToken t;
        if (elapsed < kMinutesPerDay) {
            t.sub_day = true;
            t.sub_bin = static_cast<int>(elapsed / kSubDayMinutes);
            return t;
        }
        int64_t days = elapsed / kMinutesPerDay;
        if (days > kMaxDays) days = kMaxDays;  // clamp into the final bin
        t.sub_day = false;
        for (int r = 0; r < static_cast<int>(kRanges.size()); ++r) {
            if (days < kRanges[r].hi_day) {
                t.range = r;
                t.day_bin = static_cast<int>((days - kRanges[r].lo_day) / kRanges[r].step_day);
                break;
            }
        }
        t.hour_bin = arrival_time_of_day / 60;
        return t;
    }

    // Representative duration in minutes: sub-day bins map to their midpoint,
    // multi-day bins to the midpoint day of the coarse bin at the midpoint
    // minute of the hour sub-bin.
    static int64_t token_to_duration(const TimeToken& t) {
        if (t.sub_day) {
            if (t.sub_bin < 0 || t.sub_bin >= kSubDayBins)
                throw std::runtime_error("token_to_duration: bad sub-day bin");
            return static_cast<int64_t>(t.sub_bin) * kSubDayMinutes + kSubDayMinutes / 2;
        }
        if (t.range < 0 || t.range >= static_cast<int>(kRanges.size()))
            throw std::runtime_error("token_to_duration: bad range");
        const DayRange& r = kRanges[t.range];
        if (t.day_bin < 0 || t.day_bin >= r.n_bins() || t.hour_bin < 0 || t.hour_bin >= kHourBins)
            throw std::runtime_error("token_to_duration: bad bin");
        double lo = r.lo_day + static_cast<double>(t.day_bin) * r.step_day;
        int64_t mid_day = static_cast<int64_t>(lo + r.step_day / 2.0);
        return mid_day * kMinutesPerDay + t.hour_bin * 60 + 30;
    }

    // Dense index over all time tokens, [0, n_tokens()).
    static int token_index(const TimeToken& t) {
        if (t.sub_day) return t.sub_bin;
        int base = kSubDayBins;
        for (int r = 0; r < t.range; ++r) base += kRanges[r].n_bins() * kHourBins;
        return base + t.day_bin * kHourBins + t.hour_bin;
    }

    static TimeToken token_from_index(int idx) {
        TimeToken t;
        if (idx < kSubDayBins) {
            t.sub_day = true;
            t.sub_bin = idx;
            return t;
        }
        idx -= kSubDayBins;
        t.sub_day = false;
        for (int r = 0; r < static_cast<int>(kRanges.size()); ++r) {
            int span = kRanges[r].n_bins() * kHourBins;
            if (idx < span) {
                t.range = r;
                t.day_bin = idx / kHourBins;
                t.hour_bin = idx % kHourBins;
                return t;
            }
            idx -= span;
        }
        throw std::runtime_error("token_from_index: out of range");
    }
};

// Five-component age encoding, each normalized to [0,1].
struct AgeVector {
    std::array<double, 5> components{};  // years, months, days, hours, minutes

    bool operator==(const AgeVector&) const = default;
};

constexpr std::array<double, 5> kAgeNormalizers = {120.0, 12.0, 31.0, 24.0, 60.0};

inline AgeVector encode_age(const AgeBreakdown& age) {
    if (age.years < 0 || age.months < 0 || age.days < 0 || age.hours < 0 || age.minutes < 0)
        throw std::runtime_error("encode_age: negative age component");
    AgeVector v;
    const double raw[5] = {static_cast<double>(age.years), static_cast<double>(age.months),
                           static_cast<double>(age.days), static_cast<double>(age.hours),
                           static_cast<double>(age.minutes)};
    for (int i = 0; i < 5; ++i) {
        double x = raw[i] / kAgeNormalizers[i];
        v.components[i] = x > 1.0 ? 1.0 : x;
    }
    return v;
}

}  // namespace ttwin
