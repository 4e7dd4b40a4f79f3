#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ttwin {

// Absolute datetimes are minutes since the civil epoch 1970-01-01T00:00.
using MinuteStamp = int64_t;

constexpr int64_t kMinutesPerHour = 60;
constexpr int64_t kMinutesPerDay = 1440;

struct CivilMinute {
    int year = 1970;
    int month = 1;  // 1..12
    int day = 1;    // 1..31
    int hour = 0;
    int minute = 0;
};

// Days from civil epoch (Howard Hinnant's algorithm).
inline int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

inline void civil_from_days(int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int64_t yr = static_cast<int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yr + (m <= 2));
}

inline int days_in_month(int y, int m) {
    static const int lens[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2) {
        bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
        return leap ? 29 : 28;
    }
    return lens[m - 1];
}

inline MinuteStamp to_minutes(const CivilMinute& c) {
    return days_from_civil(c.year, c.month, c.day) * kMinutesPerDay + c.hour * 60 + c.minute;
}

inline CivilMinute from_minutes(MinuteStamp t) {
    int64_t days = t / kMinutesPerDay;
    int64_t rem = t % kMinutesPerDay;
    if (rem < 0) {
        rem += kMinutesPerDay;
        days -= 1;
    }
    CivilMinute c;
    civil_from_days(days, c.year, c.month, c.day);
    c.hour = static_cast<int>(rem / 60);
    c.minute = static_cast<int>(rem % 60);
    return c;
}

// Accepts "YYYY-MM-DDTHH:MM" with optional ":SS" and trailing "Z", both ignored
// beyond minute precision.
inline MinuteStamp parse_minute(const std::string& s) {
    CivilMinute c;
    char sep = 0;
    int n = 0;
    int got = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d%n", &c.year, &c.month, &c.day, &sep, &c.hour,
                          &c.minute, &n);
    if (got < 6 || (sep != 'T' && sep != ' '))
        throw std::runtime_error("bad datetime: '" + s + "'");
    if (c.month < 1 || c.month > 12 || c.day < 1 || c.day > days_in_month(c.year, c.month) ||
        c.hour < 0 || c.hour > 23 || c.minute < 0 || c.minute > 59)
        throw std::runtime_error("datetime out of range: '" + s + "'");
    return to_minutes(c);
}

inline std::string format_minute(MinuteStamp t) {
    CivilMinute c = from_minutes(t);
    char buf[24];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d", c.year, c.month, c.day, c.hour,
                  c.minute);
    return buf;
}

inline int time_of_day(MinuteStamp t) {
    int64_t m = t % kMinutesPerDay;
    return static_cast<int>(m < 0 ? m + kMinutesPerDay : m);
}

struct AgeBreakdown {
    int years = 0;
    int months = 0;
    int days = 0;
    int hours = 0;
    int minutes = 0;
};

// Calendar decomposition of (birth, at] into years, months, days, hours,
// minutes, greedily from the largest unit.
inline AgeBreakdown age_between(MinuteStamp birth, MinuteStamp at) {
    if (at < birth) throw std::runtime_error("age_between: event precedes birth");
    CivilMinute b = from_minutes(birth);
    AgeBreakdown a;

    auto advance = [&](int years, int months) {
        CivilMinute c = b;
        int total_m = (c.year * 12 + (c.month - 1)) + years * 12 + months;
        c.year = total_m / 12;
        c.month = total_m % 12 + 1;
        if (c.day > days_in_month(c.year, c.month)) c.day = days_in_month(c.year, c.month);
        return to_minutes(c);
    };

    int lo = 0, hi = 400;
    while (lo < hi) {  // largest y with birth+y years <= at
        int mid = (lo + hi + 1) / 2;
        if (advance(mid, 0) <= at) lo = mid; else hi = mid - 1;
    }
    a.years = lo;
    int mo = 0;
    while (advance(a.years, mo + 1) <= at) ++mo;
    a.months = mo;
    int64_t rest = at - advance(a.years, a.months);
    a.days = static_cast<int>(rest / kMinutesPerDay);
    rest %= kMinutesPerDay;
    a.hours = static_cast<int>(rest / 60);
    a.minutes = static_cast<int>(rest % 60);
    return a;
}

}  // namespace ttwin
