#pragma once

// ISO-8601 dates and local wall-clock datetimes. No time zones: a timestamp
// is taken at face value.

#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>

#include "cann/error.hpp"

namespace cann::io {

using Date = std::chrono::sys_days;
using DateTime = std::chrono::sys_seconds;

namespace detail {

inline int digits(std::string_view s, std::size_t pos, std::size_t n, std::string_view full) {
  if (pos + n > s.size()) throw DataError("bad date/time '" + std::string(full) + "'");
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    const char c = s[i];
    if (c < '0' || c > '9') throw DataError("bad date/time '" + std::string(full) + "'");
    v = v * 10 + (c - '0');
  }
  return v;
}

}  // namespace detail

/// Parses YYYY-MM-DD.
inline Date parse_date(std::string_view s) {
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') throw DataError("bad date '" + std::string(s) + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{detail::digits(s, 0, 4, s)},
                           month{static_cast<unsigned>(detail::digits(s, 5, 2, s))},
                           day{static_cast<unsigned>(detail::digits(s, 8, 2, s))}};
  if (!ymd.ok()) throw DataError("invalid calendar date '" + std::string(s) + "'");
  if (s.size() != 10) throw DataError("bad date '" + std::string(s) + "'");
  return sys_days{ymd};
}

/// Parses YYYY-MM-DDTHH:MM:SS (a space instead of 'T' is accepted).
inline DateTime parse_datetime(std::string_view s) {
  if (s.size() != 19 || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' || s[16] != ':') {
    throw DataError("bad datetime '" + std::string(s) + "'");
  }
  const Date d = parse_date(s.substr(0, 10));
  const int hh = detail::digits(s, 11, 2, s);
  const int mm = detail::digits(s, 14, 2, s);
  const int ss = detail::digits(s, 17, 2, s);
  if (hh > 23 || mm > 59 || ss > 59) throw DataError("bad time of day in '" + std::string(s) + "'");
  using namespace std::chrono;
  return DateTime{d} + hours{hh} + minutes{mm} + seconds{ss};
}

inline std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

inline std::string format_datetime(DateTime t) {
  using namespace std::chrono;
  const Date d = floor<days>(t);
  const auto secs = (t - DateTime{d}).count();
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%sT%02d:%02d:%02d", format_date(d).c_str(),
                static_cast<int>(secs / 3600), static_cast<int>((secs / 60) % 60),
                static_cast<int>(secs % 60));
  return buf;
}

/// Monday = 0, ..., Sunday = 6.
inline int weekday_index(Date d) {
  const unsigned iso = std::chrono::weekday{d}.iso_encoding();  // Monday = 1 .. Sunday = 7
  return static_cast<int>(iso) - 1;
}

}  // namespace cann::io
