#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace raincast {

/// Calendar date with serial-day arithmetic (proleptic Gregorian).
struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  /// Days since 1970-01-01.
  long serial() const {
    int y = year;
    const int m = month;
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + day - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
  }

  static Date from_serial(long z) {
    z += 719468;
    const long era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const long y = static_cast<long>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
  }

  Date next() const { return from_serial(serial() + 1); }
  Date plus(int days) const { return from_serial(serial() + days); }

  std::string iso() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
    return buf;
  }

  static Date parse(const std::string& s) {
    int y, m, d;
    if (std::sscanf(s.c_str(), "%d-%d-%d", &y, &m, &d) != 3)
      throw std::invalid_argument("bad date '" + s + "', expected YYYY-MM-DD");
    if (m < 1 || m > 12 || d < 1 || d > 31)
      throw std::invalid_argument("bad date '" + s + "'");
    Date out{y, m, d};
    if (out.iso() != from_serial(out.serial()).iso())
      throw std::invalid_argument("bad date '" + s + "'");
    return out;
  }

  auto operator<=>(const Date& o) const { return serial() <=> o.serial(); }
  bool operator==(const Date& o) const {
    return year == o.year && month == o.month && day == o.day;
  }
};

}  // namespace raincast
