#include "nowcast/dates.hpp"

#include <cctype>
#include <cstdio>

#include "nowcast/error.hpp"

namespace nowcast {

int parse_month(const std::string& ym) {
  // Expected form YYYY-MM.
  if (ym.size() != 7 || ym[4] != '-') throw ParseError("bad month '" + ym + "', expected YYYY-MM");
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u}) {
    if (!std::isdigit(static_cast<unsigned char>(ym[i])))
      throw ParseError("bad month '" + ym + "', expected YYYY-MM");
  }
  const int year = std::stoi(ym.substr(0, 4));
  const int month = std::stoi(ym.substr(5, 2));
  if (month < 1 || month > 12) throw ParseError("bad month number in '" + ym + "'");
  return year * 12 + (month - 1);
}

std::string format_month(int index) {
  const int year = index / 12;
  const int month = index % 12 + 1;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d", year, month);
  return buf;
}

bool is_quarter_end(int index) {
  const int month = index % 12 + 1;
  return month == 3 || month == 6 || month == 9 || month == 12;
}

}  // namespace nowcast
