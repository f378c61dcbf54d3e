#pragma once

#include <string>

namespace nowcast {

// Calendar months are indexed as year*12 + (month-1) so that arithmetic on
// the monthly grid is plain integer arithmetic.
int parse_month(const std::string& ym);  // "2020-03" -> index; ParseError otherwise
std::string format_month(int index);     // index -> "2020-03"

// True for March, June, September, December.
bool is_quarter_end(int index);

}  // namespace nowcast
