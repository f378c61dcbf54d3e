#include "nowcast/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nowcast/dates.hpp"
#include "nowcast/error.hpp"
#include "nowcast/format.hpp"

namespace nowcast {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double parse_double(const std::string& s, std::size_t row) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ParseError("row " + std::to_string(row) + ": non-numeric value '" + s + "'", row);
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

void Panel::set_cell(std::size_t t, std::size_t d, double v) {
  values(t, d) = v;
  mask[t * cols() + d] = 1;
}

void Panel::clear_cell(std::size_t t, std::size_t d) {
  values(t, d) = kNan;
  mask[t * cols() + d] = 0;
}

std::size_t Panel::column_of(const std::string& id) const {
  for (std::size_t d = 0; d < metas.size(); ++d)
    if (metas[d].id == id) return d;
  throw ConfigError("unknown indicator id '" + id + "'");
}

std::vector<std::size_t> Panel::group_columns(const std::string& group) const {
  std::vector<std::size_t> out;
  for (std::size_t d = 0; d < metas.size(); ++d) {
    const auto& g = metas[d].groups;
    if (std::find(g.begin(), g.end(), group) != g.end()) out.push_back(d);
  }
  return out;
}

void Panel::validate() const {
  const std::size_t t_count = rows(), d_count = cols();
  if (values.rows() != t_count || values.cols() != d_count || mask.size() != t_count * d_count)
    throw ConfigError("panel: inconsistent shapes");
  for (std::size_t i = 1; i < months.size(); ++i)
    if (months[i] != months[i - 1] + 1) throw ConfigError("panel: month grid not contiguous");
  std::set<std::string> ids;
  for (const auto& m : metas) {
    if (!ids.insert(m.id).second) throw ConfigError("panel: duplicate indicator id '" + m.id + "'");
    if (m.groups.empty()) throw ConfigError("panel: indicator '" + m.id + "' has no group tag");
  }
  // A "Global" group, when present, must contain every indicator.
  bool any_global = false;
  for (const auto& m : metas)
    for (const auto& g : m.groups)
      if (g == "Global") any_global = true;
  if (any_global) {
    for (const auto& m : metas) {
      if (std::find(m.groups.begin(), m.groups.end(), "Global") == m.groups.end())
        throw ConfigError("panel: 'Global' group must contain every indicator, missing '" + m.id + "'");
    }
  }
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t d = 0; d < d_count; ++d) {
      if (observed(t, d) && !std::isfinite(values(t, d)))
        throw ConfigError("panel: observed cell with non-finite value");
      if (metas[d].frequency == Frequency::quarterly && observed(t, d) &&
          !is_quarter_end(months[t]))
        throw ConfigError("panel: quarterly series '" + metas[d].id +
                          "' observed off quarter-end at " + format_month(months[t]));
    }
  }
  column_of(target_id);
}

PanelMeta load_meta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open meta file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("meta '" + path + "': " + e.what());
  }
  PanelMeta meta;
  if (!j.contains("indicators") || !j["indicators"].is_array())
    throw ParseError("meta '" + path + "': missing 'indicators' array");
  for (const auto& item : j["indicators"]) {
    IndicatorMeta m;
    m.id = item.at("id").get<std::string>();
    const std::string freq = item.at("frequency").get<std::string>();
    if (freq == "monthly") {
      m.frequency = Frequency::monthly;
    } else if (freq == "quarterly") {
      m.frequency = Frequency::quarterly;
    } else {
      throw ParseError("meta: bad frequency '" + freq + "' for '" + m.id + "'");
    }
    m.groups = item.at("groups").get<std::vector<std::string>>();
    if (m.groups.empty()) throw ParseError("meta: indicator '" + m.id + "' has no groups");
    meta.indicators.push_back(std::move(m));
  }
  if (!j.contains("target")) throw ParseError("meta '" + path + "': missing 'target'");
  meta.target_id = j["target"].get<std::string>();
  return meta;
}

Panel panel_from_rows(const std::vector<std::string>& lines, const PanelMeta& meta) {
  struct Obs {
    int month;
    std::size_t col;
    double value;
    std::size_t row;
  };

  std::map<std::string, std::size_t> col_of;
  for (std::size_t d = 0; d < meta.indicators.size(); ++d) col_of[meta.indicators[d].id] = d;

  std::vector<Obs> obs;
  std::set<std::pair<int, std::size_t>> seen;
  int lo = std::numeric_limits<int>::max(), hi = std::numeric_limits<int>::min();

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t row = i + 2;  // 1-based, after the header
    const std::string& line = lines[i];
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 3)
      throw ParseError("row " + std::to_string(row) + ": expected 3 fields", row);
    int month;
    try {
      month = parse_month(fields[0]);
    } catch (const ParseError& e) {
      throw ParseError("row " + std::to_string(row) + ": " + e.what(), row);
    }
    auto it = col_of.find(fields[1]);
    if (it == col_of.end())
      throw ParseError("row " + std::to_string(row) + ": unknown indicator id '" + fields[1] + "'",
                       row);
    const double value = parse_double(fields[2], row);
    if (!seen.insert({month, it->second}).second) {
      throw ParseError("row " + std::to_string(row) + ": duplicate observation (" + fields[0] +
                           ", " + fields[1] + ")",
                       row);
    }
    if (meta.indicators[it->second].frequency == Frequency::quarterly && !is_quarter_end(month)) {
      throw ParseError("row " + std::to_string(row) + ": quarterly series '" + fields[1] +
                           "' dated off quarter-end " + fields[0],
                       row);
    }
    obs.push_back({month, it->second, value, row});
    lo = std::min(lo, month);
    hi = std::max(hi, month);
  }
  if (obs.empty()) throw ParseError("panel CSV has no observations");

  Panel panel;
  panel.target_id = meta.target_id;
  panel.metas = meta.indicators;
  const std::size_t t_count = static_cast<std::size_t>(hi - lo + 1);
  panel.months.resize(t_count);
  for (std::size_t t = 0; t < t_count; ++t) panel.months[t] = lo + static_cast<int>(t);
  panel.values = Matrix(t_count, meta.indicators.size(), kNan);
  panel.mask.assign(t_count * meta.indicators.size(), 0);
  panel.stats.assign(meta.indicators.size(), {});
  for (const auto& o : obs) panel.set_cell(static_cast<std::size_t>(o.month - lo), o.col, o.value);
  panel.validate();
  return panel;
}

Panel load_panel(const std::string& csv_path, const std::string& meta_path) {
  const PanelMeta meta = load_meta(meta_path);
  std::ifstream in(csv_path);
  if (!in) throw ConfigError("cannot open panel CSV '" + csv_path + "'");
  std::string header;
  if (!std::getline(in, header) || header != "date,indicator_id,value")
    throw ParseError("panel CSV '" + csv_path + "': bad header, expected date,indicator_id,value", 1);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return panel_from_rows(lines, meta);
}

void write_panel(const Panel& panel, const std::string& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw ConfigError("cannot write panel CSV '" + csv_path + "'");
  out << "date,indicator_id,value\n";
  for (std::size_t t = 0; t < panel.rows(); ++t) {
    for (std::size_t d = 0; d < panel.cols(); ++d) {
      if (!panel.observed(t, d)) continue;
      out << format_month(panel.months[t]) << ',' << panel.metas[d].id << ','
          << format_double(panel.values(t, d)) << '\n';
    }
  }
}

void write_meta(const Panel& panel, const std::string& json_path) {
  nlohmann::json j;
  j["indicators"] = nlohmann::json::array();
  for (const auto& m : panel.metas) {
    j["indicators"].push_back(
        {{"id", m.id},
         {"frequency", m.frequency == Frequency::monthly ? "monthly" : "quarterly"},
         {"groups", m.groups}});
  }
  j["target"] = panel.target_id;
  std::ofstream out(json_path);
  if (!out) throw ConfigError("cannot write meta JSON '" + json_path + "'");
  out << j.dump(2) << '\n';
}

Panel standardize(Panel panel) {
  const std::size_t t_count = panel.rows(), d_count = panel.cols();
  panel.stats.assign(d_count, {});
  for (std::size_t d = 0; d < d_count; ++d) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < t_count; ++t) {
      if (!panel.observed(t, d)) continue;
      sum += panel.values(t, d);
      ++n;
    }
    if (n < 2)
      throw ConfigError("standardize: column '" + panel.metas[d].id +
                        "' has fewer than 2 observed values");
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t t = 0; t < t_count; ++t) {
      if (!panel.observed(t, d)) continue;
      const double c = panel.values(t, d) - mean;
      ss += c * c;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (sd == 0.0)
      throw ConfigError("standardize: column '" + panel.metas[d].id + "' is constant");
    for (std::size_t t = 0; t < t_count; ++t) {
      if (panel.observed(t, d)) panel.values(t, d) = (panel.values(t, d) - mean) / sd;
    }
    panel.stats[d] = {mean, sd};
  }
  panel.standardized = true;
  return panel;
}

Panel apply_missing(Panel panel, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("apply_missing: rate must lie in [0,1), got " + std::to_string(rate));
  const std::size_t target = panel.target_column();
  std::vector<std::size_t> eligible;
  for (std::size_t t = 0; t < panel.rows(); ++t)
    for (std::size_t d = 0; d < panel.cols(); ++d)
      if (d != target && panel.observed(t, d)) eligible.push_back(t * panel.cols() + d);

  const std::size_t remove = static_cast<std::size_t>(
      std::floor(rate * static_cast<double>(eligible.size())));
  // Partial Fisher-Yates: the first `remove` entries are a uniform sample.
  for (std::size_t i = 0; i < remove; ++i) {
    const std::size_t j = i + rng.index(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
    panel.clear_cell(eligible[i] / panel.cols(), eligible[i] % panel.cols());
  }
  return panel;
}

}  // namespace nowcast
