#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nowcast/matrix.hpp"
#include "nowcast/rng.hpp"

namespace nowcast {

enum class Frequency { monthly, quarterly };

struct IndicatorMeta {
  std::string id;
  Frequency frequency = Frequency::monthly;
  std::vector<std::string> groups;  // at least one tag
};

struct ColumnStats {
  double mean = 0.0;
  double sd = 1.0;
};

// Mixed-frequency indicator panel on a contiguous monthly grid. Masked
// cells hold NaN so that any accidental read poisons the result visibly.
struct Panel {
  std::vector<int> months;          // ascending, contiguous month indices
  Matrix values;                    // T x D
  std::vector<std::uint8_t> mask;   // T x D row-major, 1 = observed
  std::vector<IndicatorMeta> metas; // size D
  std::string target_id;            // quarterly GDP-growth column
  std::vector<ColumnStats> stats;   // per column, set by standardize()
  bool standardized = false;

  std::size_t rows() const { return months.size(); }
  std::size_t cols() const { return metas.size(); }

  bool observed(std::size_t t, std::size_t d) const { return mask[t * cols() + d] != 0; }
  void set_cell(std::size_t t, std::size_t d, double v);
  void clear_cell(std::size_t t, std::size_t d);

  std::size_t column_of(const std::string& id) const;  // ConfigError if unknown
  std::size_t target_column() const { return column_of(target_id); }

  // Column ids carrying the given group tag, in panel order.
  std::vector<std::size_t> group_columns(const std::string& group) const;

  void validate() const;  // internal consistency; throws on violation
};

// Meta JSON: array of {"id","frequency","groups"} under "indicators" plus a
// "target" field naming the GDP column.
struct PanelMeta {
  std::vector<IndicatorMeta> indicators;
  std::string target_id;
};

PanelMeta load_meta(const std::string& path);

// CSV schema: header `date,indicator_id,value`, dates YYYY-MM, one
// observation per row. The grid spans min..max date; quarterly series must
// sit on quarter-end months.
Panel load_panel(const std::string& csv_path, const std::string& meta_path);
Panel panel_from_rows(const std::vector<std::string>& lines, const PanelMeta& meta);

void write_panel(const Panel& panel, const std::string& csv_path);
void write_meta(const Panel& panel, const std::string& json_path);

// Z-scores every column over its observed cells (population convention);
// the statistics are kept for inverse-transforming predictions.
Panel standardize(Panel panel);

// Masks floor(rate * #observed non-target cells) additional cells, chosen
// uniformly by `rng`. Target cells are never removed.
Panel apply_missing(Panel panel, double rate, Rng& rng);

}  // namespace nowcast
