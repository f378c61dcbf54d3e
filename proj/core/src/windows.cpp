#include "nowcast/windows.hpp"

#include <cmath>
#include <string>

#include "nowcast/dates.hpp"
#include "nowcast/error.hpp"

namespace nowcast {

WindowSet make_windows(const Panel& panel, std::size_t n, std::array<double, 3> fractions) {
  if (n < 1) throw ConfigError("make_windows: window length must be >= 1");
  const double fsum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9 || fractions[0] <= 0 || fractions[1] < 0 || fractions[2] < 0)
    throw ConfigError("make_windows: split fractions must be nonnegative and sum to 1");

  const std::size_t target = panel.target_column();
  WindowSet set;
  for (std::size_t t = 0; t < panel.rows(); ++t) {
    if (!is_quarter_end(panel.months[t]) || !panel.observed(t, target)) continue;
    if (t < n) continue;  // needs n full months strictly before the target
    Window w;
    w.first_row = t - n;
    w.length = n;
    w.target_row = t;
    set.windows.push_back(w);
  }
  if (set.windows.size() < 3) {
    std::size_t quarter_targets = 0;
    for (std::size_t t = 0; t < panel.rows(); ++t)
      if (is_quarter_end(panel.months[t]) && panel.observed(t, target)) ++quarter_targets;
    throw ConfigError("make_windows: need at least 3 windows of " + std::to_string(n) +
                      " months, panel provides " + std::to_string(set.windows.size()) + " (" +
                      std::to_string(quarter_targets) + " quarter-end targets over " +
                      std::to_string(panel.rows()) + " months)");
  }

  const std::size_t total = set.windows.size();
  set.n_train = static_cast<std::size_t>(std::floor(fractions[0] * static_cast<double>(total)));
  set.n_val = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(total)));
  set.n_test = total - set.n_train - set.n_val;
  for (std::size_t i = 0; i < total; ++i) {
    set.windows[i].split = i < set.n_train              ? Split::train
                           : i < set.n_train + set.n_val ? Split::val
                                                         : Split::test;
  }
  return set;
}

}  // namespace nowcast
