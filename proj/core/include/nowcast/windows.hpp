#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "nowcast/panel.hpp"

namespace nowcast {

enum class Split { train, val, test };

// One nowcasting case: `length` consecutive monthly rows of inputs ending
// at target_row-1, label at the quarter-end `target_row`.
struct Window {
  std::size_t first_row = 0;
  std::size_t length = 0;
  std::size_t target_row = 0;
  Split split = Split::train;
};

struct WindowSet {
  std::vector<Window> windows;  // chronological
  std::size_t n_train = 0, n_val = 0, n_test = 0;
};

// One window per observed quarter-end target with `n` full months of
// history before it; chronological train/val/test split by `fractions`.
WindowSet make_windows(const Panel& panel, std::size_t n, std::array<double, 3> fractions);

}  // namespace nowcast
