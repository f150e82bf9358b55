#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace hourglass {

struct Stage {
  std::size_t layers = 0;
  std::size_t factor = 1;

  bool operator==(const Stage&) const = default;
};

// One shortening level of the recursive form: `pre` blocks at this
// resolution, shorten by `k`, recurse, upsample, `post` blocks.
struct HierarchyLevel {
  std::size_t pre = 0;
  std::size_t k = 1;
  std::size_t post = 0;

  bool operator==(const HierarchyLevel&) const = default;
};

// Validated `N@f ...` stage list together with its recursive form.
// levels[0] is the outermost (full resolution) level; the innermost
// shortened stack has `leaf_layers` blocks. A hierarchy without
// shortening has no levels and all its blocks in the leaf.
struct Hierarchy {
  std::vector<Stage> stages;
  std::vector<HierarchyLevel> levels;
  std::size_t leaf_layers = 0;

  std::size_t depth() const { return levels.size(); }
  // Product of relative factors: the length divisor every input must satisfy.
  std::size_t total_factor() const;
  // Cumulative factor at level i (1 at full resolution, total_factor() at the leaf).
  std::size_t factor_at(std::size_t level) const;
  std::size_t total_layers() const;
  // Canonical text, one `N@f` per stage.
  std::string to_string() const;
};

// Grammar: one or more whitespace-separated tokens `N@f` with N >= 0 and
// f >= 1 decimal integers. Throws ParseError (with byte offset) on
// malformed input and ValidationError naming the violated rule otherwise.
//
// Adjacent stages with equal factors merge. The factor profile must rise
// to a single peak and fall again, each step an integer multiple, and the
// falling side must mirror the rising side. A profile that starts (and
// ends) above 1 gets an implicit empty full-resolution level.
Hierarchy parse_hierarchy(std::string_view text);

}  // namespace hourglass
