#include "hourglass/hierarchy.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "hourglass/error.hpp"

namespace hourglass {

namespace {

std::size_t parse_count(std::string_view text, std::size_t begin, std::size_t end, std::size_t base,
                        const char* what) {
  if (begin == end) throw ParseError(std::string("missing ") + what + " in hierarchy token", base + begin);
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data() + begin, text.data() + end, value);
  if (ec != std::errc() || ptr != text.data() + end) {
    const std::size_t at = static_cast<std::size_t>(ptr - text.data());
    throw ParseError(std::string("invalid ") + what + " in hierarchy token", base + at);
  }
  return value;
}

Stage parse_token(std::string_view token, std::size_t offset) {
  const std::size_t at = token.find('@');
  if (at == std::string_view::npos) {
    throw ParseError("hierarchy token '" + std::string(token) + "' is not of the form N@f", offset);
  }
  Stage s;
  s.layers = parse_count(token, 0, at, offset, "layer count");
  s.factor = parse_count(token, at + 1, token.size(), offset, "factor");
  if (s.factor == 0) throw ParseError("hierarchy factor must be at least 1", offset + at + 1);
  return s;
}

}  // namespace

std::size_t Hierarchy::total_factor() const { return factor_at(levels.size()); }

std::size_t Hierarchy::factor_at(std::size_t level) const {
  std::size_t f = 1;
  for (std::size_t i = 0; i < level && i < levels.size(); ++i) f *= levels[i].k;
  return f;
}

std::size_t Hierarchy::total_layers() const {
  std::size_t n = leaf_layers;
  for (const auto& l : levels) n += l.pre + l.post;
  return n;
}

std::string Hierarchy::to_string() const {
  std::string out;
  for (const auto& s : stages) {
    if (!out.empty()) out += ' ';
    out += std::to_string(s.layers) + "@" + std::to_string(s.factor);
  }
  return out;
}

Hierarchy parse_hierarchy(std::string_view text) {
  Hierarchy h;
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    h.stages.push_back(parse_token(text.substr(i, j - i), i));
    i = j;
  }
  if (h.stages.empty()) throw ParseError("empty hierarchy", 0);

  std::vector<Stage> runs;
  for (const auto& s : h.stages) {
    if (!runs.empty() && runs.back().factor == s.factor) {
      runs.back().layers += s.layers;
    } else {
      runs.push_back(s);
    }
  }

  const auto peak_it = std::max_element(runs.begin(), runs.end(),
                                        [](const Stage& a, const Stage& b) { return a.factor < b.factor; });
  const std::size_t peak = static_cast<std::size_t>(peak_it - runs.begin());
  for (std::size_t r = 1; r < runs.size(); ++r) {
    const bool rising = r <= peak;
    const std::size_t lo = rising ? runs[r - 1].factor : runs[r].factor;
    const std::size_t hi = rising ? runs[r].factor : runs[r - 1].factor;
    if (lo >= hi) {
      throw ValidationError("hierarchy '" + h.to_string() +
                            "': factor profile must rise to a single peak and fall again");
    }
    if (hi % lo != 0) {
      throw ValidationError("hierarchy '" + h.to_string() + "': adjacent factors " + std::to_string(lo) + " and " +
                            std::to_string(hi) + " must have an integer ratio");
    }
  }

  std::vector<Stage> up(runs.begin(), runs.begin() + static_cast<std::ptrdiff_t>(peak));
  std::vector<Stage> down(runs.rbegin(), runs.rbegin() + static_cast<std::ptrdiff_t>(runs.size() - peak - 1));
  if (up.size() != down.size() ||
      !std::equal(up.begin(), up.end(), down.begin(), [](const Stage& a, const Stage& b) { return a.factor == b.factor; })) {
    throw ValidationError("hierarchy '" + h.to_string() + "': falling factors must mirror rising factors");
  }
  if (runs[peak].factor > 1 && (up.empty() || up.front().factor != 1)) {
    up.insert(up.begin(), Stage{0, 1});
    down.insert(down.begin(), Stage{0, 1});
  }

  for (std::size_t l = 0; l < up.size(); ++l) {
    const std::size_t next = l + 1 < up.size() ? up[l + 1].factor : runs[peak].factor;
    h.levels.push_back({up[l].layers, next / up[l].factor, down[l].layers});
  }
  h.leaf_layers = runs[peak].layers;
  return h;
}

}  // namespace hourglass
