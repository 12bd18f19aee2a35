#pragma once

// Per-line HTML heatmaps: each document shows the target map above its empirical counterpart.

#include <span>
#include <string>

#include "attrib/data.hpp"
#include "attrib/explainers.hpp"

namespace attrib {

/// Background for a score already normalized to [-1, 1]: red for positive, blue for negative,
/// opacity = |score|; exactly 0 is white.
std::string heat_color(double normalized);

/// One self-contained document (no trailing newline). Pad tokens are dimmed.
std::string render_heatmap(const Vocab& vocab, const AttributionMap& target, const AttributionMap& empirical);

/// One document per line, maps paired by position; ids and token sequences must agree.
std::string render_heatmaps(const Vocab& vocab, std::span<const AttributionMap> targets,
                            std::span<const AttributionMap> empirical);

}  // namespace attrib
