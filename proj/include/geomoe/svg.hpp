#pragma once

#include <string>
#include <vector>

#include "geomoe/analysis.hpp"

namespace geomoe {

std::string xml_escape(const std::string& s);

// Rows x cols colour grid, white (0) to dark blue (1).
std::string svg_heatmap(const AffinityMatrix& a, const std::string& title);

// Experts as node columns per MoE layer; edges grey below the first
// percentile of traversed weights, blue up to the second, red above it.
std::string svg_routes(const RoutingGraph& g, double low_pct = 90.0, double high_pct = 99.9,
                       const AblationSet& pruned = {});

struct CurveSeries {
  std::string name;
  std::vector<double> x, y;
};

std::string svg_lines(const std::vector<CurveSeries>& series, const std::string& title, const std::string& xlabel,
                      const std::string& ylabel);

std::string svg_histogram(const std::vector<double>& edges, const std::vector<std::size_t>& counts,
                          const std::string& title, const std::string& xlabel);

}  // namespace geomoe
