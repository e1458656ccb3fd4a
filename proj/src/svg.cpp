#include "geomoe/svg.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace geomoe {

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      case '\'': o += "&apos;"; break;
      default: o += c;
    }
  }
  return o;
}

namespace {

std::string header(double w, double h) {
  std::ostringstream os;
  os << R"(<?xml version="1.0" encoding="UTF-8"?>)" << '\n'
     << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << w << R"(" height=")" << h << R"(" viewBox="0 0 )" << w
     << ' ' << h << R"(" font-family="sans-serif" font-size="10">)" << '\n'
     << R"(<rect width="100%" height="100%" fill="white"/>)" << '\n';
  return os.str();
}

std::string text(double x, double y, const std::string& s, const char* anchor = "start", int size = 10) {
  std::ostringstream os;
  os << R"(<text x=")" << x << R"(" y=")" << y << R"(" text-anchor=")" << anchor << R"(" font-size=")" << size << R"(">)"
     << xml_escape(s) << "</text>\n";
  return os.str();
}

std::string blue(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255 - 225 * v));
  const int g = static_cast<int>(std::lround(255 - 180 * v));
  const int b = static_cast<int>(std::lround(255 - 80 * v));
  std::ostringstream os;
  os << "rgb(" << r << ',' << g << ',' << b << ')';
  return os.str();
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

}  // namespace

std::string svg_heatmap(const AffinityMatrix& a, const std::string& title) {
  const double cell = 18, left = 110, top = 70;
  const std::size_t R = a.values.size(), C = a.col_labels.size();
  const double w = left + cell * static_cast<double>(C) + 20, h = top + cell * static_cast<double>(R) + 20;
  std::ostringstream os;
  os << header(w, h) << text(left, 16, title, "start", 12);
  for (std::size_t c = 0; c < C; ++c) {
    const double x = left + cell * (static_cast<double>(c) + 0.5);
    os << "<text transform=\"translate(" << x << ',' << top - 4 << ") rotate(-60)\">" << xml_escape(a.col_labels[c])
       << "</text>\n";
  }
  os << std::fixed << std::setprecision(2);
  for (std::size_t r = 0; r < R; ++r) {
    const double y = top + cell * static_cast<double>(r);
    os << text(left - 4, y + cell * 0.7, r < a.row_labels.size() ? a.row_labels[r] : "", "end");
    for (std::size_t c = 0; c < C && c < a.values[r].size(); ++c) {
      const double v = a.values[r][c];
      os << R"(<rect x=")" << left + cell * static_cast<double>(c) << R"(" y=")" << y << R"(" width=")" << cell
         << R"(" height=")" << cell << R"(" fill=")" << blue(v) << R"(" stroke="#ddd"><title>)" << v << "</title></rect>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_routes(const RoutingGraph& g, double low_pct, double high_pct, const AblationSet& pruned) {
  const std::size_t L = g.layers.size(), E = static_cast<std::size_t>(g.num_experts);
  const double colw = 160, rowh = 26, left = 60, top = 40;
  const double w = left * 2 + colw * static_cast<double>(L > 0 ? L - 1 : 0), h = top + rowh * static_cast<double>(E) + 30;
  const auto weights = edge_weights(g);
  const double lo = weights.empty() ? 0.0 : nearest_rank_percentile(weights, low_pct);
  const double hi = weights.empty() ? 0.0 : nearest_rank_percentile(weights, high_pct);
  const double wmax = weights.empty() ? 1.0 : *std::max_element(weights.begin(), weights.end());
  const auto nx = [&](std::size_t k) { return left + colw * static_cast<double>(k); };
  const auto ny = [&](std::size_t e) { return top + rowh * (static_cast<double>(e) + 0.5); };

  std::ostringstream title;
  title << "patch routes (grey < p" << low_pct << ", blue to p" << high_pct << ", red above)";
  std::ostringstream os;
  os << header(w, h) << text(left, 16, title.str(), "start", 12);
  os << std::fixed << std::setprecision(3);
  // Grey first so highlighted edges draw on top.
  for (int band = 0; band < 3; ++band) {
    for (std::size_t k = 0; k < g.num_pairs(); ++k)
      for (std::size_t i = 0; i < E; ++i)
        for (std::size_t j = 0; j < E; ++j) {
          if (g.counts[k][i * E + j] == 0) continue;
          const double wt = g.weight(k, static_cast<int>(i), static_cast<int>(j));
          const int b = wt > hi ? 2 : (wt >= lo ? 1 : 0);
          if (b != band) continue;
          const char* color = b == 2 ? "#d62728" : (b == 1 ? "#1f77b4" : "#bbbbbb");
          os << R"(<line x1=")" << nx(k) << R"(" y1=")" << ny(i) << R"(" x2=")" << nx(k + 1) << R"(" y2=")" << ny(j)
             << R"(" stroke=")" << color << R"(" stroke-width=")" << 0.5 + 6.0 * wt / wmax << R"("><title>)" << wt
             << "</title></line>\n";
        }
  }
  for (std::size_t k = 0; k < L; ++k) {
    os << text(nx(k), top - 8, "layer " + std::to_string(g.layers[k]), "middle");
    for (std::size_t e = 0; e < E; ++e) {
      const bool cut = pruned.count({g.layers[k], static_cast<int>(e)}) > 0;
      os << R"(<circle cx=")" << nx(k) << R"(" cy=")" << ny(e) << R"(" r="7" fill=")" << (cut ? "#ffffff" : "#333333")
         << R"(" stroke="#333333"/>)" << '\n';
      if (k == 0) os << text(nx(k) - 12, ny(e) + 3, std::to_string(e), "end");
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_lines(const std::vector<CurveSeries>& series, const std::string& title, const std::string& xlabel,
                      const std::string& ylabel) {
  const double w = 480, h = 320, l = 55, r = 120, t = 30, b = 45;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        first = false;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x1 == x0) x1 = x0 + 1;
  y0 = std::min(y0, 0.0);
  if (y1 == y0) y1 = y0 + 1;
  const auto px = [&](double x) { return l + (w - l - r) * (x - x0) / (x1 - x0); };
  const auto py = [&](double y) { return h - b - (h - t - b) * (y - y0) / (y1 - y0); };
  std::ostringstream os;
  os << header(w, h) << text(l, 18, title, "start", 12);
  os << R"(<line x1=")" << l << R"(" y1=")" << h - b << R"(" x2=")" << w - r << R"(" y2=")" << h - b << R"(" stroke="black"/>)"
     << '\n'
     << R"(<line x1=")" << l << R"(" y1=")" << t << R"(" x2=")" << l << R"(" y2=")" << h - b << R"(" stroke="black"/>)" << '\n';
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    std::ostringstream xs, ys;
    xs << std::setprecision(3) << xv;
    ys << std::setprecision(3) << yv;
    os << text(px(xv), h - b + 14, xs.str(), "middle") << text(l - 5, py(yv) + 3, ys.str(), "end");
  }
  os << text((l + w - r) / 2, h - 8, xlabel, "middle");
  os << "<text transform=\"translate(14," << (t + h - b) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(ylabel)
     << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* c = kPalette[s % 8];
    os << R"(<polyline fill="none" stroke=")" << c << R"(" stroke-width="2" points=")";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) os << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    os << "\"/>\n";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      os << R"(<circle cx=")" << px(series[s].x[i]) << R"(" cy=")" << py(series[s].y[i]) << R"(" r="3" fill=")" << c << "\"/>\n";
    }
    const double ly = t + 14 * static_cast<double>(s);
    os << R"(<rect x=")" << w - r + 10 << R"(" y=")" << ly << R"(" width="10" height="10" fill=")" << c << "\"/>\n"
       << text(w - r + 24, ly + 9, series[s].name);
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_histogram(const std::vector<double>& edges, const std::vector<std::size_t>& counts,
                          const std::string& title, const std::string& xlabel) {
  const double w = 480, h = 300, l = 50, r = 20, t = 30, b = 45;
  const std::size_t n = counts.size();
  const std::size_t cmax = n ? std::max<std::size_t>(1, *std::max_element(counts.begin(), counts.end())) : 1;
  const double bw = n ? (w - l - r) / static_cast<double>(n) : 0;
  std::ostringstream os;
  os << header(w, h) << text(l, 18, title, "start", 12);
  for (std::size_t i = 0; i < n; ++i) {
    const double bh = (h - t - b) * static_cast<double>(counts[i]) / static_cast<double>(cmax);
    os << R"(<rect x=")" << l + bw * static_cast<double>(i) << R"(" y=")" << h - b - bh << R"(" width=")" << bw * 0.9
       << R"(" height=")" << bh << R"(" fill="#1f77b4"><title>)" << counts[i] << "</title></rect>\n";
  }
  os << R"(<line x1=")" << l << R"(" y1=")" << h - b << R"(" x2=")" << w - r << R"(" y2=")" << h - b << R"(" stroke="black"/>)"
     << '\n';
  if (!edges.empty()) {
    std::ostringstream a, z;
    a << std::setprecision(3) << edges.front();
    z << std::setprecision(3) << edges.back();
    os << text(l, h - b + 14, a.str(), "middle") << text(w - r, h - b + 14, z.str(), "middle");
  }
  os << text(l - 5, t + 4, std::to_string(cmax), "end") << text((l + w - r) / 2, h - 8, xlabel, "middle");
  os << "</svg>\n";
  return os.str();
}

}  // namespace geomoe
