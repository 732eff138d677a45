#include "nodulebench/report/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace nb {

namespace {

// Coordinates are printed with two decimals so output is stable across platforms.
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

const char* const kSeriesColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

const char* color(std::size_t i) { return kSeriesColors[i % std::size(kSeriesColors)]; }

std::string header(int w, int h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" + std::to_string(h) +
         "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
}

}  // namespace

std::string format_number(std::optional<double> v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

RadarSeries radar_series(const std::string& label, const MetricReport& m) {
  RadarSeries s{label, {}};
  const char* keys[] = {"auc", "sensitivity", "specificity", "accuracy", "ppv", "npv", "f1"};
  for (std::size_t k = 0; k < s.values.size(); ++k) s.values[k] = m.at(keys[k]).value;
  return s;
}

std::string metric_csv_header() {
  std::string h = "n";
  for (const auto& name : kReportMetrics) h += "," + name + "," + name + "_lo," + name + "_hi";
  return h;
}

std::string metric_csv_cells(const MetricReport& m) {
  std::string row = std::to_string(m.n);
  for (const auto& name : kReportMetrics) {
    const auto& v = m.at(name);
    const auto lo = v.value ? std::optional(v.lo) : std::nullopt;
    const auto hi = v.value ? std::optional(v.hi) : std::nullopt;
    row += "," + format_number(v.value) + "," + format_number(lo) + "," + format_number(hi);
  }
  return row;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string roc_svg(const std::vector<RocSeries>& curves, const std::vector<OperatingArrow>& arrows) {
  constexpr double x0 = 50, y0 = 20, side = 300;
  auto px = [&](double fpr) { return num(x0 + side * fpr); };
  auto py = [&](double tpr) { return num(y0 + side * (1.0 - tpr)); };
  std::ostringstream s;
  s << header(560, 370);
  s << "<defs><marker id=\"arrow\" viewBox=\"0 0 10 10\" refX=\"9\" refY=\"5\" markerWidth=\"6\" markerHeight=\"6\" "
       "orient=\"auto\"><path d=\"M0,0 L10,5 L0,10 z\" fill=\"#444\"/></marker></defs>\n";
  s << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << side << "\" height=\"" << side
    << "\" fill=\"none\" stroke=\"#000\"/>\n";
  s << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
    << "\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double t = k / 4.0;
    s << "<text x=\"" << px(t) << "\" y=\"" << num(y0 + side + 14) << "\" text-anchor=\"middle\">" << num(t) << "</text>\n";
    s << "<text x=\"" << num(x0 - 6) << "\" y=\"" << py(t) << "\" text-anchor=\"end\">" << num(t) << "</text>\n";
  }
  s << "<text x=\"" << num(x0 + side / 2) << "\" y=\"" << num(y0 + side + 30) << "\" text-anchor=\"middle\">1 - Specificity</text>\n";
  s << "<text transform=\"translate(14," << num(y0 + side / 2) << ") rotate(-90)\" text-anchor=\"middle\">Sensitivity</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    s << "<polyline class=\"roc\" fill=\"none\" stroke=\"" << color(i) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < c.points.size(); ++k) s << (k ? " " : "") << px(c.points[k].fpr) << "," << py(c.points[k].tpr);
    s << "\"/>\n";
    const double ly = y0 + 10 + 16.0 * static_cast<double>(i);
    s << "<rect x=\"370\" y=\"" << num(ly - 8) << "\" width=\"10\" height=\"10\" fill=\"" << color(i) << "\"/>\n";
    s << "<text class=\"legend\" x=\"386\" y=\"" << num(ly + 1) << "\">" << xml_escape(c.label) << " (AUC "
      << format_number(c.auc) << ")</text>\n";
  }
  for (const auto& a : arrows) {
    s << "<line class=\"shift\" x1=\"" << px(a.from.fpr) << "\" y1=\"" << py(a.from.tpr) << "\" x2=\"" << px(a.to.fpr) << "\" y2=\""
      << py(a.to.tpr) << "\" stroke=\"#444\" marker-end=\"url(#arrow)\"><title>" << xml_escape(a.label) << "</title></line>\n";
    s << "<circle cx=\"" << px(a.from.fpr) << "\" cy=\"" << py(a.from.tpr) << "\" r=\"2.5\" fill=\"#444\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string radar_svg(const std::vector<RadarSeries>& series) {
  constexpr double cx = 200, cy = 190, r = 140;
  const std::size_t n = kRadarAxes.size();
  auto angle = [&](std::size_t k) { return -std::numbers::pi / 2 + 2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n); };
  auto pt = [&](std::size_t k, double v) { return num(cx + r * v * std::cos(angle(k))) + "," + num(cy + r * v * std::sin(angle(k))); };
  std::ostringstream s;
  s << header(560, 380);
  for (int ring = 1; ring <= 4; ++ring) {
    s << "<polygon fill=\"none\" stroke=\"#ddd\" points=\"";
    for (std::size_t k = 0; k < n; ++k) s << (k ? " " : "") << pt(k, ring / 4.0);
    s << "\"/>\n";
  }
  for (std::size_t k = 0; k < n; ++k) {
    s << "<line class=\"axis\" x1=\"" << num(cx) << "\" y1=\"" << num(cy) << "\" x2=\"" << num(cx + r * std::cos(angle(k)))
      << "\" y2=\"" << num(cy + r * std::sin(angle(k))) << "\" stroke=\"#999\"/>\n";
    s << "<text x=\"" << num(cx + (r + 18) * std::cos(angle(k))) << "\" y=\"" << num(cy + (r + 18) * std::sin(angle(k)) + 4)
      << "\" text-anchor=\"middle\">" << kRadarAxes[k] << "</text>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    s << "<polygon class=\"series\" fill=\"" << color(i) << "\" fill-opacity=\"0.15\" stroke=\"" << color(i) << "\" points=\"";
    for (std::size_t k = 0; k < n; ++k) s << (k ? " " : "") << pt(k, series[i].values[k].value_or(0.0));
    s << "\"/>\n";
    const double ly = 30 + 16.0 * static_cast<double>(i);
    s << "<rect x=\"380\" y=\"" << num(ly - 8) << "\" width=\"10\" height=\"10\" fill=\"" << color(i) << "\"/>\n";
    s << "<text class=\"legend\" x=\"396\" y=\"" << num(ly + 1) << "\">" << xml_escape(series[i].label) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string kappa_svg(const KappaMatrix& m, const std::vector<std::string>& labels, const std::string& title) {
  const std::size_t n = m.values.size();
  if (labels.size() != n) throw std::invalid_argument("kappa_svg: one label per rater required");
  constexpr double cell = 34, x0 = 80, y0 = 50;
  const int w = static_cast<int>(x0 + cell * static_cast<double>(n) + 20), h = static_cast<int>(y0 + cell * static_cast<double>(n) + 40);
  std::ostringstream s;
  s << header(w, h);
  s << "<text x=\"" << num(x0) << "\" y=\"20\" font-size=\"13\">" << xml_escape(title) << " (overall "
    << format_number(m.defined_pairs ? std::optional<double>(m.overall) : std::nullopt) << ", " << xml_escape(m.band) << ")</text>\n";
  for (std::size_t i = 0; i < n; ++i) {
    s << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(y0 + cell * (i + 0.5) + 4) << "\" text-anchor=\"end\">" << xml_escape(labels[i])
      << "</text>\n";
    s << "<text x=\"" << num(x0 + cell * (i + 0.5)) << "\" y=\"" << num(y0 - 6) << "\" text-anchor=\"middle\">" << xml_escape(labels[i])
      << "</text>\n";
    for (std::size_t j = 0; j < n; ++j) {
      const auto& v = m.values[i][j];
      // Blue for low agreement through red for high.
      const double t = v ? std::clamp(*v, 0.0, 1.0) : 0.0;
      const int red = static_cast<int>(std::lround(255 * t)), blue = 255 - red;
      s << "<rect x=\"" << num(x0 + cell * j) << "\" y=\"" << num(y0 + cell * i) << "\" width=\"" << num(cell) << "\" height=\""
        << num(cell) << "\" fill=\"" << (v ? "rgb(" + std::to_string(red) + ",80," + std::to_string(blue) + ")" : std::string("#eee"))
        << "\" stroke=\"#fff\"/>\n";
      s << "<text class=\"cell\" x=\"" << num(x0 + cell * (j + 0.5)) << "\" y=\"" << num(y0 + cell * (i + 0.5) + 4)
        << "\" text-anchor=\"middle\" font-size=\"9\" fill=\"#fff\">" << format_number(v) << "</text>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace nb
