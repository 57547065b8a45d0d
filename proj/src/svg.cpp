#include "volxai/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace volxai::svg {

namespace {

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string colour_for(const std::string& group) {
  if (group == "PET") return "#d62728";
  if (group == "CT") return "#1f77b4";
  if (group == "SHAPE") return "#2ca02c";
  return "#7f7f7f";
}

}  // namespace

std::string line_chart(const Axes& ax, const std::vector<Series>& series, const std::string& footnote) {
  const double w = 560, h = 400, l = 70, r = 150, t = 40, b = 60;
  const double pw = w - l - r, ph = h - t - b;
  const double xr = ax.x_max > ax.x_min ? ax.x_max - ax.x_min : 1.0;
  const double yr = ax.y_max > ax.y_min ? ax.y_max - ax.y_min : 1.0;
  auto X = [&](double x) { return l + (std::clamp(x, ax.x_min, ax.x_max) - ax.x_min) / xr * pw; };
  auto Y = [&](double y) { return t + ph - (std::clamp(y, ax.y_min, ax.y_max) - ax.y_min) / yr * ph; };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" +
                  num(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
       esc(ax.title) + "</text>\n";
  s += "<rect x=\"" + num(l) + "\" y=\"" + num(t) + "\" width=\"" + num(pw) + "\" height=\"" +
       num(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = ax.x_min + xr * i / 5.0, yv = ax.y_min + yr * i / 5.0;
    s += "<text x=\"" + num(X(xv)) + "\" y=\"" + num(t + ph + 16) + "\" text-anchor=\"middle\">" +
         tick(xv) + "</text>\n";
    s += "<text x=\"" + num(l - 6) + "\" y=\"" + num(Y(yv) + 4) + "\" text-anchor=\"end\">" +
         tick(yv) + "</text>\n";
    s += "<line x1=\"" + num(l) + "\" x2=\"" + num(l + pw) + "\" y1=\"" + num(Y(yv)) + "\" y2=\"" +
         num(Y(yv)) + "\" stroke=\"#ddd\"/>\n";
  }
  s += "<text x=\"" + num(l + pw / 2) + "\" y=\"" + num(h - 22) + "\" text-anchor=\"middle\">" +
       esc(ax.x_label) + "</text>\n";
  s += "<text transform=\"translate(18," + num(t + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       esc(ax.y_label) + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& se = series[k];
    const std::string col = kPalette[k % 6];
    std::string pts;
    for (std::size_t i = 0; i < se.points.size(); ++i) {
      const auto [x, y] = se.points[i];
      if (se.step && i > 0) pts += num(X(x)) + "," + num(Y(se.points[i - 1].second)) + " ";
      pts += num(X(x)) + "," + num(Y(y)) + " ";
    }
    s += "<polyline fill=\"none\" stroke=\"" + col + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    s += "<rect x=\"" + num(l + pw + 12) + "\" y=\"" + num(t + 10 + 18.0 * k) +
         "\" width=\"12\" height=\"3\" fill=\"" + col + "\"/>\n";
    s += "<text x=\"" + num(l + pw + 30) + "\" y=\"" + num(t + 15 + 18.0 * k) + "\">" +
         esc(se.label) + "</text>\n";
  }
  if (!footnote.empty())
    s += "<text x=\"4\" y=\"" + num(h - 4) + "\" font-size=\"9\" fill=\"#555\">" + esc(footnote) +
         "</text>\n";
  s += "</svg>\n";
  return s;
}

std::string bar_chart(const std::string& title, const std::string& value_label,
                      const std::vector<Bar>& bars, const std::string& footnote) {
  const double label_w = 330, plot_w = 300, row_h = 22, t = 44, b = 50;
  const double w = label_w + plot_w + 40, h = t + b + row_h * std::max<std::size_t>(bars.size(), 1);
  double m = 0.0;
  for (const auto& bar : bars) {
    m = std::max(m, std::abs(bar.value));
    if (bar.has_marker) m = std::max(m, std::abs(bar.marker));
  }
  if (!(m > 0) || !std::isfinite(m)) m = 1.0;
  const double zero = label_w + plot_w / 2;
  auto X = [&](double v) { return zero + v / m * (plot_w / 2); };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" +
                  num(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
       esc(title) + "</text>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& bar = bars[i];
    const double y = t + row_h * i;
    const double x0 = std::min(X(0), X(bar.value)), x1 = std::max(X(0), X(bar.value));
    s += "<text x=\"" + num(label_w - 8) + "\" y=\"" + num(y + 15) + "\" text-anchor=\"end\">" +
         esc(bar.label) + "</text>\n";
    s += "<rect x=\"" + num(x0) + "\" y=\"" + num(y + 4) + "\" width=\"" + num(x1 - x0) +
         "\" height=\"" + num(row_h - 8) + "\" fill=\"" + colour_for(bar.group) + "\"/>\n";
    if (bar.has_marker)
      s += "<line x1=\"" + num(X(bar.marker)) + "\" x2=\"" + num(X(bar.marker)) + "\" y1=\"" +
           num(y + 1) + "\" y2=\"" + num(y + row_h - 1) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
  }
  const double yb = t + row_h * bars.size();
  s += "<line x1=\"" + num(zero) + "\" x2=\"" + num(zero) + "\" y1=\"" + num(t) + "\" y2=\"" +
       num(yb) + "\" stroke=\"black\"/>\n";
  s += "<text x=\"" + num(label_w) + "\" y=\"" + num(yb + 16) + "\">" + tick(-m) + "</text>\n";
  s += "<text x=\"" + num(label_w + plot_w) + "\" y=\"" + num(yb + 16) + "\" text-anchor=\"end\">" +
       tick(m) + "</text>\n";
  s += "<text x=\"" + num(zero) + "\" y=\"" + num(yb + 32) + "\" text-anchor=\"middle\">" +
       esc(value_label) + "</text>\n";
  if (!footnote.empty())
    s += "<text x=\"4\" y=\"" + num(h - 4) + "\" font-size=\"9\" fill=\"#555\">" + esc(footnote) +
         "</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace volxai::svg
