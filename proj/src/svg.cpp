#include "artifit/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace artifit {

void write_line_chart_svg(
    const std::string& path, const std::string& title,
    const std::vector<double>& xs,
    const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  if (xs.empty() || series.empty())
    throw std::invalid_argument("write_line_chart_svg: empty data");
  constexpr int width = 640, height = 400, pad = 50;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b"};

  double x_min = xs.front(), x_max = xs.front();
  for (double x : xs) {
    x_min = std::min(x_min, x);
    x_max = std::max(x_max, x);
  }
  double y_min = series[0].second.front(), y_max = y_min;
  for (const auto& [name, ys] : series)
    for (double y : ys) {
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1;

  auto px = [&](double x) {
    return pad + (x - x_min) / (x_max - x_min) * (width - 2 * pad);
  };
  auto py = [&](double y) {
    return height - pad - (y - y_min) / (y_max - y_min) * (height - 2 * pad);
  };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_line_chart_svg: cannot open " + path);
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                pad, height - pad, width - pad, height - pad);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                pad, pad, pad, height - pad);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\">"
                "%.4g</text>\n",
                4, height - pad, y_min);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\">"
                "%.4g</text>\n",
                4, pad, y_max);
  out << buf;

  for (size_t s = 0; s < series.size(); ++s) {
    out << "<polyline fill=\"none\" stroke=\"" << colors[s % 6]
        << "\" stroke-width=\"1.5\" points=\"";
    const auto& ys = series[s].second;
    for (size_t i = 0; i < xs.size() && i < ys.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(xs[i]), py(ys[i]));
      out << buf;
    }
    out << "\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%d\" y=\"%zu\" font-family=\"sans-serif\" "
                  "font-size=\"12\" fill=\"%s\">%s</text>\n",
                  width - pad - 120, pad + 16 * (s + 1), colors[s % 6],
                  series[s].first.c_str());
    out << buf;
  }
  out << "</svg>\n";
}

}  // namespace artifit
