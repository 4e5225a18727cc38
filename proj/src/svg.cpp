// Copyright 2026 the ppaudit authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ppaudit/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ppaudit {

namespace {

constexpr int kMarginLeft = 60;
constexpr int kMarginRight = 16;
constexpr int kMarginTop = 32;
constexpr int kMarginBottom = 48;

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

struct Frame {
  const SvgOptions& opts;
  double xmin, xmax, ymin, ymax;

  double tx(double x) const {
    double v = x;
    double lo = xmin, hi = xmax;
    if (opts.log_x) {
      v = std::log10(std::max(v, opts.log_floor));
      lo = std::log10(std::max(lo, opts.log_floor));
      hi = std::log10(std::max(hi, opts.log_floor));
    }
    const double span = hi - lo == 0 ? 1.0 : hi - lo;
    return kMarginLeft + (v - lo) / span * (opts.width - kMarginLeft - kMarginRight);
  }
  double ty(double y) const {
    double v = y;
    double lo = ymin, hi = ymax;
    if (opts.log_y) {
      v = std::log10(std::max(v, opts.log_floor));
      lo = std::log10(std::max(lo, opts.log_floor));
      hi = std::log10(std::max(hi, opts.log_floor));
    }
    const double span = hi - lo == 0 ? 1.0 : hi - lo;
    return opts.height - kMarginBottom -
           (v - lo) / span * (opts.height - kMarginTop - kMarginBottom);
  }
};

void header(std::ostringstream& out, const SvgOptions& opts) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opts.width << "\" height=\""
      << opts.height << "\" viewBox=\"0 0 " << opts.width << " " << opts.height << "\">\n"
      << "<rect width=\"" << opts.width << "\" height=\"" << opts.height
      << "\" fill=\"white\"/>\n"
      << "<text x=\"" << opts.width / 2 << "\" y=\"18\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"13\">" << opts.title << "</text>\n";
}

void axes(std::ostringstream& out, const Frame& f) {
  const SvgOptions& o = f.opts;
  out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << o.height - kMarginBottom << "\" x2=\""
      << o.width - kMarginRight << "\" y2=\"" << o.height - kMarginBottom
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft
      << "\" y2=\"" << o.height - kMarginBottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double frac = i / 4.0;
    double xv, yv;
    if (o.log_x) {
      const double lo = std::log10(std::max(f.xmin, o.log_floor));
      const double hi = std::log10(std::max(f.xmax, o.log_floor));
      xv = std::pow(10.0, lo + frac * (hi - lo));
    } else {
      xv = f.xmin + frac * (f.xmax - f.xmin);
    }
    if (o.log_y) {
      const double lo = std::log10(std::max(f.ymin, o.log_floor));
      const double hi = std::log10(std::max(f.ymax, o.log_floor));
      yv = std::pow(10.0, lo + frac * (hi - lo));
    } else {
      yv = f.ymin + frac * (f.ymax - f.ymin);
    }
    out << "<text x=\"" << fmt(f.tx(xv)) << "\" y=\"" << o.height - kMarginBottom + 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
        << fmt_tick(xv) << "</text>\n";
    out << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << fmt(f.ty(yv) + 3)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt_tick(yv)
        << "</text>\n";
  }
  out << "<text x=\"" << (o.width + kMarginLeft) / 2 << "\" y=\"" << o.height - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << o.x_label
      << "</text>\n";
  out << "<text x=\"14\" y=\"" << (o.height - kMarginBottom + kMarginTop) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
      << "transform=\"rotate(-90 14 " << (o.height - kMarginBottom + kMarginTop) / 2 << ")\">"
      << o.y_label << "</text>\n";
}

void legend(std::ostringstream& out, const SvgOptions& opts,
            const std::vector<std::pair<std::string, std::string>>& entries) {
  int y = kMarginTop + 6;
  for (const auto& [label, color] : entries) {
    out << "<rect x=\"" << opts.width - kMarginRight - 120 << "\" y=\"" << y - 8
        << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
    out << "<text x=\"" << opts.width - kMarginRight - 106 << "\" y=\"" << y
        << "\" font-family=\"sans-serif\" font-size=\"10\">" << label << "</text>\n";
    y += 14;
  }
}

}  // namespace

std::string svg_line_chart(const std::vector<SvgSeries>& series, const SvgOptions& opts) {
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const SvgSeries& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (ymin == ymax) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  Frame f{opts, xmin, xmax, ymin, ymax};
  std::ostringstream out;
  header(out, opts);
  axes(out, f);
  std::vector<std::pair<std::string, std::string>> entries;
  for (const SvgSeries& s : series) {
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      out << fmt(f.tx(s.x[i])) << ',' << fmt(f.ty(s.y[i])) << ' ';
    out << "\"/>\n";
    entries.emplace_back(s.label, s.color);
  }
  legend(out, opts, entries);
  out << "</svg>\n";
  return out.str();
}

std::string svg_histogram(const std::vector<HistSeries>& series, int bins, const SvgOptions& opts,
                          bool normalize_x) {
  double lo = 1e300, hi = -1e300;
  for (const HistSeries& s : series)
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (lo > hi) {
    lo = 0;
    hi = 1;
  }
  double scale = 1.0;
  if (normalize_x && hi > 0) {
    scale = 1.0 / hi;
    lo *= scale;
    hi = 1.0;
  }
  if (hi == lo) hi = lo + 1.0;
  const double bw = (hi - lo) / bins;

  double ymax = 0;
  std::vector<std::vector<double>> counts(series.size(), std::vector<double>(bins, 0.0));
  for (std::size_t si = 0; si < series.size(); ++si) {
    const double denom = std::max<std::size_t>(1, series[si].values.size());
    for (double v : series[si].values) {
      int b = static_cast<int>((v * scale - lo) / bw);
      b = std::clamp(b, 0, bins - 1);
      counts[si][static_cast<std::size_t>(b)] += 1.0 / static_cast<double>(denom);
    }
    for (double c : counts[si]) ymax = std::max(ymax, c);
  }
  if (ymax == 0) ymax = 1;

  SvgOptions o = opts;
  Frame f{o, lo, hi, 0.0, ymax * 1.05};
  std::ostringstream out;
  header(out, o);
  axes(out, f);
  std::vector<std::pair<std::string, std::string>> entries;
  for (std::size_t si = 0; si < series.size(); ++si) {
    out << "<path fill=\"" << series[si].color << "\" fill-opacity=\"0.35\" stroke=\""
        << series[si].color << "\" d=\"M" << fmt(f.tx(lo)) << ' ' << fmt(f.ty(0));
    for (int b = 0; b < bins; ++b) {
      const double x0 = lo + b * bw, x1 = lo + (b + 1) * bw;
      const double c = counts[si][static_cast<std::size_t>(b)];
      out << " L" << fmt(f.tx(x0)) << ' ' << fmt(f.ty(c));
      out << " L" << fmt(f.tx(x1)) << ' ' << fmt(f.ty(c));
    }
    out << " L" << fmt(f.tx(hi)) << ' ' << fmt(f.ty(0)) << " Z\"/>\n";
    entries.emplace_back(series[si].label, series[si].color);
  }
  legend(out, o, entries);
  out << "</svg>\n";
  return out.str();
}

std::string svg_bar_chart(const std::vector<std::string>& categories,
                          const std::vector<SvgSeries>& series, const SvgOptions& opts) {
  double ymax = 0;
  for (const SvgSeries& s : series)
    for (double v : s.y) ymax = std::max(ymax, v);
  if (ymax == 0) ymax = 1;
  Frame f{opts, 0.0, static_cast<double>(categories.size()), 0.0, ymax * 1.1};
  std::ostringstream out;
  header(out, opts);
  axes(out, f);
  const double group_w = 1.0;
  const double bar_w = group_w * 0.8 / std::max<std::size_t>(1, series.size());
  std::vector<std::pair<std::string, std::string>> entries;
  for (std::size_t si = 0; si < series.size(); ++si) {
    for (std::size_t ci = 0; ci < series[si].y.size() && ci < categories.size(); ++ci) {
      const double x0 = static_cast<double>(ci) + 0.1 + static_cast<double>(si) * bar_w;
      const double v = series[si].y[ci];
      out << "<rect x=\"" << fmt(f.tx(x0)) << "\" y=\"" << fmt(f.ty(v)) << "\" width=\""
          << fmt(f.tx(x0 + bar_w) - f.tx(x0)) << "\" height=\"" << fmt(f.ty(0) - f.ty(v))
          << "\" fill=\"" << series[si].color << "\"/>\n";
    }
    entries.emplace_back(series[si].label, series[si].color);
  }
  for (std::size_t ci = 0; ci < categories.size(); ++ci)
    out << "<text x=\"" << fmt(f.tx(static_cast<double>(ci) + 0.5)) << "\" y=\""
        << opts.height - kMarginBottom + 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
        << categories[ci] << "</text>\n";
  legend(out, opts, entries);
  out << "</svg>\n";
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
}

}  // namespace ppaudit
