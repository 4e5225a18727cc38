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

#ifndef PPAUDIT_SVG_HPP_
#define PPAUDIT_SVG_HPP_

#include <string>
#include <vector>

namespace ppaudit {

/// Deterministic SVG charts: identical inputs render byte-identical files.
/// A series is a named polyline/histogram source.
struct SvgSeries {
  std::string label;
  std::string color;
  std::vector<double> x;
  std::vector<double> y;
};

struct SvgOptions {
  int width = 640;
  int height = 400;
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  double log_floor = 1e-3;  // clamp for log axes
};

std::string svg_line_chart(const std::vector<SvgSeries>& series, const SvgOptions& opts);

/// Overlaid step histograms of raw values (bins computed over the union
/// range); `normalize_x` divides all values by the global maximum first.
struct HistSeries {
  std::string label;
  std::string color;
  std::vector<double> values;
};
std::string svg_histogram(const std::vector<HistSeries>& series, int bins, const SvgOptions& opts,
                          bool normalize_x = false);

/// Grouped bar chart: one group per category, one bar per series.
std::string svg_bar_chart(const std::vector<std::string>& categories,
                          const std::vector<SvgSeries>& series, const SvgOptions& opts);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace ppaudit

#endif  // PPAUDIT_SVG_HPP_
