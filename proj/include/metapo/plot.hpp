#pragma once

// Mean +/- sd regret curves as a standalone SVG line chart.

#include "metapo/benchmark.hpp"

#include <fmt/format.h>

namespace metapo {

inline std::string regret_svg(const ExperimentResult& r, const std::vector<Method>& methods) {
  static constexpr const char* kColors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3"};
  const double W = 720, H = 420, left = 60, right = 170, top = 30, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  double ymax = 0.0;
  for (Method m : methods) {
    const auto mean = r.mean_curve(m), sd = r.sd_curve(m);
    for (std::size_t k = 0; k < mean.size(); ++k) ymax = std::max(ymax, mean[k] + sd[k]);
  }
  if (!(ymax > 0.0)) ymax = 1.0;
  const int n = std::max(1, r.iterations);
  const auto px = [&](int k) { return left + pw * (n == 1 ? 0.0 : (k - 1.0) / (n - 1.0)); };
  const auto py = [&](double v) { return top + ph * (1.0 - std::clamp(v, 0.0, ymax) / ymax); };

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      W, H);
  s += fmt::format("<text x=\"{}\" y=\"18\" font-size=\"14\">{}: mean regret (band: 1 sd)</text>\n", left, r.function);
  s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, top, top + ph);
  s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", left, top + ph, left + pw);
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4.0;
    s += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", left - 6, py(v) + 4, v);
  }
  for (int k = 1; k <= n; k += std::max(1, n / 10))
    s += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", px(k), top + ph + 18, k);
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">iteration</text>\n", left + pw / 2, H - 10);

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const char* color = kColors[mi % 7];
    const auto mean = r.mean_curve(methods[mi]), sd = r.sd_curve(methods[mi]);
    std::string band, line;
    for (int k = 1; k <= n; ++k) band += fmt::format("{:.2f},{:.2f} ", px(k), py(mean[k - 1] + sd[k - 1]));
    for (int k = n; k >= 1; --k) band += fmt::format("{:.2f},{:.2f} ", px(k), py(mean[k - 1] - sd[k - 1]));
    for (int k = 1; k <= n; ++k) line += fmt::format("{:.2f},{:.2f} ", px(k), py(mean[k - 1]));
    s += fmt::format("<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n", band, color);
    s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", line, color);
    const double ly = top + 16.0 * static_cast<double>(mi) + 8;
    s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                     left + pw + 15, ly, left + pw + 35, color);
    s += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", left + pw + 40, ly + 4, to_string(methods[mi]));
  }
  s += "</svg>\n";
  return s;
}

}  // namespace metapo
