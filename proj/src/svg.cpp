#include "rectflow/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>

namespace rectflow {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

}  // namespace

std::string render_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  const double left = 70, right = 150, top = 40, bottom = 50;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto ty = [&](double y) { return spec.log_y ? std::log10(y) : y; };
  auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!spec.log_y || y > 0); };

  Range rx, ry;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      rx.add(s.x[i]);
      ry.add(ty(s.y[i]));
    }
  }
  rx.pad();
  ry.pad();
  if (spec.equal_aspect) {
    const double sx = (rx.hi - rx.lo) / pw, sy = (ry.hi - ry.lo) / ph;
    const double s = std::max(sx, sy);
    const double cx = 0.5 * (rx.lo + rx.hi), cy = 0.5 * (ry.lo + ry.hi);
    rx.lo = cx - 0.5 * s * pw, rx.hi = cx + 0.5 * s * pw;
    ry.lo = cy - 0.5 * s * ph, ry.hi = cy + 0.5 * s * ph;
  }
  auto px = [&](double x) { return left + (x - rx.lo) / (rx.hi - rx.lo) * pw; };
  auto py = [&](double y) { return top + ph - (ty(y) - ry.lo) / (ry.hi - ry.lo) * ph; };

  std::ostringstream o;
  o << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">)",
                   spec.width, spec.height)
    << '\n';
  o << fmt::format(R"(<rect width="{}" height="{}" fill="white"/>)", spec.width, spec.height) << '\n';
  o << fmt::format(R"(<text x="{:.1f}" y="22" text-anchor="middle" font-size="14">{}</text>)", left + pw / 2,
                   escape(spec.title))
    << '\n';
  o << fmt::format(R"(<rect x="{}" y="{}" width="{:.1f}" height="{:.1f}" fill="none" stroke="#333"/>)", left, top, pw,
                   ph)
    << '\n';
  for (int i = 0; i <= 4; ++i) {
    const double fx = rx.lo + (rx.hi - rx.lo) * i / 4.0;
    const double fy = ry.lo + (ry.hi - ry.lo) * i / 4.0;
    const double gx = left + pw * i / 4.0, gy = top + ph - ph * i / 4.0;
    o << fmt::format(R"(<text x="{:.1f}" y="{:.1f}" text-anchor="middle">{:.3g}</text>)", gx, top + ph + 16, fx)
      << '\n';
    o << fmt::format(R"(<text x="{:.1f}" y="{:.1f}" text-anchor="end">{:.3g}</text>)", left - 6, gy + 4,
                     spec.log_y ? std::pow(10.0, fy) : fy)
      << '\n';
  }
  o << fmt::format(R"(<text x="{:.1f}" y="{}" text-anchor="middle">{}</text>)", left + pw / 2, spec.height - 10,
                   escape(spec.x_label))
    << '\n';
  o << fmt::format(R"svg(<text x="16" y="{:.1f}" text-anchor="middle" transform="rotate(-90 16 {:.1f})">{}</text>)svg",
                   top + ph / 2, top + ph / 2, escape(spec.y_label))
    << '\n';

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::ostringstream pts;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      if (s.markers) {
        o << fmt::format(R"(<circle cx="{:.2f}" cy="{:.2f}" r="2.5" fill="{}" fill-opacity="0.7"/>)", px(s.x[i]),
                         py(s.y[i]), color)
          << '\n';
      } else {
        pts << fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.y[i]));
      }
    }
    if (!s.markers && !pts.str().empty()) {
      o << fmt::format(R"(<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>)", pts.str(), color)
        << '\n';
    }
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    o << fmt::format(R"(<rect x="{:.1f}" y="{:.1f}" width="12" height="12" fill="{}"/>)", left + pw + 12, ly - 10,
                     color)
      << '\n';
    o << fmt::format(R"(<text x="{:.1f}" y="{:.1f}">{}</text>)", left + pw + 30, ly, escape(s.label)) << '\n';
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace rectflow
