#pragma once

// Kaplan-Meier SVG renderer: per-arm step paths drawn with straight
// segments only, short vertical censor ticks, and an embedded calibration
// block (pixel/data anchors) so the digitizer can self-calibrate.

#include <array>
#include <cmath>
#include <string>

#include "synthipd/common.hpp"
#include "synthipd/survival.hpp"
#include "synthipd/types.hpp"

namespace synthipd {

struct RenderStyle {
  double width = 800.0;
  double height = 520.0;
  double plot_left = 70.0;
  double plot_top = 30.0;
  double plot_right = 770.0;
  double plot_bottom = 460.0;
  std::array<std::string, 2> arm_colors{"#1f77b4", "#d62728"};
  double tick_half_px = 5.0;  // censor marks are vertical 2*tick_half_px bars
  double max_time = 0.0;      // 0: use the data's largest time
  bool axes = true;           // cosmetic frame and labels
  int precision = 6;          // pixel coordinate decimals
};

namespace detail {

inline std::string px(double v, int precision) {
  return format("%.*f", precision, v);
}

}  // namespace detail

// Emits an SVG with groups id="arm0"/"arm1" (one step path plus censor
// ticks each) and a <metadata id="synthipd-calibration"> JSON block giving
// the axis anchors.  Frame and labels use a separate stroke so arm
// selectors (id, stroke, class) never match them.
inline std::string render_km_svg(const IpdDataset& data,
                                 const RenderStyle& style = {}) {
  if (data.records.empty()) throw Error("render: dataset is empty");
  double tau = style.max_time;
  if (tau <= 0.0) {
    for (const auto& r : data.records) tau = std::max(tau, r.time);
    if (tau <= 0.0) tau = 1.0;
  }
  const double span_x = style.plot_right - style.plot_left;
  const double span_y = style.plot_bottom - style.plot_top;
  if (span_x <= 0.0 || span_y <= 0.0)
    throw Error("render: degenerate plot rectangle");
  const int prec = style.precision;
  auto x_of = [&](double t) {
    return style.plot_left + std::min(t, tau) / tau * span_x;
  };
  auto y_of = [&](double s) { return style.plot_bottom - s * span_y; };

  std::string svg;
  svg += format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 %g %g\" "
      "width=\"%g\" height=\"%g\">\n",
      style.width, style.height, style.width, style.height);
  svg += "<metadata id=\"synthipd-calibration\">";
  svg += format(
      "{\"schema\":1,"
      "\"x_anchors\":[{\"pixel\":%.*f,\"data\":0},"
      "{\"pixel\":%.*f,\"data\":%.17g}],"
      "\"y_anchors\":[{\"pixel\":%.*f,\"data\":0},"
      "{\"pixel\":%.*f,\"data\":1}]}",
      prec, style.plot_left, prec, style.plot_right, tau, prec,
      style.plot_bottom, prec, style.plot_top);
  svg += "</metadata>\n";

  if (style.axes) {
    svg += format(
        "<g stroke=\"#333333\" fill=\"none\" stroke-width=\"1\">"
        "<path d=\"M %s %s V %s H %s\"/></g>\n",
        detail::px(style.plot_left, prec).c_str(),
        detail::px(style.plot_top, prec).c_str(),
        detail::px(style.plot_bottom, prec).c_str(),
        detail::px(style.plot_right, prec).c_str());
    for (int i = 0; i <= 4; ++i) {
      const double s = double(i) / 4.0;
      svg += format(
          "<text x=\"%s\" y=\"%s\" font-size=\"12\" fill=\"#333333\" "
          "text-anchor=\"end\">%.2f</text>\n",
          detail::px(style.plot_left - 8.0, prec).c_str(),
          detail::px(y_of(s) + 4.0, prec).c_str(), s);
      const double t = s * tau;
      svg += format(
          "<text x=\"%s\" y=\"%s\" font-size=\"12\" fill=\"#333333\" "
          "text-anchor=\"middle\">%g</text>\n",
          detail::px(x_of(t), prec).c_str(),
          detail::px(style.plot_bottom + 18.0, prec).c_str(), t);
    }
  }

  for (int arm = 0; arm < 2; ++arm) {
    const auto slice = subset(data, std::nullopt, arm);
    if (slice.empty()) continue;
    const KmCurve km = km_fit(slice);
    const auto& step = km.step;

    std::string d = "M " + detail::px(style.plot_left, prec) + " " +
                    detail::px(y_of(1.0), prec);
    double level = 1.0;
    for (std::size_t i = 0; i < step.times.size(); ++i) {
      if (step.times[i] > tau) break;
      d += " H " + detail::px(x_of(step.times[i]), prec);
      if (step.survival[i] != level) {
        d += " V " + detail::px(y_of(step.survival[i]), prec);
        level = step.survival[i];
      }
    }
    // Extend the final level to the arm's last observation (or the plot
    // edge, whichever comes first).
    d += " H " + detail::px(x_of(std::min(step.max_time(), tau)), prec);

    svg += format("<g id=\"arm%d\" stroke=\"%s\" fill=\"none\" "
                  "stroke-width=\"2\">\n",
                  arm, style.arm_colors[std::size_t(arm)].c_str());
    svg += "<path d=\"" + d + "\"/>\n";
    for (double ct : step.censor_times) {
      if (ct > tau) continue;
      const double cx = x_of(ct);
      const double cy = y_of(step.eval(ct));
      svg += format("<path d=\"M %s %s V %s\"/>\n",
                    detail::px(cx, prec).c_str(),
                    detail::px(cy - style.tick_half_px, prec).c_str(),
                    detail::px(cy + style.tick_half_px, prec).c_str());
    }
    svg += "</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace synthipd
