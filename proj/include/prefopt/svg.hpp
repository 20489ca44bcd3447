#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "prefopt/io.hpp"
#include "prefopt/trainer.hpp"

namespace prefopt {

// Self-contained two-curve SVG of the probe trajectories (mean positive vs
// negative avg log-prob over training steps). Numbers are formatted through
// fixed printf patterns, so identical traces give identical bytes.

namespace detail {

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

} // namespace detail

inline std::string render_trace_svg(const TrainingTrace& trace) {
    if (trace.rows.empty()) throw ContractError("render_trace_svg: empty trace");
    constexpr double width = 640, height = 400;
    constexpr double left = 70, right = 620, top = 40, bottom = 350;

    double x_min = trace.rows.front().step;
    double x_max = trace.rows.back().step;
    if (x_max <= x_min) x_max = x_min + 1;
    double y_min = trace.rows[0].probe_pos_alp, y_max = y_min;
    for (const auto& r : trace.rows) {
        y_min = std::min({y_min, r.probe_pos_alp, r.probe_neg_alp});
        y_max = std::max({y_max, r.probe_pos_alp, r.probe_neg_alp});
    }
    double pad = std::max(0.05 * (y_max - y_min), 1e-3);
    y_min -= pad;
    y_max += pad;

    auto sx = [&](double step) { return left + (step - x_min) / (x_max - x_min) * (right - left); };
    auto sy = [&](double v) { return bottom - (v - y_min) / (y_max - y_min) * (bottom - top); };
    auto points = [&](auto field) {
        std::string out;
        for (const auto& r : trace.rows) {
            if (!out.empty()) out += " ";
            out += detail::svg_num(sx(r.step)) + "," + detail::svg_num(sy(field(r)));
        }
        return out;
    };

    using detail::svg_num;
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + svg_num(width) + "\" height=\"" +
           svg_num(height) + "\" viewBox=\"0 0 " + svg_num(width) + " " + svg_num(height) + "\">\n";
    svg += "<rect width=\"" + svg_num(width) + "\" height=\"" + svg_num(height) + "\" fill=\"white\"/>\n";
    svg += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
           "probe mean avg log-prob during training</text>\n";
    // axes
    svg += "<line x1=\"" + svg_num(left) + "\" y1=\"" + svg_num(bottom) + "\" x2=\"" + svg_num(right) +
           "\" y2=\"" + svg_num(bottom) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + svg_num(left) + "\" y1=\"" + svg_num(top) + "\" x2=\"" + svg_num(left) +
           "\" y2=\"" + svg_num(bottom) + "\" stroke=\"black\"/>\n";
    // tick labels
    svg += "<text x=\"" + svg_num(left) + "\" y=\"" + svg_num(bottom + 16) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" + svg_num(x_min) +
           "</text>\n";
    svg += "<text x=\"" + svg_num(right) + "\" y=\"" + svg_num(bottom + 16) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" + svg_num(x_max) +
           "</text>\n";
    svg += "<text x=\"" + svg_num(left - 6) + "\" y=\"" + svg_num(bottom) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" + svg_num(y_min) +
           "</text>\n";
    svg += "<text x=\"" + svg_num(left - 6) + "\" y=\"" + svg_num(top + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" + svg_num(y_max) +
           "</text>\n";
    svg += "<text x=\"345\" y=\"" + svg_num(bottom + 34) +
           "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">step</text>\n";
    // curves
    svg += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"" +
           points([](const TraceRow& r) { return r.probe_pos_alp; }) + "\"/>\n";
    svg += "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"" +
           points([](const TraceRow& r) { return r.probe_neg_alp; }) + "\"/>\n";
    // legend
    svg += "<rect x=\"490\" y=\"50\" width=\"120\" height=\"44\" fill=\"white\" stroke=\"black\"/>\n";
    svg += "<line x1=\"498\" y1=\"64\" x2=\"522\" y2=\"64\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"528\" y=\"68\" font-family=\"sans-serif\" font-size=\"12\">positive</text>\n";
    svg += "<line x1=\"498\" y1=\"82\" x2=\"522\" y2=\"82\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"528\" y=\"86\" font-family=\"sans-serif\" font-size=\"12\">negative</text>\n";
    svg += "</svg>\n";
    return svg;
}

inline void save_trace_svg(const TrainingTrace& trace, const std::string& path) {
    atomic_write_file(path, render_trace_svg(trace));
}

} // namespace prefopt
