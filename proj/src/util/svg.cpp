#include "interp/util/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace interp::util::svg {

namespace {

const char* const kPalette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Frame {
  double width = 640, height = 400;
  double left = 70, right = 20, top = 40, bottom = 90;
  double lo = 0, hi = 1;

  double plot_w() const { return width - left - right; }
  double plot_h() const { return height - top - bottom; }
  double y(double v) const { return top + plot_h() * (1.0 - (v - lo) / (hi - lo)); }
};

void range(Frame& f, double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) hi = lo + 1;
  const double pad = 0.05 * (hi - lo);
  f.lo = lo < 0 ? lo - pad : std::min(0.0, lo);
  f.hi = hi + pad;
}

void header(std::ostringstream& out, const Frame& f, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(f.width) << "\" height=\"" << num(f.height)
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << num(f.width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
}

void axes(std::ostringstream& out, const Frame& f, const std::string& y_label) {
  out << "<line x1=\"" << num(f.left) << "\" y1=\"" << num(f.top) << "\" x2=\"" << num(f.left) << "\" y2=\""
      << num(f.top + f.plot_h()) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = f.lo + (f.hi - f.lo) * i / 4.0;
    out << "<line x1=\"" << num(f.left - 4) << "\" y1=\"" << num(f.y(v)) << "\" x2=\"" << num(f.left) << "\" y2=\""
        << num(f.y(v)) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << num(f.left - 6) << "\" y=\"" << num(f.y(v) + 4) << "\" text-anchor=\"end\">" << label(v)
        << "</text>\n";
  }
  if (f.lo < 0 && f.hi > 0) {
    out << "<line x1=\"" << num(f.left) << "\" y1=\"" << num(f.y(0)) << "\" x2=\"" << num(f.left + f.plot_w())
        << "\" y2=\"" << num(f.y(0)) << "\" stroke=\"#888\" stroke-dasharray=\"3,3\"/>\n";
  }
  if (!y_label.empty()) {
    out << "<text transform=\"translate(16," << num(f.top + f.plot_h() / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
        << escape(y_label) << "</text>\n";
  }
}

}  // namespace

std::string escape(const std::string& s) {
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

std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                      const std::vector<double>& values, const std::vector<double>& errors,
                      const std::string& y_label) {
  Frame f;
  double lo = 0, hi = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double e = i < errors.size() ? errors[i] : 0.0;
    lo = std::min(lo, values[i] - e);
    hi = std::max(hi, values[i] + e);
  }
  range(f, lo, hi);
  std::ostringstream out;
  header(out, f, title);
  axes(out, f, y_label);
  const double slot = values.empty() ? f.plot_w() : f.plot_w() / static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = f.left + slot * static_cast<double>(i) + slot * 0.15;
    const double y0 = f.y(0), y1 = f.y(values[i]);
    out << "<rect x=\"" << num(x) << "\" y=\"" << num(std::min(y0, y1)) << "\" width=\"" << num(slot * 0.7)
        << "\" height=\"" << num(std::abs(y1 - y0)) << "\" fill=\"" << kPalette[i % 7] << "\"/>\n";
    if (i < errors.size() && errors[i] > 0) {
      const double cx = x + slot * 0.35;
      out << "<line x1=\"" << num(cx) << "\" y1=\"" << num(f.y(values[i] - errors[i])) << "\" x2=\"" << num(cx)
          << "\" y2=\"" << num(f.y(values[i] + errors[i])) << "\" stroke=\"black\"/>\n";
    }
    const double lx = x + slot * 0.35, ly = f.top + f.plot_h() + 14;
    out << "<text x=\"" << num(lx) << "\" y=\"" << num(ly) << "\" text-anchor=\"end\" transform=\"rotate(-35 "
        << num(lx) << " " << num(ly) << ")\">" << escape(i < labels.size() ? labels[i] : "") << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series) {
  Frame f;
  f.bottom = 60;
  double xlo = INFINITY, xhi = -INFINITY, ylo = 0, yhi = 0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      const double e = i < s.err.size() ? s.err[i] : 0.0;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i] - e);
      yhi = std::max(yhi, s.y[i] + e);
    }
  }
  if (!std::isfinite(xlo)) xlo = 0, xhi = 1;
  if (xhi - xlo < 1e-12) xhi = xlo + 1;
  range(f, ylo, yhi);
  auto px = [&](double x) { return f.left + f.plot_w() * (x - xlo) / (xhi - xlo); };
  std::ostringstream out;
  header(out, f, title);
  axes(out, f, y_label);
  const double base = f.top + f.plot_h();
  out << "<line x1=\"" << num(f.left) << "\" y1=\"" << num(base) << "\" x2=\"" << num(f.left + f.plot_w())
      << "\" y2=\"" << num(base) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = xlo + (xhi - xlo) * i / 4.0;
    out << "<text x=\"" << num(px(v)) << "\" y=\"" << num(base + 16) << "\" text-anchor=\"middle\">" << label(v)
        << "</text>\n";
  }
  out << "<text x=\"" << num(f.left + f.plot_w() / 2) << "\" y=\"" << num(base + 36) << "\" text-anchor=\"middle\">"
      << escape(x_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % 7];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.y.size(); ++i) out << (i ? " " : "") << num(px(s.x[i])) << "," << num(f.y(s.y[i]));
    out << "\"/>\n";
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      out << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(f.y(s.y[i])) << "\" r=\"3\" fill=\"" << color
          << "\"/>\n";
      if (i < s.err.size() && s.err[i] > 0) {
        out << "<line x1=\"" << num(px(s.x[i])) << "\" y1=\"" << num(f.y(s.y[i] - s.err[i])) << "\" x2=\""
            << num(px(s.x[i])) << "\" y2=\"" << num(f.y(s.y[i] + s.err[i])) << "\" stroke=\"" << color << "\"/>\n";
      }
    }
    out << "<text x=\"" << num(f.left + f.plot_w() - 4) << "\" y=\"" << num(f.top + 14 + 14.0 * static_cast<double>(k))
        << "\" text-anchor=\"end\" fill=\"" << color << "\">" << escape(s.name) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string heatmap(const std::string& title, const std::vector<std::string>& labels,
                    const std::vector<std::vector<double>>& values) {
  const double cell = 26, margin = 80;
  const double n = static_cast<double>(labels.size());
  Frame f;
  f.width = margin + cell * n + 20;
  f.height = margin + cell * n + 20;
  double hi = 0;
  for (const auto& row : values) {
    for (double v : row) {
      if (std::isfinite(v)) hi = std::max(hi, v);
    }
  }
  if (hi <= 0) hi = 1;
  std::ostringstream out;
  header(out, f, title);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = margin + cell * static_cast<double>(i) + cell / 2;
    out << "<text x=\"" << num(margin - 4) << "\" y=\"" << num(p + 4) << "\" text-anchor=\"end\">" << escape(labels[i])
        << "</text>\n";
    out << "<text x=\"" << num(p) << "\" y=\"" << num(margin - 4) << "\" transform=\"rotate(-60 " << num(p) << " "
        << num(margin - 4) << ")\">" << escape(labels[i]) << "</text>\n";
    for (std::size_t j = 0; j < labels.size() && i < values.size() && j < values[i].size(); ++j) {
      const double v = values[i][j];
      if (!std::isfinite(v)) continue;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - std::clamp(v / hi, 0.0, 1.0))));
      char color[16];
      std::snprintf(color, sizeof color, "#%02x%02xff", shade, shade);
      out << "<rect x=\"" << num(margin + cell * static_cast<double>(j)) << "\" y=\""
          << num(margin + cell * static_cast<double>(i)) << "\" width=\"" << num(cell) << "\" height=\"" << num(cell)
          << "\" fill=\"" << color << "\"><title>" << label(v) << "</title></rect>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace interp::util::svg
