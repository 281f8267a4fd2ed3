#include "uniot/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

namespace uniot::svg {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 480.0;
constexpr double kMargin = 60.0;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

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

const char* color(size_t k) { return kPalette[k % std::size(kPalette)]; }

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!std::isfinite(lo)) lo = hi = 0.0;
    const double span = hi - lo;
    const double p = span > 0.0 ? 0.05 * span : 0.5;
    lo -= p;
    hi += p;
  }
  double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

std::string header(const std::string& title) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{3}</text>\n"
      "<rect x=\"{4}\" y=\"{4}\" width=\"{5}\" height=\"{6}\" fill=\"none\" stroke=\"#888\"/>\n",
      kWidth, kHeight, kWidth / 2, escape(title), kMargin, kWidth - 2 * kMargin, kHeight - 2 * kMargin);
}

std::string legend(const std::vector<std::string>& names) {
  std::string out;
  for (size_t k = 0; k < names.size(); ++k) {
    const double y = kMargin + 16.0 * static_cast<double>(k) + 12.0;
    out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n", kWidth - kMargin - 120,
                       y - 9, color(k));
    out += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
                       kWidth - kMargin - 104, y, escape(names[k]));
  }
  return out;
}

std::string axis_labels(const Range& xr, const Range& yr, const std::string& x_label, const std::string& y_label) {
  std::string out;
  for (int t = 0; t <= 4; ++t) {
    const double fx = xr.lo + (xr.hi - xr.lo) * t / 4.0;
    const double fy = yr.lo + (yr.hi - yr.lo) * t / 4.0;
    out += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.3g}</text>\n",
                       xr.map(fx, kMargin, kWidth - kMargin), kHeight - kMargin + 16, fx);
    out += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.3g}</text>\n",
                       kMargin - 6, yr.map(fy, kHeight - kMargin, kMargin) + 4, fy);
  }
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
                     kWidth / 2, kHeight - 16, escape(x_label));
  out += fmt::format(
      "<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 {0})\">{1}</text>\n",
      kHeight / 2, escape(y_label));
  return out;
}

}  // namespace

std::string scatter(const std::vector<ScatterPoint>& points, const std::vector<std::string>& groups,
                    const std::string& title) {
  Range xr, yr;
  for (const auto& p : points) {
    xr.add(p.x);
    yr.add(p.y);
  }
  xr.pad();
  yr.pad();
  std::string out = header(title);
  for (const auto& p : points) {
    out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.7\"/>\n",
                       xr.map(p.x, kMargin, kWidth - kMargin), yr.map(p.y, kHeight - kMargin, kMargin),
                       color(static_cast<size_t>(p.group)));
  }
  out += axis_labels(xr, yr, "PC1", "PC2");
  out += legend(groups);
  out += "</svg>\n";
  return out;
}

std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                       const std::string& y_label) {
  Range xr, yr;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("line_chart: x and y lengths differ");
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  xr.pad();
  yr.pad();
  std::string out = header(title);
  std::vector<std::string> names;
  for (size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    names.push_back(s.name);
    std::string pts;
    for (size_t i = 0; i < s.x.size(); ++i) {
      const double px = xr.map(s.x[i], kMargin, kWidth - kMargin);
      const double py = yr.map(s.y[i], kHeight - kMargin, kMargin);
      pts += fmt::format("{:.2f},{:.2f} ", px, py);
      out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3.5\" fill=\"{}\"/>\n", px, py, color(k));
    }
    out += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", pts, color(k));
  }
  out += axis_labels(xr, yr, x_label, y_label);
  out += legend(names);
  out += "</svg>\n";
  return out;
}

Matrix pca_2d(const Matrix& points) {
  if (points.rows() == 0) return Matrix(0, 2);
  const Eigen::RowVectorXd mean = points.colwise().mean();
  const Matrix centered = points.rowwise() - mean;
  const Matrix cov = centered.transpose() * centered / static_cast<double>(std::max<Index>(points.rows() - 1, 1));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Index d = points.cols();
  Matrix basis(d, 2);
  basis.col(0) = eig.eigenvectors().col(d - 1);
  basis.col(1) = d >= 2 ? Vector(eig.eigenvectors().col(d - 2)) : Vector::Zero(d);
  // Fix the sign so plots don't flip between runs.
  for (Index c = 0; c < 2; ++c) {
    Index big = 0;
    basis.col(c).cwiseAbs().maxCoeff(&big);
    if (basis(big, c) < 0.0) basis.col(c) *= -1.0;
  }
  return centered * basis;
}

}  // namespace uniot::svg
