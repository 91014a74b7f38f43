#include "playereval/profiling.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>

#include "playereval/error.hpp"
#include "playereval/stats.hpp"

namespace playereval {

std::string format_double(double value) {
  if (std::isnan(value)) return "NaN";
  if (std::isinf(value)) return value > 0 ? "Infinity" : "-Infinity";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

FunnelGeometry funnel_geometry(const std::vector<FunnelInput>& points, const std::vector<double>& levels,
                               int samples) {
  if (samples < 2) fail(ErrorKind::InvalidArgument, "control curves need at least two samples");
  FunnelGeometry out;
  out.levels = levels;
  std::vector<double> z;
  for (double c : levels) {
    if (!(c > 0.0 && c < 1.0)) fail(ErrorKind::InvalidArgument, "control levels must lie in (0, 1)");
    z.push_back(two_sided_z(c));
  }
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& p : points) {
    if (!(p.se > 0.0) || !std::isfinite(p.se))
      fail(ErrorKind::DegenerateSe, "funnel point '" + p.label + "' has a non-positive standard error");
    FunnelPoint fp;
    fp.label = p.label;
    fp.estimate = p.estimate;
    fp.precision = 1.0 / p.se;
    for (double zk : z) fp.exceeded.push_back(std::abs(p.estimate) * fp.precision > zk);
    lo = std::min(lo, fp.precision);
    hi = std::max(hi, fp.precision);
    out.points.push_back(std::move(fp));
  }
  if (points.empty()) return out;
  if (hi == lo) {
    lo *= 0.5;
    hi *= 1.5;
  }
  for (std::size_t k = 0; k < levels.size(); ++k) {
    ControlCurve curve;
    curve.level = levels[k];
    curve.z = z[k];
    for (int s = 0; s < samples; ++s) {
      const double x = lo + (hi - lo) * s / (samples - 1);
      curve.precision.push_back(x);
      curve.limit.push_back(z[k] / x);
    }
    out.curves.push_back(std::move(curve));
  }
  return out;
}

Eigen::MatrixXd normalize_propensities(const Eigen::MatrixXd& pi) {
  Eigen::MatrixXd out = pi;
  for (Index a = 0; a < pi.cols(); ++a) {
    const double total = pi.col(a).sum();
    if (!(total > 0.0)) fail(ErrorKind::InvalidArgument, "propensity column has no mass");
    out.col(a) /= total;
  }
  return out;
}

Eigen::MatrixXd propensity_distance(const Eigen::MatrixXd& pi_bar) {
  const Index m = pi_bar.cols();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(m, m);
  for (Index a = 0; a < m; ++a)
    for (Index b = a + 1; b < m; ++b) d(a, b) = d(b, a) = (pi_bar.col(a) - pi_bar.col(b)).norm();
  return d;
}

std::string_view to_string(Linkage linkage) {
  switch (linkage) {
    case Linkage::Complete: return "complete";
    case Linkage::Average: return "average";
    case Linkage::Single: return "single";
  }
  return "unknown";
}

Linkage parse_linkage(std::string_view text) {
  for (Linkage l : {Linkage::Complete, Linkage::Average, Linkage::Single})
    if (to_string(l) == text) return l;
  fail(ErrorKind::Config, "unknown linkage '" + std::string(text) + "'");
}

std::vector<int> Dendrogram::leaf_order() const {
  const int m = leaf_count();
  std::vector<int> order;
  if (m == 0) return order;
  std::function<void(int)> walk = [&](int id) {
    if (id < m) {
      order.push_back(id);
      return;
    }
    const Merge& mg = merges[static_cast<std::size_t>(id - m)];
    walk(mg.left);
    walk(mg.right);
  };
  walk(merges.empty() ? 0 : m + static_cast<int>(merges.size()) - 1);
  return order;
}

Dendrogram hierarchical_cluster(const Eigen::MatrixXd& distance, std::vector<std::string> labels, Linkage linkage) {
  const Index m = distance.rows();
  if (distance.cols() != m) fail(ErrorKind::InvalidArgument, "distance matrix must be square");
  if (static_cast<Index>(labels.size()) != m) fail(ErrorKind::InvalidArgument, "one label per leaf is required");
  if (!distance.allFinite() || (distance.array() < 0.0).any())
    fail(ErrorKind::InvalidArgument, "distances must be finite and non-negative");

  Dendrogram out;
  out.labels = std::move(labels);
  // Active clusters by id with their sizes; d stores current linkage distances by id.
  const Index total = 2 * m - 1;
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(std::max<Index>(total, 1), std::max<Index>(total, 1));
  d.topLeftCorner(m, m) = distance;
  std::vector<int> active;
  std::vector<int> size(static_cast<std::size_t>(std::max<Index>(total, 1)), 1);
  for (int i = 0; i < m; ++i) active.push_back(i);

  for (Index step = 0; step + 1 < m; ++step) {
    double best = std::numeric_limits<double>::infinity();
    int bi = -1, bj = -1;
    // active stays sorted, so the first strict minimum is the smallest id pair.
    for (std::size_t x = 0; x < active.size(); ++x)
      for (std::size_t y = x + 1; y < active.size(); ++y) {
        const double v = d(active[x], active[y]);
        if (v < best) {
          best = v;
          bi = active[x];
          bj = active[y];
        }
      }
    const int id = static_cast<int>(m + step);
    const int si = size[static_cast<std::size_t>(bi)], sj = size[static_cast<std::size_t>(bj)];
    size[static_cast<std::size_t>(id)] = si + sj;
    out.merges.push_back({bi, bj, best, si + sj});
    active.erase(std::remove_if(active.begin(), active.end(), [&](int c) { return c == bi || c == bj; }), active.end());
    for (int k : active) {
      const double dik = d(bi, k), djk = d(bj, k);
      double v = 0.0;
      switch (linkage) {
        case Linkage::Complete: v = std::max(dik, djk); break;
        case Linkage::Single: v = std::min(dik, djk); break;
        case Linkage::Average: v = (si * dik + sj * djk) / (si + sj); break;
      }
      d(id, k) = d(k, id) = v;
    }
    active.push_back(id);
  }
  return out;
}

namespace {

std::string quote_label(const std::string& label) {
  std::string out = "'";
  for (char ch : label) {
    if (ch == '\'') out += "''";
    else out += ch;
  }
  return out + "'";
}

std::string xml_escape(const std::string& text) {
  std::string out;
  for (char ch : text) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += "\"\"";
    else out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string to_newick(const Dendrogram& tree) {
  const int m = tree.leaf_count();
  if (m == 0) return ";";
  auto height = [&](int id) { return id < m ? 0.0 : tree.merges[static_cast<std::size_t>(id - m)].height; };
  std::function<std::string(int, double)> node = [&](int id, double parent) {
    std::string text;
    if (id < m) {
      text = quote_label(tree.labels[static_cast<std::size_t>(id)]);
    } else {
      const Merge& mg = tree.merges[static_cast<std::size_t>(id - m)];
      text = "(" + node(mg.left, mg.height) + "," + node(mg.right, mg.height) + ")";
    }
    if (parent >= 0.0) text += ":" + format_double(parent - height(id));
    return text;
  };
  const int root = m + static_cast<int>(tree.merges.size()) - 1;
  return node(root, -1.0) + ";";
}

PositivityReport positivity_report(const Eigen::MatrixXd& pi) {
  PositivityReport r;
  r.count = pi.size();
  if (r.count == 0) fail(ErrorKind::EmptyData, "no propensities to summarise");
  std::vector<double> v(pi.data(), pi.data() + pi.size());
  std::sort(v.begin(), v.end());
  r.mean = stable_mean(pi.reshaped());
  r.min = v.front();
  r.max = v.back();
  r.q1 = quantile_type7<double>(v, 0.25);
  r.median = quantile_type7<double>(v, 0.5);
  r.q3 = quantile_type7<double>(v, 0.75);
  const double n = static_cast<double>(v.size());
  r.fraction_below_1e3 = static_cast<double>(std::lower_bound(v.begin(), v.end(), 1e-3) - v.begin()) / n;
  r.fraction_below_1e2 = static_cast<double>(std::lower_bound(v.begin(), v.end(), 1e-2) - v.begin()) / n;
  return r;
}

std::vector<LeaderboardRow> sort_leaderboard(std::vector<LeaderboardRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.psi > b.psi; });
  return rows;
}

std::string leaderboard_csv(const std::vector<LeaderboardRow>& rows) {
  std::string out = "player,estimand,estimator,psi,se,ci_lo,ci_hi,empirical_rate\n";
  for (const auto& r : rows) {
    out += csv_field(r.player) + "," + std::string(to_string(r.estimand)) + "," + std::string(to_string(r.estimator)) +
           "," + format_double(r.psi) + "," + format_double(r.se) + "," + format_double(r.ci_lower) + "," +
           format_double(r.ci_upper) + "," + format_double(r.empirical_rate) + "\n";
  }
  return out;
}

std::string funnel_csv(const FunnelGeometry& funnel) {
  std::string out = "player,estimate,precision";
  for (double c : funnel.levels) out += ",exceeds_" + format_double(c);
  out += "\n";
  for (const auto& p : funnel.points) {
    out += csv_field(p.label) + "," + format_double(p.estimate) + "," + format_double(p.precision);
    for (bool e : p.exceeded) out += e ? ",1" : ",0";
    out += "\n";
  }
  return out;
}

std::string distance_csv(const Eigen::MatrixXd& distance, const std::vector<std::string>& labels) {
  std::string out = "player";
  for (const auto& l : labels) out += "," + csv_field(l);
  out += "\n";
  for (Index a = 0; a < distance.rows(); ++a) {
    out += csv_field(labels[static_cast<std::size_t>(a)]);
    for (Index b = 0; b < distance.cols(); ++b) out += "," + format_double(distance(a, b));
    out += "\n";
  }
  return out;
}

std::string funnel_svg(const FunnelGeometry& funnel, const std::string& title) {
  constexpr double W = 640, H = 420, L = 60, R = 20, T = 40, B = 50;
  double xmax = 0.0, ymax = 0.0;
  for (const auto& p : funnel.points) {
    xmax = std::max(xmax, p.precision);
    ymax = std::max(ymax, std::abs(p.estimate));
  }
  for (const auto& c : funnel.curves)
    for (std::size_t s = 0; s < c.limit.size(); ++s) {
      xmax = std::max(xmax, c.precision[s]);
      ymax = std::max(ymax, std::min(c.limit[s], 4.0 * std::max(ymax, 1e-3)));
    }
  if (xmax <= 0.0) xmax = 1.0;
  if (ymax <= 0.0) ymax = 1.0;
  xmax *= 1.05;
  ymax *= 1.1;
  auto sx = [&](double x) { return L + (W - L - R) * x / xmax; };
  auto sy = [&](double y) { return T + (H - T - B) * (0.5 - 0.5 * y / ymax); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << " " << H << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << fixed(sy(0)) << "\" x2=\"" << W - R << "\" y2=\"" << fixed(sy(0))
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  static const char* dashes[] = {"6,3", "3,3", "1,3"};
  for (std::size_t k = 0; k < funnel.curves.size(); ++k) {
    const auto& c = funnel.curves[k];
    for (int sign : {1, -1}) {
      svg << "<polyline fill=\"none\" stroke=\"grey\" stroke-dasharray=\"" << dashes[k % 3] << "\" points=\"";
      for (std::size_t s = 0; s < c.limit.size(); ++s) {
        const double y = std::clamp(sign * c.limit[s], -ymax, ymax);
        svg << (s ? " " : "") << fixed(sx(c.precision[s])) << "," << fixed(sy(y));
      }
      svg << "\"/>\n";
    }
  }
  for (const auto& p : funnel.points) {
    const bool flagged = !p.exceeded.empty() && p.exceeded.front();
    svg << "<circle cx=\"" << fixed(sx(p.precision)) << "\" cy=\"" << fixed(sy(p.estimate)) << "\" r=\"3.5\" fill=\""
        << (flagged ? "firebrick" : "steelblue") << "\"><title>" << xml_escape(p.label) << "</title></circle>\n";
    if (flagged)
      svg << "<text x=\"" << fixed(sx(p.precision) + 5) << "\" y=\"" << fixed(sy(p.estimate) - 5)
          << "\" font-family=\"sans-serif\" font-size=\"10\">" << xml_escape(p.label) << "</text>\n";
  }
  svg << "<text x=\"" << W / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">precision (1/se)</text>\n";
  svg << "<text x=\"16\" y=\"" << H / 2 << "\" transform=\"rotate(-90 16 " << H / 2
      << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">estimate</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

std::string dendrogram_svg(const Dendrogram& tree, const std::string& title) {
  const int m = tree.leaf_count();
  constexpr double H = 420, T = 40, B = 110, L = 50, R = 20;
  const double W = std::max(320.0, L + R + 24.0 * m);
  double top = 0.0;
  for (const auto& mg : tree.merges) top = std::max(top, mg.height);
  if (top <= 0.0) top = 1.0;
  const std::vector<int> order = tree.leaf_order();
  std::vector<double> xpos(static_cast<std::size_t>(std::max(1, 2 * m - 1)), 0.0);
  const double step = m > 1 ? (W - L - R) / (m - 1) : 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) xpos[static_cast<std::size_t>(order[k])] = L + step * static_cast<double>(k);
  auto sy = [&](double h) { return H - B - (H - T - B) * h / top; };
  auto height = [&](int id) { return id < m ? 0.0 : tree.merges[static_cast<std::size_t>(id - m)].height; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(W, 0) << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << fixed(W, 0) << " " << H << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << fixed(W / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n";
  for (std::size_t k = 0; k < tree.merges.size(); ++k) {
    const Merge& mg = tree.merges[k];
    const auto id = static_cast<std::size_t>(m) + k;
    const double xl = xpos[static_cast<std::size_t>(mg.left)], xr = xpos[static_cast<std::size_t>(mg.right)];
    xpos[id] = 0.5 * (xl + xr);
    svg << "<polyline fill=\"none\" stroke=\"black\" points=\"" << fixed(xl) << "," << fixed(sy(height(mg.left))) << " "
        << fixed(xl) << "," << fixed(sy(mg.height)) << " " << fixed(xr) << "," << fixed(sy(mg.height)) << " "
        << fixed(xr) << "," << fixed(sy(height(mg.right))) << "\"/>\n";
  }
  for (int leaf : order) {
    const double x = xpos[static_cast<std::size_t>(leaf)];
    svg << "<text x=\"" << fixed(x) << "\" y=\"" << fixed(H - B + 8) << "\" transform=\"rotate(60 " << fixed(x) << " "
        << fixed(H - B + 8) << ")\" font-family=\"sans-serif\" font-size=\"10\">"
        << xml_escape(tree.labels[static_cast<std::size_t>(leaf)]) << "</text>\n";
  }
  svg << "<line x1=\"" << L - 10 << "\" y1=\"" << fixed(sy(0)) << "\" x2=\"" << L - 10 << "\" y2=\"" << fixed(sy(top))
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << L - 14 << "\" y=\"" << fixed(sy(top)) << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
      << "font-size=\"10\">" << format_double(top) << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace playereval
