#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "playereval/core.hpp"
#include "playereval/estimators.hpp"

namespace playereval {

inline const std::vector<double> kDefaultFunnelLevels{0.975, 0.99, 0.999};

struct FunnelPoint {
  std::string label;
  double estimate = 0.0;
  /// 1 / se
  double precision = 0.0;
  /// exceeded[k] is true when |estimate| * precision > z for levels[k].
  std::vector<bool> exceeded;
};

struct ControlCurve {
  double level = 0.0;
  double z = 0.0;
  /// Sampled precisions and the upper limit z / precision there; the lower
  /// limit is the negation.
  std::vector<double> precision;
  std::vector<double> limit;
};

struct FunnelGeometry {
  std::vector<double> levels;
  std::vector<FunnelPoint> points;
  std::vector<ControlCurve> curves;
};

struct FunnelInput {
  std::string label;
  double estimate = 0.0;
  double se = 0.0;
};

/// Two-sided limits around zero. Throws DegenerateSe on any se <= 0.
FunnelGeometry funnel_geometry(const std::vector<FunnelInput>& points,
                               const std::vector<double>& levels = kDefaultFunnelLevels,
                               int samples = 64);

/// Each column divided by its sum.
Eigen::MatrixXd normalize_propensities(const Eigen::MatrixXd& pi);

/// Euclidean distance between columns.
Eigen::MatrixXd propensity_distance(const Eigen::MatrixXd& pi_bar);

enum class Linkage { Complete, Average, Single };

std::string_view to_string(Linkage linkage);
Linkage parse_linkage(std::string_view text);

/// Clusters 0..m-1 are the leaves; the k-th merge creates cluster m + k.
struct Merge {
  int left = 0;
  int right = 0;
  double height = 0.0;
  int size = 0;
};

struct Dendrogram {
  std::vector<std::string> labels;
  std::vector<Merge> merges;

  int leaf_count() const { return static_cast<int>(labels.size()); }
  /// Leaves in drawing order (left subtree first).
  std::vector<int> leaf_order() const;
};

/// Agglomerative clustering with Lance-Williams updates. Ties go to the
/// lexicographically smallest (id, id) pair.
Dendrogram hierarchical_cluster(const Eigen::MatrixXd& distance, std::vector<std::string> labels,
                                Linkage linkage = Linkage::Complete);

/// Rooted Newick with single-quoted labels and branch length = parent height
/// minus child height.
std::string to_newick(const Dendrogram& tree);

struct PositivityReport {
  Index count = 0;
  double mean = 0.0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double fraction_below_1e3 = 0.0;
  double fraction_below_1e2 = 0.0;
};

/// Summary over all entries; quartiles by type-7 interpolation.
PositivityReport positivity_report(const Eigen::MatrixXd& pi);

struct LeaderboardRow {
  std::string player;
  EstimandKind estimand = EstimandKind::Direct;
  EstimatorKind estimator = EstimatorKind::Tmle;
  double psi = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double empirical_rate = 0.0;
};

/// Sorted by psi, descending; ties keep input order.
std::vector<LeaderboardRow> sort_leaderboard(std::vector<LeaderboardRow> rows);

std::string leaderboard_csv(const std::vector<LeaderboardRow>& rows);
std::string funnel_csv(const FunnelGeometry& funnel);
std::string funnel_svg(const FunnelGeometry& funnel, const std::string& title);
std::string distance_csv(const Eigen::MatrixXd& distance, const std::vector<std::string>& labels);
std::string dendrogram_svg(const Dendrogram& tree, const std::string& title);

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

}  // namespace playereval
