#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "playereval/cli.hpp"
#include "playereval/error.hpp"
#include "playereval/ingest.hpp"

using namespace playereval;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("playereval_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) { return parse_csv(slurp(p)).rows; }

RunConfig quick_estimate(const fs::path& out) {
  RunConfig c = default_run_config();
  c.data = "data/kickers_synthetic.csv";
  c.schema = "data/kickers_schema.json";
  c.out = out.string();
  c.outcome_library = {{LearnerKind::Mean}, {LearnerKind::Logistic}};
  c.marginal_library = c.outcome_library;
  c.propensity_library = c.outcome_library;
  c.stack_folds = 3;
  c.folds = 3;
  return c;
}

/// Leaf sets of the internal nodes of a Newick string, with their heights
/// measured from the leaves.
std::vector<std::pair<double, std::set<std::string>>> newick_clades(const std::string& s) {
  struct Node {
    int parent;
    double length = 0.0;
    std::set<std::string> leaves;
    bool internal = false;
  };
  std::vector<Node> nodes;
  std::size_t pos = 0;
  auto read = [&](auto&& self, int parent) -> int {
    const int id = static_cast<int>(nodes.size());
    nodes.push_back({parent});
    if (s[pos] == '(') {
      nodes[static_cast<std::size_t>(id)].internal = true;
      do {
        ++pos;
        const int child = self(self, id);
        const auto leaves = nodes[static_cast<std::size_t>(child)].leaves;
        nodes[static_cast<std::size_t>(id)].leaves.insert(leaves.begin(), leaves.end());
      } while (s[pos] == ',');
      ++pos;
    } else {
      const std::size_t end = s.find('\'', pos + 1);
      nodes[static_cast<std::size_t>(id)].leaves.insert(s.substr(pos + 1, end - pos - 1));
      pos = end + 1;
    }
    if (s[pos] == ':') {
      std::size_t used = 0;
      nodes[static_cast<std::size_t>(id)].length = std::stod(s.substr(pos + 1), &used);
      pos += used + 1;
    }
    return id;
  };
  read(read, -1);
  auto depth = [&](int v) {
    double d = 0.0;
    for (; v >= 0; v = nodes[static_cast<std::size_t>(v)].parent) d += nodes[static_cast<std::size_t>(v)].length;
    return d;
  };
  double leaf_depth = 0.0;
  for (int v = 0; v < static_cast<int>(nodes.size()); ++v)
    if (!nodes[static_cast<std::size_t>(v)].internal) leaf_depth = std::max(leaf_depth, depth(v));
  std::vector<std::pair<double, std::set<std::string>>> out;
  for (int v = 0; v < static_cast<int>(nodes.size()); ++v)
    if (nodes[static_cast<std::size_t>(v)].internal) out.emplace_back(leaf_depth - depth(v), nodes[static_cast<std::size_t>(v)].leaves);
  std::sort(out.begin(), out.end());
  return out;
}

void write_propensities(const fs::path& p, const Eigen::MatrixXd& pi, const std::vector<std::string>& labels) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p);
  for (std::size_t a = 0; a < labels.size(); ++a) f << (a ? "," : "") << labels[a];
  f << "\n";
  for (Index i = 0; i < pi.rows(); ++i) {
    for (Index a = 0; a < pi.cols(); ++a) f << (a ? "," : "") << format_double(pi(i, a));
    f << "\n";
  }
}

}  // namespace

TEST_CASE("config round trip and validation") {
  RunConfig c = default_run_config();
  c.seed = 7;
  c.folds = 4;
  c.players = {"Abbott"};
  c.estimands = {EstimandKind::Indirect};
  c.linkage = Linkage::Single;
  const RunConfig back = parse_run_config(run_config_to_json(c));
  CHECK(run_config_to_json(back) == run_config_to_json(c));
  CHECK(run_config_to_json(c, false).find("\"out\"") == std::string::npos);

  for (const char* bad : {R"({"level": 1.5})", R"({"folds": 1})", R"({"estimands": ["sideways"]})", R"({"seed": -3})",
                          R"({"linkage": "ward"})", "[1, 2"}) {
    try {
      parse_run_config(bad);
      FAIL("accepted " << std::string(bad));
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Config);
    }
  }
  CHECK(exit_code_for(ErrorKind::Config) == 2);
  CHECK(exit_code_for(ErrorKind::Io) == 2);
  CHECK(exit_code_for(ErrorKind::FluctuationDiverged) == 1);
  CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
  CHECK(hex64(fnv1a64("a")) == "af63dc4c8601ec8c");
}

TEST_CASE("fixture documents round trip") {
  for (const auto& name : builtin_fixture_names()) {
    const DgpSpec dgp = builtin_fixture(name);
    const std::string text = dgp_to_json(dgp);
    CHECK(dgp_to_json(dgp_from_json(text)) == text);
    CHECK(generate(dgp_from_json(text), 50, 3) == generate(dgp, 50, 3));
  }
  CHECK(dgp_to_json(resolve_fixture("fixtures/four-cell.json")) == dgp_to_json(builtin_fixture("four-cell")));
  CHECK_THROWS_AS(resolve_fixture("nowhere"), Error);
}

TEST_CASE("estimate on the bundled data") {
  const fs::path out = scratch("estimate");
  RunConfig c = default_run_config();
  c.data = "data/kickers_synthetic.csv";
  c.schema = "data/kickers_schema.json";
  c.out = out.string();
  REQUIRE(cmd_estimate(c) == 0);
  for (const char* f : {"results.json", "leaderboard.csv", "funnel_indirect.csv", "funnel_indirect.svg", "funnel_rand.csv",
                        "funnel_rand.svg", "positivity.json", "propensities.csv", "ingest_report.json", "manifest.json"})
    CHECK(fs::exists(out / f));

  const json results = load_json(out / "results.json");
  const Index m = static_cast<Index>(results["dataset"]["players"].size());
  CHECK(m >= 2);
  const auto board = csv_rows(out / "leaderboard.csv");
  CHECK(static_cast<Index>(board.size()) == m);
  for (std::size_t r = 1; r < board.size(); ++r) CHECK(std::stod(board[r - 1][3]) >= std::stod(board[r][3]));
  CHECK(results["estimates"].size() == static_cast<std::size_t>(m * 9));

  const json manifest = load_json(out / "manifest.json");
  for (const auto& [name, sum] : manifest["artifacts"].items()) CHECK(sum.get<std::string>() == hex64(fnv1a64(slurp(out / name))));
  CHECK(manifest["seed"] == c.seed);
}

TEST_CASE("estimate filters and determinism") {
  const fs::path a = scratch("estimate_a"), b = scratch("estimate_b");
  RunConfig c = quick_estimate(a);
  c.players = {"Barlow"};
  c.estimands = {EstimandKind::Direct};
  c.estimators = {EstimatorKind::Tmle};
  REQUIRE(cmd_estimate(c) == 0);
  const json results = load_json(a / "results.json");
  REQUIRE(results["estimates"].size() == 1);
  CHECK(results["estimates"][0]["player"] == "Barlow");
  CHECK(results["estimates"][0]["estimator"] == "tmle");

  c.out = b.string();
  REQUIRE(cmd_estimate(c) == 0);
  for (const auto& entry : fs::directory_iterator(a)) CHECK(slurp(entry.path()) == slurp(b / entry.path().filename()));

  c.players = {"Nobody"};
  CHECK(cmd_estimate(c) == 2);
}

TEST_CASE("estimate error contract") {
  const fs::path out = scratch("estimate_bad");
  RunConfig c = quick_estimate(out);
  c.schema = "missing/schema.json";
  CHECK(cmd_estimate(c) == 2);
  const json err = load_json(out / "error.json");
  CHECK(err["exit_code"] == 2);
  CHECK(err["error"] == "Io");
  CHECK(err["message"].get<std::string>().find("missing/schema.json") != std::string::npos);
}

TEST_CASE("simulate") {
  const fs::path out = scratch("simulate");
  RunConfig c = default_run_config();
  c.out = out.string();
  c.fixture = "four-cell";
  c.replications = 10;
  c.n = 300;
  c.estimators = {EstimatorKind::Substitution, EstimatorKind::Tmle};
  REQUIRE(cmd_simulate(c) == 0);
  const json report = load_json(out / "simulation_report.json");
  CHECK_FALSE(report["warnings"].empty());
  CHECK(report["below_recommended_reps"] == true);

  c.scenario = Scenario::MuMisspecified;
  c.replications = 50;
  REQUIRE(cmd_simulate(c) == 0);
  std::set<std::string> estimators;
  for (const auto& row : csv_rows(out / "simulation_report.csv")) {
    estimators.insert(row[4]);
    CHECK(row[1] == "mu_misspecified");
    if (row[4] == "tmle") CHECK(row[15] != "NaN");
  }
  CHECK(estimators == std::set<std::string>{"substitution", "tmle"});

  c.fixture = "no-such-fixture";
  CHECK(cmd_simulate(c) == 2);
}

TEST_CASE("cluster") {
  const fs::path out = scratch("cluster");
  Eigen::MatrixXd pi(4, 3);
  pi << 0.2, 0.3, 0.5, 0.6, 0.2, 0.2, 0.1, 0.1, 0.8, 0.3, 0.4, 0.3;
  write_propensities(out / "in" / "p.csv", pi, {"A", "B", "C"});
  RunConfig c = default_run_config();
  c.out = (out / "run").string();
  c.propensities = (out / "in" / "p.csv").string();
  REQUIRE(cmd_cluster(c) == 0);
  const std::string newick = slurp(out / "run" / "dendrogram.newick");
  const auto clades = newick_clades(newick);
  CHECK(clades.size() == 2);
  CHECK(clades.back().second == std::set<std::string>{"A", "B", "C"});

  Eigen::MatrixXd dist(3, 3);
  const auto rows = csv_rows(out / "run" / "distances.csv");
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) dist(i, j) = std::stod(rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 1)]);
  const auto tree = hierarchical_cluster(dist, {"A", "B", "C"});
  for (std::size_t k = 0; k < 2; ++k) CHECK(clades[k].first == doctest::Approx(tree.merges[k].height).epsilon(1e-9));

  SUBCASE("duplicated players merge at zero") {
    Eigen::MatrixXd dup(4, 4);
    dup.leftCols(3) = pi;
    dup.col(3) = pi.col(0);
    write_propensities(out / "in" / "dup.csv", dup, {"A", "B", "C", "A2"});
    c.propensities = (out / "in" / "dup.csv").string();
    REQUIRE(cmd_cluster(c) == 0);
    const auto dc = newick_clades(slurp(out / "run" / "dendrogram.newick"));
    CHECK(dc.front().first == 0.0);
    CHECK(dc.front().second == std::set<std::string>{"A", "A2"});
  }
  SUBCASE("no nuisance source") {
    c.propensities.clear();
    CHECK(cmd_cluster(c) == 2);
    CHECK(fs::exists(out / "run" / "error.json"));
  }
  SUBCASE("from data and schema") {
    RunConfig d = quick_estimate(out / "from_data");
    REQUIRE(cmd_cluster(d) == 0);
    const auto all = newick_clades(slurp(out / "from_data" / "dendrogram.newick"));
    CHECK(all.back().second.size() == 8);
  }
}
