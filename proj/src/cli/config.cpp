#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "json.hpp"
#include "playereval/cli.hpp"
#include "playereval/ingest.hpp"

namespace playereval {

using nlohmann::json;

std::vector<LearnerConfig> default_library() {
  LearnerConfig mean{LearnerKind::Mean};
  LearnerConfig logistic{LearnerKind::Logistic};
  LearnerConfig interacted{LearnerKind::Logistic};
  interacted.interactions = true;
  LearnerConfig stumps{LearnerKind::BoostedStumps};
  stumps.rounds = 100;
  stumps.shrinkage = 0.1;
  return {mean, logistic, interacted, stumps};
}

RunConfig default_run_config() {
  RunConfig c;
  c.outcome_library = default_library();
  c.marginal_library = default_library();
  c.propensity_library = default_library();
  return c;
}

namespace {

LearnerConfig learner_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind")) fail(ErrorKind::Config, "learner entries need a 'kind'");
  const std::string kind = j["kind"].get<std::string>();
  LearnerConfig c;
  if (kind == "mean") c.kind = LearnerKind::Mean;
  else if (kind == "logistic") c.kind = LearnerKind::Logistic;
  else if (kind == "stumps" || kind == "boosted_stumps") c.kind = LearnerKind::BoostedStumps;
  else fail(ErrorKind::Config, "unknown learner kind '" + kind + "'");
  c.ridge = j.value("ridge", c.ridge);
  c.interactions = j.value("interactions", c.interactions);
  c.rounds = j.value("rounds", c.rounds);
  c.shrinkage = j.value("shrinkage", c.shrinkage);
  if (c.ridge < 0 || c.rounds < 1 || !(c.shrinkage > 0 && c.shrinkage <= 1))
    fail(ErrorKind::Config, "learner '" + kind + "' has out-of-range settings");
  return c;
}

json learner_to_json(const LearnerConfig& c) {
  switch (c.kind) {
    case LearnerKind::Mean: return {{"kind", "mean"}};
    case LearnerKind::Logistic: return {{"kind", "logistic"}, {"ridge", c.ridge}, {"interactions", c.interactions}};
    case LearnerKind::BoostedStumps: return {{"kind", "stumps"}, {"rounds", c.rounds}, {"shrinkage", c.shrinkage}};
  }
  return {};
}

std::vector<LearnerConfig> library_from_json(const json& j) {
  if (!j.is_array() || j.empty()) fail(ErrorKind::Config, "learner libraries must be non-empty arrays");
  std::vector<LearnerConfig> out;
  for (const auto& e : j) out.push_back(learner_from_json(e));
  return out;
}

json library_to_json(const std::vector<LearnerConfig>& lib) {
  json out = json::array();
  for (const auto& c : lib) out.push_back(learner_to_json(c));
  return out;
}

}  // namespace

RunConfig parse_run_config(std::string_view json_text, RunConfig c) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorKind::Config, "config must be a JSON object");
  try {
    if (doc.contains("data")) c.data = doc["data"].get<std::string>();
    if (doc.contains("schema")) c.schema = doc["schema"].get<std::string>();
    if (doc.contains("out")) c.out = doc["out"].get<std::string>();
    if (doc.contains("propensities")) c.propensities = doc["propensities"].get<std::string>();
    if (doc.contains("seed")) {
      if (!doc["seed"].is_number_unsigned()) fail(ErrorKind::Config, "seed must be a non-negative integer");
      c.seed = doc["seed"].get<std::uint64_t>();
    }
    if (doc.contains("folds")) {
      if (doc["folds"].is_null()) c.folds.reset();
      else c.folds = doc["folds"].get<int>();
    }
    if (doc.contains("level")) c.level = doc["level"].get<double>();
    if (doc.contains("estimands")) {
      c.estimands.clear();
      for (const auto& e : doc["estimands"]) c.estimands.push_back(parse_estimand_kind(e.get<std::string>()));
    }
    if (doc.contains("estimators")) {
      c.estimators.clear();
      for (const auto& e : doc["estimators"]) c.estimators.push_back(parse_estimator_kind(e.get<std::string>()));
    }
    if (doc.contains("players")) {
      c.players.clear();
      if (doc["players"].is_string()) {
        if (doc["players"].get<std::string>() != "all") fail(ErrorKind::Config, "players must be \"all\" or a list");
      } else {
        for (const auto& p : doc["players"]) c.players.push_back(p.get<std::string>());
      }
    }
    if (doc.contains("learners")) {
      const auto& l = doc["learners"];
      if (l.contains("outcome")) c.outcome_library = library_from_json(l["outcome"]);
      if (l.contains("marginal_outcome")) c.marginal_library = library_from_json(l["marginal_outcome"]);
      if (l.contains("propensity")) c.propensity_library = library_from_json(l["propensity"]);
      if (l.contains("stack_folds")) c.stack_folds = l["stack_folds"].get<int>();
    }
    if (doc.contains("funnel_levels")) c.funnel_levels = doc["funnel_levels"].get<std::vector<double>>();
    if (doc.contains("linkage")) c.linkage = parse_linkage(doc["linkage"].get<std::string>());
    if (doc.contains("epsilon_pool")) c.epsilon_pool = doc["epsilon_pool"].get<bool>();
    if (doc.contains("fixture")) c.fixture = doc["fixture"].get<std::string>();
    if (doc.contains("scenario")) c.scenario = parse_scenario(doc["scenario"].get<std::string>());
    if (doc.contains("replications")) c.replications = doc["replications"].get<int>();
    if (doc.contains("n")) c.n = doc["n"].get<Index>();
    if (doc.contains("threads")) c.threads = doc["threads"].get<int>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config field has the wrong type: ") + e.what());
  }
  if (c.folds && *c.folds < 2) fail(ErrorKind::Config, "folds must be at least 2");
  if (!(c.level > 0.0 && c.level < 1.0)) fail(ErrorKind::Config, "level must lie in (0, 1)");
  if (c.stack_folds < 2) fail(ErrorKind::Config, "stack_folds must be at least 2");
  if (c.estimands.empty() || c.estimators.empty()) fail(ErrorKind::Config, "nothing to estimate");
  for (double v : c.funnel_levels)
    if (!(v > 0.0 && v < 1.0)) fail(ErrorKind::Config, "funnel levels must lie in (0, 1)");
  if (c.replications < 1 || c.n < 1 || c.threads < 1) fail(ErrorKind::Config, "simulation sizes must be positive");
  return c;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  return parse_run_config(read_file(path), std::move(base));
}

std::string run_config_to_json(const RunConfig& c, bool include_out) {
  json doc;
  doc["data"] = c.data;
  doc["schema"] = c.schema;
  if (include_out) doc["out"] = c.out;
  doc["propensities"] = c.propensities;
  doc["seed"] = c.seed;
  doc["folds"] = c.folds ? json(*c.folds) : json(nullptr);
  doc["level"] = c.level;
  doc["estimands"] = json::array();
  for (auto k : c.estimands) doc["estimands"].push_back(std::string(to_string(k)));
  doc["estimators"] = json::array();
  for (auto k : c.estimators) doc["estimators"].push_back(std::string(to_string(k)));
  doc["players"] = c.players.empty() ? json("all") : json(c.players);
  doc["learners"] = {{"outcome", library_to_json(c.outcome_library)},
                     {"marginal_outcome", library_to_json(c.marginal_library)},
                     {"propensity", library_to_json(c.propensity_library)},
                     {"stack_folds", c.stack_folds}};
  doc["funnel_levels"] = c.funnel_levels;
  doc["linkage"] = std::string(to_string(c.linkage));
  doc["epsilon_pool"] = c.epsilon_pool;
  doc["fixture"] = c.fixture;
  doc["scenario"] = std::string(to_string(c.scenario));
  doc["replications"] = c.replications;
  doc["n"] = c.n;
  doc["threads"] = c.threads;
  return doc.dump(2) + "\n";
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Io:
    case ErrorKind::MissingColumn:
    case ErrorKind::NonBinaryOutcome:
    case ErrorKind::UnparseableValue:
      return 2;
    default:
      return 1;
  }
}

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

Eigen::MatrixXd matrix_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) fail(ErrorKind::Config, std::string(what) + " must be a nested array");
  const auto rows = static_cast<Index>(j.size());
  const auto cols = static_cast<Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (static_cast<Index>(j[static_cast<std::size_t>(r)].size()) != cols)
      fail(ErrorKind::Config, std::string(what) + " rows differ in length");
    for (Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json scores_to_json(const LinearScores& s, const char* type) {
  json out{{"type", type}, {"intercept", vector_to_json(s.intercept)}};
  if (s.slope.size() > 0) out["slope"] = matrix_to_json(s.slope);
  if (s.interaction.size() > 0) out["interaction"] = vector_to_json(s.interaction);
  return out;
}

std::variant<LinearScores, CellTable> nuisance_from_json(const json& j, const char* scores_type) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "table") return CellTable(matrix_from_json(j.at("values"), "table"));
  if (type != scores_type) fail(ErrorKind::Config, "unknown nuisance type '" + type + "'");
  LinearScores s;
  s.intercept = vector_from_json(j.at("intercept"));
  if (j.contains("slope")) s.slope = matrix_from_json(j["slope"], "slope");
  if (j.contains("interaction")) s.interaction = vector_from_json(j["interaction"]);
  return s;
}

}  // namespace

std::string dgp_to_json(const DgpSpec& d) {
  json doc;
  doc["name"] = d.name;
  doc["players"] = d.player_count;
  doc["covariate_names"] = d.covariate_names;
  if (const auto* disc = std::get_if<DiscreteCovariates>(&d.covariates)) {
    json cells = json::array();
    for (const auto& c : disc->cells) cells.push_back(vector_to_json(c));
    doc["covariates"] = {{"type", "discrete"}, {"cells", cells}, {"probabilities", vector_to_json(disc->probabilities)}};
  } else {
    json comps = json::array();
    for (const auto& c : std::get<ContinuousCovariates>(d.covariates).components) {
      if (c.kind == CovariateComponent::Kind::Uniform) comps.push_back({{"dist", "uniform"}, {"low", c.first}, {"high", c.second}});
      else comps.push_back({{"dist", "normal"}, {"mean", c.first}, {"sd", c.second}});
    }
    doc["covariates"] = {{"type", "continuous"}, {"components", comps}};
  }
  if (const auto* t = std::get_if<CellTable>(&d.propensity)) doc["propensity"] = {{"type", "table"}, {"values", matrix_to_json(*t)}};
  else doc["propensity"] = scores_to_json(std::get<LinearScores>(d.propensity), "softmax");
  if (const auto* t = std::get_if<CellTable>(&d.outcome)) doc["outcome"] = {{"type", "table"}, {"values", matrix_to_json(*t)}};
  else doc["outcome"] = scores_to_json(std::get<LinearScores>(d.outcome), "logistic");
  doc["seed"] = d.seed;
  return doc.dump(2) + "\n";
}

DgpSpec dgp_from_json(std::string_view json_text) {
  DgpSpec d;
  try {
    const json doc = json::parse(json_text);
    d.name = doc.value("name", std::string("custom"));
    d.player_count = doc.at("players").get<int>();
    d.covariate_names = doc.value("covariate_names", std::vector<std::string>{});
    const auto& cov = doc.at("covariates");
    const std::string type = cov.at("type").get<std::string>();
    if (type == "discrete") {
      DiscreteCovariates disc;
      for (const auto& c : cov.at("cells")) disc.cells.push_back(vector_from_json(c));
      disc.probabilities = vector_from_json(cov.at("probabilities"));
      d.covariates = disc;
    } else if (type == "continuous") {
      ContinuousCovariates cont;
      for (const auto& c : cov.at("components")) {
        const std::string dist = c.at("dist").get<std::string>();
        if (dist == "uniform") cont.components.push_back({CovariateComponent::Kind::Uniform, c.at("low").get<double>(), c.at("high").get<double>()});
        else if (dist == "normal") cont.components.push_back({CovariateComponent::Kind::Normal, c.at("mean").get<double>(), c.at("sd").get<double>()});
        else fail(ErrorKind::Config, "unknown covariate distribution '" + dist + "'");
      }
      d.covariates = cont;
    } else {
      fail(ErrorKind::Config, "unknown covariate type '" + type + "'");
    }
    d.propensity = nuisance_from_json(doc.at("propensity"), "softmax");
    d.outcome = nuisance_from_json(doc.at("outcome"), "logistic");
    d.seed = doc.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("fixture is malformed: ") + e.what());
  }
  try {
    validate(d);
  } catch (const Error& e) {
    fail(ErrorKind::Config, std::string("fixture is invalid: ") + e.what());
  }
  return d;
}

DgpSpec resolve_fixture(const std::string& name_or_path) {
  const auto names = builtin_fixture_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) return builtin_fixture(name_or_path);
  if (!std::filesystem::exists(name_or_path))
    fail(ErrorKind::Config, "'" + name_or_path + "' is neither a built-in fixture nor a readable file");
  return dgp_from_json(read_file(name_or_path));
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::string experiment_csv(const ExperimentReport& r) {
  std::string out =
      "dgp,scenario,n,replications,estimator,estimand,player,truth,completed,failures,mean_estimate,bias,"
      "empirical_se,mc_se,mean_estimated_se,coverage,below_recommended_reps\n";
  const bool low = r.replications < kRecommendedReplications;
  for (const auto& row : r.rows) {
    out += r.dgp_name + "," + std::string(to_string(r.scenario)) + "," + std::to_string(r.n) + "," +
           std::to_string(r.replications) + "," + std::string(to_string(row.estimator)) + "," +
           std::string(to_string(row.estimand)) + "," + std::to_string(row.focal_player) + "," +
           format_double(row.truth) + "," + std::to_string(row.completed) + "," + std::to_string(row.failures) + "," +
           format_double(row.mean_estimate) + "," + format_double(row.bias) + "," + format_double(row.empirical_se) +
           "," + format_double(row.mc_se) + "," + format_double(row.mean_estimated_se) + "," +
           format_double(row.coverage) + "," + (low ? "1" : "0") + "\n";
  }
  return out;
}

std::string experiment_json(const ExperimentReport& r) {
  json doc;
  doc["dgp"] = r.dgp_name;
  doc["scenario"] = std::string(to_string(r.scenario));
  doc["n"] = r.n;
  doc["replications"] = r.replications;
  doc["seed"] = r.seed;
  doc["below_recommended_reps"] = r.replications < kRecommendedReplications;
  doc["warnings"] = r.warnings;
  doc["rows"] = json::array();
  for (const auto& row : r.rows) {
    doc["rows"].push_back({{"estimator", std::string(to_string(row.estimator))},
                           {"estimand", std::string(to_string(row.estimand))},
                           {"player", row.focal_player},
                           {"truth", row.truth},
                           {"completed", row.completed},
                           {"failures", row.failures},
                           {"mean_estimate", number_or_null(row.mean_estimate)},
                           {"bias", number_or_null(row.bias)},
                           {"empirical_se", number_or_null(row.empirical_se)},
                           {"mc_se", number_or_null(row.mc_se)},
                           {"mean_estimated_se", number_or_null(row.mean_estimated_se)},
                           {"coverage", number_or_null(row.coverage)},
                           {"max_abs_eif_mean", row.max_abs_eif_mean}});
  }
  return doc.dump(2) + "\n";
}

}  // namespace playereval
