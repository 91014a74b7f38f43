#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"
#include "playereval/cli.hpp"
#include "playereval/ingest.hpp"
#include "playereval/stats.hpp"

namespace playereval {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Output directory plus the checksums of everything written into it.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::string dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) fail(ErrorKind::Io, "cannot create output directory '" + dir_ + "': " + ec.message());
  }

  void write(const std::string& name, const std::string& content) {
    const fs::path path = fs::path(dir_) / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << content;
    if (!out) fail(ErrorKind::Io, "short write to '" + path.string() + "'");
    checksums_[name] = hex64(fnv1a64(content));
  }

  void manifest(const std::string& command, const RunConfig& config) {
    json doc;
    doc["command"] = command;
    doc["config_hash"] = hex64(fnv1a64(run_config_to_json(config, false)));
    doc["seed"] = config.seed;
    doc["hash"] = "fnv1a64";
    doc["artifacts"] = checksums_;
    write("manifest.json", doc.dump(2) + "\n");
  }

 private:
  std::string dir_;
  std::map<std::string, std::string> checksums_;
};

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json interval_json(const Interval& ci) { return json::array({number_or_null(ci.first), number_or_null(ci.second)}); }

std::vector<int> resolve_players(const std::vector<std::string>& requested, const std::vector<std::string>& labels) {
  std::vector<int> out;
  if (requested.empty()) {
    for (int a = 0; a < static_cast<int>(labels.size()); ++a) out.push_back(a);
    return out;
  }
  for (const auto& name : requested) {
    const auto it = std::find(labels.begin(), labels.end(), name);
    if (it == labels.end()) fail(ErrorKind::Config, "player '" + name + "' is not in the analysis dataset");
    out.push_back(static_cast<int>(it - labels.begin()));
  }
  return out;
}

SchemaConfig load_schema_from(const std::string& path) {
  if (path.empty()) fail(ErrorKind::Config, "no schema given");
  try {
    return load_schema(path);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) throw;
    fail(e.kind(), "schema '" + path + "': " + e.what());
  }
}

IngestResult ingest_from(const RunConfig& config) {
  if (config.data.empty()) fail(ErrorKind::Config, "no data file given");
  const SchemaConfig schema = load_schema_from(config.schema);
  return load_csv(config.data, schema);
}

FoldAssignment folds_for(const Dataset& data, const RunConfig& config) {
  const int j = config.folds.value_or(default_fold_count(data.size()));
  return make_folds(data.players(), data.player_count(), j, mix_seed(config.seed, 1));
}

std::string matrix_csv(const Eigen::MatrixXd& values, const std::vector<std::string>& labels) {
  std::string out;
  for (std::size_t c = 0; c < labels.size(); ++c) out += (c ? "," : "") + labels[c];
  out += "\n";
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) out += (c ? "," : "") + format_double(values(r, c));
    out += "\n";
  }
  return out;
}

json estimate_json(const EstimateResult& r, const std::vector<std::string>& labels) {
  return {{"player", labels[static_cast<std::size_t>(r.spec.focal_player)]},
          {"estimand", std::string(to_string(r.spec.kind))},
          {"estimator", std::string(to_string(r.estimator))},
          {"psi", number_or_null(r.psi)},
          {"se", number_or_null(r.se)},
          {"ci", interval_json(r.ci)},
          {"level", r.level},
          {"eif_mean", r.eif.size() > 0 ? number_or_null(r.eif_mean()) : json(nullptr)},
          {"epsilons", r.epsilons},
          {"flags", flag_names(r.flags)}};
}

json positivity_json(const PositivityReport& p) {
  return {{"count", p.count},   {"mean", p.mean},     {"min", p.min},
          {"q1", p.q1},         {"median", p.median}, {"q3", p.q3},
          {"max", p.max},       {"fraction_below_1e-3", p.fraction_below_1e3},
          {"fraction_below_1e-2", p.fraction_below_1e2}};
}

template <typename Body>
int guarded(const std::string& out_dir, Body&& body) {
  try {
    return body();
  } catch (const Error& e) {
    return report_error(out_dir, e.kind(), e.what());
  } catch (const std::exception& e) {
    return report_error(out_dir, ErrorKind::InvalidArgument, e.what());
  }
}

}  // namespace

int report_error(const std::string& out_dir, ErrorKind kind, const std::string& message) {
  const int code = exit_code_for(kind);
  const json doc{{"error", std::string(to_string(kind))}, {"message", message}, {"exit_code", code}};
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream out(fs::path(out_dir) / "error.json", std::ios::binary | std::ios::trunc);
  if (out) out << doc.dump(2) << "\n";
  return code;
}

int cmd_estimate(const RunConfig& config) {
  return guarded(config.out, [&] {
    const IngestResult ingest = ingest_from(config);
    const Dataset& data = ingest.data;
    const auto& labels = data.player_labels();
    const std::vector<int> players = resolve_players(config.players, labels);
    const FoldAssignment folds = folds_for(data, config);

    NuisanceLearners learners;
    learners.outcome = config.outcome_library;
    learners.marginal_outcome = config.marginal_library;
    learners.propensity = config.propensity_library;
    learners.stack_folds = config.stack_folds;
    learners.seed = mix_seed(config.seed, 2);
    learners.keep_fold_predictions = !config.epsilon_pool;
    const NuisanceMatrices nu = fit_nuisances(data, folds, learners, ingest.x_condition);

    const EstimatorOptions options{config.epsilon_pool, config.level};
    const auto wants = [&](EstimandKind k) {
      return std::find(config.estimands.begin(), config.estimands.end(), k) != config.estimands.end();
    };

    json estimates = json::array();
    json errors = json::array();
    std::map<int, EstimateResult> direct_by_player;
    int direct_rank = -1;
    for (EstimandKind kind : config.estimands) {
      for (int a : players) {
        EstimandSpec spec{kind, a, ingest.x_condition, std::nullopt};
        for (EstimatorKind est : config.estimators) {
          try {
            EstimateResult r = estimate(est, data, spec, nu, folds, options);
            estimates.push_back(estimate_json(r, labels));
            if (kind == EstimandKind::Direct) {
              const int rank = est == EstimatorKind::Tmle ? 2 : est == EstimatorKind::OneStep ? 1 : 0;
              if (rank >= direct_rank) {
                if (rank > direct_rank) direct_by_player.clear();
                direct_rank = rank;
                direct_by_player[a] = r;
              }
            }
          } catch (const Error& e) {
            errors.push_back({{"player", labels[static_cast<std::size_t>(a)]},
                              {"estimand", std::string(to_string(kind))},
                              {"estimator", std::string(to_string(est))},
                              {"error", std::string(to_string(e.kind()))},
                              {"message", e.what()}});
          }
        }
      }
    }

    json contrasts = json::array();
    std::map<EstimandKind, std::vector<FunnelInput>> funnel_inputs;
    std::map<EstimandKind, std::vector<std::string>> funnel_skipped;
    for (EstimandKind kind : {EstimandKind::Indirect, EstimandKind::RandomReplacement}) {
      if (!wants(kind)) continue;
      for (int a : players) {
        const std::string& label = labels[static_cast<std::size_t>(a)];
        try {
          const ContrastResult c = estimate_contrast(data, EstimandSpec{kind, a, ingest.x_condition, std::nullopt}, nu, folds, options);
          contrasts.push_back({{"player", label},
                               {"estimand", std::string(to_string(kind))},
                               {"delta", number_or_null(c.delta)},
                               {"se", number_or_null(c.se)},
                               {"ci", interval_json(c.ci)},
                               {"empirical_rate", c.empirical_rate},
                               {"psi", number_or_null(c.parameter.psi)},
                               {"conditioning_size", c.conditioning_size},
                               {"flags", flag_names(c.flags)}});
          if (std::isfinite(c.se) && c.se > 0) funnel_inputs[kind].push_back({label, c.delta, c.se});
          else funnel_skipped[kind].push_back(label);
        } catch (const Error& e) {
          errors.push_back({{"player", label},
                            {"estimand", std::string(to_string(kind))},
                            {"estimator", "contrast"},
                            {"error", std::string(to_string(e.kind()))},
                            {"message", e.what()}});
        }
      }
    }

    ArtifactWriter out(config.out);

    json results;
    results["dataset"] = {{"records", data.size()},
                          {"players", labels},
                          {"covariates", data.covariate_names()},
                          {"folds", folds.fold_count},
                          {"conditioned_records", static_cast<Index>(ingest.x_condition.indicator(data).sum())}};
    results["config"] = json::parse(run_config_to_json(config, false));
    results["estimates"] = estimates;
    results["contrasts"] = contrasts;
    results["errors"] = errors;
    out.write("results.json", results.dump(2) + "\n");

    if (!direct_by_player.empty()) {
      std::vector<LeaderboardRow> rows;
      for (const auto& [a, r] : direct_by_player) {
        rows.push_back({labels[static_cast<std::size_t>(a)], EstimandKind::Direct, r.estimator, r.psi, r.se,
                        r.ci.first, r.ci.second, empirical_success_rate(data, a, ingest.x_condition)});
      }
      out.write("leaderboard.csv", leaderboard_csv(sort_leaderboard(std::move(rows))));
    }

    for (const auto& [kind, inputs] : funnel_inputs) {
      if (inputs.empty()) continue;
      const std::string stem = kind == EstimandKind::Indirect ? "funnel_indirect" : "funnel_rand";
      const FunnelGeometry geometry = funnel_geometry(inputs, config.funnel_levels);
      out.write(stem + ".csv", funnel_csv(geometry));
      out.write(stem + ".svg", funnel_svg(geometry, kind == EstimandKind::Indirect ? "Indirect contrast" : "Above random replacement"));
    }

    json positivity = positivity_json(positivity_report(nu.pi));
    positivity["players_without_funnel_point"] = json::object();
    for (const auto& [kind, skipped] : funnel_skipped)
      positivity["players_without_funnel_point"][std::string(to_string(kind))] = skipped;
    out.write("positivity.json", positivity.dump(2) + "\n");
    out.write("propensities.csv", matrix_csv(nu.pi, labels));
    out.write("ingest_report.json", report_to_json(ingest.report));
    out.manifest("estimate", config);
    return errors.empty() ? 0 : 1;
  });
}

int cmd_simulate(const RunConfig& config) {
  return guarded(config.out, [&] {
    const DgpSpec dgp = resolve_fixture(config.fixture);
    ExperimentConfig ec;
    ec.scenario = config.scenario;
    ec.n = config.n;
    ec.replications = config.replications;
    ec.estimators = config.estimators;
    ec.estimands = config.estimands;
    ec.focal_players = config.players.empty()
                           ? std::vector<int>{0}
                           : resolve_players(config.players, simulated_player_labels(dgp.player_count));
    ec.seed = config.seed;
    ec.folds = config.folds.value_or(5);
    ec.stack_folds = config.stack_folds;
    ec.library = default_simulation_library();
    ec.options = EstimatorOptions{config.epsilon_pool, config.level};
    ec.threads = config.threads;
    const ExperimentReport report = run_experiment(dgp, ec);

    ArtifactWriter out(config.out);
    out.write("simulation_report.csv", experiment_csv(report));
    out.write("simulation_report.json", experiment_json(report));
    out.manifest("simulate", config);
    return 0;
  });
}

namespace {

Eigen::MatrixXd read_propensities(const std::string& path, std::vector<std::string>& labels) {
  const CsvTable table = parse_csv(read_file(path));
  if (table.header.empty() || table.rows.empty()) fail(ErrorKind::Config, "propensity file '" + path + "' is empty");
  labels = table.header;
  Eigen::MatrixXd pi(static_cast<Index>(table.rows.size()), static_cast<Index>(labels.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    if (table.rows[r].size() != labels.size())
      fail(ErrorKind::UnparseableValue, "propensity file '" + path + "' row " + std::to_string(r + 1) + " has the wrong width");
    for (std::size_t c = 0; c < labels.size(); ++c) {
      const std::string& cell = table.rows[r][c];
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v))
        fail(ErrorKind::UnparseableValue, "row " + std::to_string(r + 1) + ", column '" + labels[c] + "'");
      pi(static_cast<Index>(r), static_cast<Index>(c)) = v;
    }
  }
  return pi;
}

/// Out-of-fold propensities on the cross-fitting folds.
Eigen::MatrixXd crossfit_propensities(const Dataset& data, const RunConfig& config) {
  const FoldAssignment folds = folds_for(data, config);
  Eigen::MatrixXd pi(data.size(), data.player_count());
  for (int j = 0; j < folds.fold_count; ++j) {
    const auto& train = folds.training[static_cast<std::size_t>(j)];
    const auto& valid = folds.validation[static_cast<std::size_t>(j)];
    const Dataset tr = data.subset(train);
    const PropensityModel model = fit_propensity(tr.covariates(), tr.players(), data.player_count(), config.propensity_library,
                                                 config.stack_folds, mix_seed(mix_seed(config.seed, 2), static_cast<std::uint64_t>(j)));
    const Eigen::MatrixXd pred = model.predict(data.subset(valid).covariates());
    for (std::size_t i = 0; i < valid.size(); ++i) pi.row(valid[i]) = pred.row(static_cast<Index>(i));
  }
  return pi;
}

}  // namespace

int cmd_cluster(const RunConfig& config) {
  return guarded(config.out, [&] {
    std::vector<std::string> labels;
    Eigen::MatrixXd pi;
    if (!config.propensities.empty()) {
      pi = read_propensities(config.propensities, labels);
    } else if (!config.data.empty() && !config.schema.empty()) {
      const IngestResult ingest = ingest_from(config);
      labels = ingest.data.player_labels();
      pi = crossfit_propensities(ingest.data, config);
    } else {
      fail(ErrorKind::Config, "clustering needs a propensities file or data with a schema");
    }
    if (labels.size() < 2) fail(ErrorKind::Config, "clustering needs at least two players");
    const Eigen::MatrixXd distance = propensity_distance(normalize_propensities(pi));
    const Dendrogram tree = hierarchical_cluster(distance, labels, config.linkage);

    ArtifactWriter out(config.out);
    out.write("dendrogram.newick", to_newick(tree) + "\n");
    out.write("dendrogram.svg", dendrogram_svg(tree, "Propensity distance (" + std::string(to_string(config.linkage)) + " linkage)"));
    out.write("distances.csv", distance_csv(distance, labels));
    out.manifest("cluster", config);
    return 0;
  });
}

}  // namespace playereval
