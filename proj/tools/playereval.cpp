#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "playereval/cli.hpp"
#include "playereval/ingest.hpp"

using namespace playereval;

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct Flags {
  std::string config, data, schema, out, propensities, fixture, scenario, estimands, estimators, players, linkage;
  std::optional<std::uint64_t> seed;
  std::optional<int> folds, reps, threads;
  std::optional<double> level;
  std::optional<Index> n;
  std::optional<bool> epsilon_pool;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--folds", f.folds, "Cross-fitting folds");
  cmd->add_option("--level", f.level, "Confidence level");
  cmd->add_option("--estimands", f.estimands, "Comma list of direct,indirect,rand");
  cmd->add_option("--estimators", f.estimators, "Comma list of substitution,onestep,tmle");
  cmd->add_option("--players", f.players, "Comma list of player labels, or all");
}

RunConfig resolve(const Flags& f) {
  RunConfig c = f.config.empty() ? default_run_config() : load_run_config(f.config);
  if (!f.data.empty()) c.data = f.data;
  if (!f.schema.empty()) c.schema = f.schema;
  if (!f.out.empty()) c.out = f.out;
  if (!f.propensities.empty()) c.propensities = f.propensities;
  if (f.seed) c.seed = *f.seed;
  if (f.folds) c.folds = *f.folds;
  if (f.level) c.level = *f.level;
  if (f.reps) c.replications = *f.reps;
  if (f.threads) c.threads = *f.threads;
  if (f.n) c.n = *f.n;
  if (f.epsilon_pool) c.epsilon_pool = *f.epsilon_pool;
  if (!f.fixture.empty()) c.fixture = f.fixture;
  if (!f.scenario.empty()) c.scenario = parse_scenario(f.scenario);
  if (!f.linkage.empty()) c.linkage = parse_linkage(f.linkage);
  if (!f.estimands.empty()) {
    c.estimands.clear();
    for (const auto& e : split_list(f.estimands)) c.estimands.push_back(parse_estimand_kind(e));
  }
  if (!f.estimators.empty()) {
    c.estimators.clear();
    for (const auto& e : split_list(f.estimators)) c.estimators.push_back(parse_estimator_kind(e));
  }
  if (!f.players.empty()) c.players = f.players == "all" ? std::vector<std::string>{} : split_list(f.players);
  // Re-validate the merged result.
  return parse_run_config(run_config_to_json(c), c);
}

int write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return 0;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    std::cerr << "cannot write '" << path << "'\n";
    return 2;
  }
  out << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal player evaluation from attempt-level data"};
  app.require_subcommand(1);
  Flags f;

  auto* estimate = app.add_subcommand("estimate", "Estimate direct, indirect and random-replacement metrics");
  add_common(estimate, f);
  estimate->add_option("--data", f.data, "Attempt CSV");
  estimate->add_option("--schema", f.schema, "Schema JSON");
  estimate->add_option("--epsilon-pool", f.epsilon_pool, "Pool TMLE fluctuations across folds (true/false)");

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo study on a fixture");
  add_common(simulate, f);
  simulate->add_option("--fixture", f.fixture, "Built-in fixture name or fixture JSON");
  simulate->add_option("--scenario", f.scenario, "both_correct, mu_misspecified, pi_misspecified, both_misspecified");
  simulate->add_option("--reps", f.reps, "Replications");
  simulate->add_option("--n", f.n, "Records per replication");
  simulate->add_option("--threads", f.threads, "Worker threads");
  simulate->add_option("--epsilon-pool", f.epsilon_pool, "Pool TMLE fluctuations across folds (true/false)");

  auto* cluster = app.add_subcommand("cluster", "Propensity-distance dendrogram");
  add_common(cluster, f);
  cluster->add_option("--data", f.data, "Attempt CSV");
  cluster->add_option("--schema", f.schema, "Schema JSON");
  cluster->add_option("--propensities", f.propensities, "propensities.csv from an estimate run");
  cluster->add_option("--linkage", f.linkage, "complete, average or single");

  std::string fixture_name, fixture_out;
  auto* dump = app.add_subcommand("dump-fixture", "Print a built-in fixture as JSON");
  dump->add_option("name", fixture_name, "Fixture name")->required();
  dump->add_option("-o,--output", fixture_out, "Output file");

  std::uint64_t synth_seed = 20240601;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth-kickers", "Write the synthetic kicker CSV");
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("-o,--output", synth_out, "Output file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (dump->parsed()) return write_text(fixture_out, dgp_to_json(builtin_fixture(fixture_name)));
    if (synth->parsed()) return write_text(synth_out, synthesize_kicker_csv(synth_seed));
  } catch (const Error& e) {
    std::cerr << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code_for(e.kind());
  }

  RunConfig config;
  try {
    config = resolve(f);
  } catch (const Error& e) {
    const std::string out = f.out.empty() ? "out" : f.out;
    const ErrorKind kind = e.kind() == ErrorKind::Io ? ErrorKind::Io : ErrorKind::Config;
    std::cerr << to_string(kind) << ": " << e.what() << "\n";
    return report_error(out, kind, e.what());
  }

  int code = 0;
  if (estimate->parsed()) code = cmd_estimate(config);
  else if (simulate->parsed()) code = cmd_simulate(config);
  else code = cmd_cluster(config);
  if (code != 0) std::cerr << "failed; see " << config.out << "/error.json or results.json\n";
  return code;
}
