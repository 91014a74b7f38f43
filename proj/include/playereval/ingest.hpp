#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "playereval/core.hpp"

namespace playereval {

struct MissingPolicy {
  enum class Kind { CompleteCase, ConstantFill };
  Kind kind = Kind::CompleteCase;
  double fill = 0.0;
};

enum class CovariateType { Numeric, Binary, Categorical };

struct CovariateSpec {
  std::string name;
  CovariateType type = CovariateType::Numeric;
  MissingPolicy missing;
};

/// Per-player threshold on the player's largest value of an auxiliary column.
struct AuxiliaryRule {
  std::string column;
  std::optional<double> at_least;
  std::optional<double> greater_than;
};

struct EligibilityRule {
  int min_attempts = 1;
  /// true: every auxiliary rule must hold; false: any one suffices.
  bool require_all = false;
  std::vector<AuxiliaryRule> auxiliary;
};

/// Covariate restriction by source column name. `equals` on a categorical
/// selects one level.
struct ConditionSpec {
  std::string column;
  std::optional<double> min;
  bool min_inclusive = true;
  std::optional<double> max;
  bool max_inclusive = true;
  std::optional<std::string> equals;
};

struct SchemaConfig {
  std::string outcome;
  std::string player;
  std::vector<CovariateSpec> covariates;
  EligibilityRule eligibility;
  std::vector<ConditionSpec> x_condition;
};

/// Throws Config on malformed documents.
SchemaConfig parse_schema(std::string_view json_text);
SchemaConfig load_schema(const std::string& path);
std::string schema_to_json(const SchemaConfig& schema);

struct IngestReport {
  Index raw_rows = 0;
  Index dropped_missing = 0;
  Index dropped_ineligible = 0;
  Index kept_rows = 0;
  Index filled_values = 0;
  std::vector<std::string> dropped_players;
  std::vector<std::string> encoded_columns;
};

std::string report_to_json(const IngestReport& report);

struct IngestResult {
  Dataset data;
  IngestReport report;
  XCondition x_condition;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// RFC 4180: quoted fields may contain commas, doubled quotes and line
/// breaks; CRLF and LF both end records. A trailing empty line is ignored.
CsvTable parse_csv(std::string_view text);

IngestResult ingest_csv(std::string_view text, const SchemaConfig& schema);
IngestResult load_csv(const std::string& path, const SchemaConfig& schema);

/// Columns player, outcome, then the encoded covariates, values printed in
/// shortest round-trip form.
std::string canonical_csv(const Dataset& data);
/// Schema that re-ingests canonical_csv(data) into `data`.
SchemaConfig canonical_schema(const Dataset& data);

std::string read_file(const std::string& path);

}  // namespace playereval
