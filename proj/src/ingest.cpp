#include "playereval/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "playereval/error.hpp"
#include "playereval/profiling.hpp"

namespace playereval {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

namespace {

std::string_view covariate_type_name(CovariateType t) {
  switch (t) {
    case CovariateType::Numeric: return "numeric";
    case CovariateType::Binary: return "binary";
    case CovariateType::Categorical: return "categorical";
  }
  return "numeric";
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("schema field '") + key + "': " + e.what());
  }
}

std::string require_string(const json& j, const char* key, const char* where) {
  if (!j.contains(key) || !j.at(key).is_string())
    fail(ErrorKind::Config, std::string(where) + " needs a string field '" + key + "'");
  return j.at(key).get<std::string>();
}

std::optional<double> optional_number(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_number()) fail(ErrorKind::Config, std::string("schema field '") + key + "' must be a number");
  return j.at(key).get<double>();
}

}  // namespace

SchemaConfig parse_schema(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("schema is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorKind::Config, "schema must be a JSON object");
  SchemaConfig s;
  s.outcome = require_string(doc, "outcome", "schema");
  s.player = require_string(doc, "player", "schema");
  std::set<std::string> seen{s.outcome, s.player};
  if (seen.size() != 2) fail(ErrorKind::Config, "outcome and player columns must differ");
  if (doc.contains("covariates")) {
    if (!doc["covariates"].is_array()) fail(ErrorKind::Config, "covariates must be an array");
    for (const auto& c : doc["covariates"]) {
      CovariateSpec spec;
      spec.name = require_string(c, "name", "covariate");
      if (!seen.insert(spec.name).second) fail(ErrorKind::Config, "column '" + spec.name + "' is declared twice");
      const std::string type = get_or<std::string>(c, "type", "numeric");
      if (type == "numeric") spec.type = CovariateType::Numeric;
      else if (type == "binary") spec.type = CovariateType::Binary;
      else if (type == "categorical") spec.type = CovariateType::Categorical;
      else fail(ErrorKind::Config, "covariate '" + spec.name + "' has unknown type '" + type + "'");
      if (c.contains("missing")) {
        const auto& m = c["missing"];
        if (m.is_string() && m.get<std::string>() == "complete_case") {
          spec.missing.kind = MissingPolicy::Kind::CompleteCase;
        } else if (m.is_object() && m.contains("constant_fill") && m["constant_fill"].is_number()) {
          if (spec.type == CovariateType::Categorical)
            fail(ErrorKind::Config, "constant_fill is not available for categorical '" + spec.name + "'");
          spec.missing.kind = MissingPolicy::Kind::ConstantFill;
          spec.missing.fill = m["constant_fill"].get<double>();
        } else {
          fail(ErrorKind::Config, "covariate '" + spec.name + "' has an invalid missing policy");
        }
      }
      s.covariates.push_back(std::move(spec));
    }
  }
  if (doc.contains("eligibility")) {
    const auto& e = doc["eligibility"];
    s.eligibility.min_attempts = get_or<int>(e, "min_attempts", 1);
    if (s.eligibility.min_attempts < 1) fail(ErrorKind::Config, "min_attempts must be at least 1");
    if (e.contains("auxiliary")) {
      const auto& aux = e["auxiliary"];
      const std::string mode = get_or<std::string>(aux, "mode", "any");
      if (mode != "any" && mode != "all") fail(ErrorKind::Config, "auxiliary mode must be 'any' or 'all'");
      s.eligibility.require_all = mode == "all";
      if (aux.contains("rules")) {
        for (const auto& r : aux["rules"]) {
          AuxiliaryRule rule;
          rule.column = require_string(r, "column", "auxiliary rule");
          rule.at_least = optional_number(r, "min");
          rule.greater_than = optional_number(r, "greater_than");
          if (!rule.at_least && !rule.greater_than)
            fail(ErrorKind::Config, "auxiliary rule on '" + rule.column + "' needs 'min' or 'greater_than'");
          s.eligibility.auxiliary.push_back(std::move(rule));
        }
      }
    }
  }
  if (doc.contains("x_condition")) {
    for (const auto& c : doc["x_condition"]) {
      ConditionSpec spec;
      spec.column = require_string(c, "column", "x_condition entry");
      spec.min = optional_number(c, "min");
      spec.max = optional_number(c, "max");
      spec.min_inclusive = get_or<bool>(c, "min_inclusive", true);
      spec.max_inclusive = get_or<bool>(c, "max_inclusive", true);
      if (c.contains("equals")) {
        const auto& v = c["equals"];
        if (v.is_string()) spec.equals = v.get<std::string>();
        else if (v.is_number()) spec.equals = format_double(v.get<double>());
        else fail(ErrorKind::Config, "x_condition 'equals' must be a string or number");
      }
      s.x_condition.push_back(std::move(spec));
    }
  }
  return s;
}

SchemaConfig load_schema(const std::string& path) { return parse_schema(read_file(path)); }

std::string schema_to_json(const SchemaConfig& s) {
  json doc;
  doc["outcome"] = s.outcome;
  doc["player"] = s.player;
  doc["covariates"] = json::array();
  for (const auto& c : s.covariates) {
    json e{{"name", c.name}, {"type", covariate_type_name(c.type)}};
    if (c.missing.kind == MissingPolicy::Kind::CompleteCase) e["missing"] = "complete_case";
    else e["missing"] = json{{"constant_fill", c.missing.fill}};
    doc["covariates"].push_back(e);
  }
  json elig{{"min_attempts", s.eligibility.min_attempts}};
  if (!s.eligibility.auxiliary.empty()) {
    json rules = json::array();
    for (const auto& r : s.eligibility.auxiliary) {
      json e{{"column", r.column}};
      if (r.at_least) e["min"] = *r.at_least;
      if (r.greater_than) e["greater_than"] = *r.greater_than;
      rules.push_back(e);
    }
    elig["auxiliary"] = json{{"mode", s.eligibility.require_all ? "all" : "any"}, {"rules", rules}};
  }
  doc["eligibility"] = elig;
  doc["x_condition"] = json::array();
  for (const auto& c : s.x_condition) {
    json e{{"column", c.column}};
    if (c.min) e["min"] = *c.min;
    if (c.max) e["max"] = *c.max;
    if (!c.min_inclusive) e["min_inclusive"] = false;
    if (!c.max_inclusive) e["max_inclusive"] = false;
    if (c.equals) e["equals"] = *c.equals;
    doc["x_condition"].push_back(e);
  }
  return doc.dump(2) + "\n";
}

std::string report_to_json(const IngestReport& r) {
  json doc{{"raw_rows", r.raw_rows},
           {"dropped_missing", r.dropped_missing},
           {"dropped_ineligible", r.dropped_ineligible},
           {"kept_rows", r.kept_rows},
           {"filled_values", r.filled_values},
           {"dropped_players", r.dropped_players},
           {"encoded_columns", r.encoded_columns}};
  return doc.dump(2) + "\n";
}

CsvTable parse_csv(std::string_view text) {
  if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF && static_cast<unsigned char>(text[1]) == 0xBB &&
      static_cast<unsigned char>(text[2]) == 0xBF)
    text.remove_prefix(3);
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t line = 1;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line;
        field += ch;
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (field_started && !field.empty())
          fail(ErrorKind::UnparseableValue, "stray quote inside an unquoted field on line " + std::to_string(line));
        quoted = true;
        field_started = true;
        break;
      case ',': end_field(); break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        end_record();
        ++line;
        break;
      case '\n':
        end_record();
        ++line;
        break;
      default:
        field += ch;
        field_started = true;
    }
  }
  if (quoted) fail(ErrorKind::UnparseableValue, "unterminated quoted field");
  if (field_started || !field.empty() || !record.empty()) end_record();
  if (records.empty()) fail(ErrorKind::EmptyData, "CSV has no header row");
  CsvTable table;
  table.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    auto& rec = records[r];
    if (rec.size() == 1 && rec.front().empty()) continue;
    if (rec.size() != table.header.size())
      fail(ErrorKind::UnparseableValue, "data row " + std::to_string(r) + " has " + std::to_string(rec.size()) +
                                            " fields, header has " + std::to_string(table.header.size()));
    table.rows.push_back(std::move(rec));
  }
  return table;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

bool is_missing(const std::string& v) {
  return v.empty() || v == "NA" || v == "NaN" || v == "nan" || v == "null" || v == "NULL";
}

[[noreturn]] void unparseable(std::size_t row, const std::string& column, const std::string& value) {
  fail(ErrorKind::UnparseableValue,
       "row " + std::to_string(row + 1) + ", column '" + column + "': cannot parse '" + value + "'");
}

double parse_number(const std::string& v, std::size_t row, const std::string& column) {
  double out = 0.0;
  const char* begin = v.data();
  const char* end = v.data() + v.size();
  if (begin != end && *begin == '+') ++begin;
  const auto res = std::from_chars(begin, end, out);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(out)) unparseable(row, column, v);
  return out;
}

double parse_binary(const std::string& v, std::size_t row, const std::string& column) {
  if (v == "1" || v == "true" || v == "TRUE" || v == "True") return 1.0;
  if (v == "0" || v == "false" || v == "FALSE" || v == "False") return 0.0;
  const double x = parse_number(v, row, column);
  if (x == 0.0 || x == 1.0) return x;
  unparseable(row, column, v);
}

}  // namespace

IngestResult ingest_csv(std::string_view text, const SchemaConfig& schema) {
  const CsvTable table = parse_csv(text);
  std::map<std::string, std::size_t> column;
  for (std::size_t k = 0; k < table.header.size(); ++k) column.emplace(trim(table.header[k]), k);
  auto index_of = [&](const std::string& name) {
    const auto it = column.find(name);
    if (it == column.end()) fail(ErrorKind::MissingColumn, "required column '" + name + "' is missing");
    return it->second;
  };
  const std::size_t outcome_col = index_of(schema.outcome);
  const std::size_t player_col = index_of(schema.player);
  std::vector<std::size_t> cov_col;
  for (const auto& c : schema.covariates) cov_col.push_back(index_of(c.name));
  std::vector<std::size_t> aux_col;
  for (const auto& r : schema.eligibility.auxiliary) aux_col.push_back(index_of(r.column));

  IngestReport report;
  report.raw_rows = static_cast<Index>(table.rows.size());

  // Stage 1: parse and apply missing-value policies.
  struct Row {
    std::string player;
    int outcome;
    std::vector<double> numeric;
    std::vector<std::string> level;
    std::vector<std::optional<double>> aux;
  };
  std::vector<Row> rows;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& fields = table.rows[r];
    Row row;
    const std::string player = trim(fields[player_col]);
    const std::string outcome = trim(fields[outcome_col]);
    bool drop = is_missing(player) || is_missing(outcome);
    Index fills = 0;
    if (!drop) {
      row.player = player;
      const bool word = outcome == "true" || outcome == "TRUE" || outcome == "True" || outcome == "false" ||
                        outcome == "FALSE" || outcome == "False";
      const double y = word ? parse_binary(outcome, r, schema.outcome) : parse_number(outcome, r, schema.outcome);
      if (y != 0.0 && y != 1.0)
        fail(ErrorKind::NonBinaryOutcome, "row " + std::to_string(r + 1) + ": outcome '" + outcome + "' is not 0/1");
      row.outcome = static_cast<int>(y);
    }
    for (std::size_t k = 0; k < schema.covariates.size() && !drop; ++k) {
      const auto& spec = schema.covariates[k];
      const std::string v = trim(fields[cov_col[k]]);
      if (is_missing(v)) {
        if (spec.missing.kind == MissingPolicy::Kind::CompleteCase) {
          drop = true;
          break;
        }
        row.numeric.push_back(spec.missing.fill);
        row.level.emplace_back();
        ++fills;
        continue;
      }
      switch (spec.type) {
        case CovariateType::Numeric: row.numeric.push_back(parse_number(v, r, spec.name)); break;
        case CovariateType::Binary: row.numeric.push_back(parse_binary(v, r, spec.name)); break;
        case CovariateType::Categorical: row.numeric.push_back(0.0); break;
      }
      row.level.push_back(spec.type == CovariateType::Categorical ? v : std::string());
    }
    if (drop) {
      ++report.dropped_missing;
      continue;
    }
    for (std::size_t k = 0; k < aux_col.size(); ++k) {
      const std::string v = trim(fields[aux_col[k]]);
      row.aux.push_back(is_missing(v) ? std::nullopt : std::optional<double>(parse_number(v, r, schema.eligibility.auxiliary[k].column)));
    }
    report.filled_values += fills;
    rows.push_back(std::move(row));
  }

  // Stage 2: eligibility.
  std::map<std::string, Index> attempts;
  std::map<std::string, std::vector<std::optional<double>>> aux_max;
  for (const auto& row : rows) {
    ++attempts[row.player];
    auto& mx = aux_max[row.player];
    mx.resize(row.aux.size());
    for (std::size_t k = 0; k < row.aux.size(); ++k)
      if (row.aux[k] && (!mx[k] || *row.aux[k] > *mx[k])) mx[k] = row.aux[k];
  }
  std::set<std::string> eligible;
  for (const auto& [player, count] : attempts) {
    bool ok = count >= schema.eligibility.min_attempts;
    if (ok && !schema.eligibility.auxiliary.empty()) {
      bool any = false, all = true;
      for (std::size_t k = 0; k < schema.eligibility.auxiliary.size(); ++k) {
        const auto& rule = schema.eligibility.auxiliary[k];
        const auto& v = aux_max[player][k];
        const bool pass = v && (!rule.at_least || *v >= *rule.at_least) && (!rule.greater_than || *v > *rule.greater_than);
        any = any || pass;
        all = all && pass;
      }
      ok = schema.eligibility.require_all ? all : any;
    }
    if (ok) eligible.insert(player);
    else report.dropped_players.push_back(player);
  }
  std::vector<Row> kept;
  for (auto& row : rows) {
    if (eligible.count(row.player)) kept.push_back(std::move(row));
    else ++report.dropped_ineligible;
  }
  report.kept_rows = static_cast<Index>(kept.size());
  if (kept.empty()) fail(ErrorKind::EmptyData, "no rows remain after filtering");
  if (eligible.size() < 2) fail(ErrorKind::EmptyData, "fewer than two eligible players remain");

  // Stage 3: encode. Categorical levels come from kept rows; the first is the reference.
  std::vector<std::vector<std::string>> levels(schema.covariates.size());
  std::vector<std::string> names;
  std::vector<std::pair<std::size_t, int>> layout;  // (covariate, level index or -1)
  for (std::size_t k = 0; k < schema.covariates.size(); ++k) {
    const auto& spec = schema.covariates[k];
    if (spec.type != CovariateType::Categorical) {
      names.push_back(spec.name);
      layout.emplace_back(k, -1);
      continue;
    }
    std::set<std::string> seen;
    for (const auto& row : kept) seen.insert(row.level[k]);
    levels[k].assign(seen.begin(), seen.end());
    for (std::size_t l = 1; l < levels[k].size(); ++l) {
      names.push_back(spec.name + "=" + levels[k][l]);
      layout.emplace_back(k, static_cast<int>(l));
    }
  }
  std::vector<std::string> labels(eligible.begin(), eligible.end());
  std::map<std::string, int> player_index;
  for (std::size_t a = 0; a < labels.size(); ++a) player_index[labels[a]] = static_cast<int>(a);

  const auto n = static_cast<Index>(kept.size());
  Eigen::MatrixXd x(n, static_cast<Index>(layout.size()));
  Eigen::VectorXi a(n), y(n);
  for (Index i = 0; i < n; ++i) {
    const Row& row = kept[static_cast<std::size_t>(i)];
    a[i] = player_index[row.player];
    y[i] = row.outcome;
    for (std::size_t c = 0; c < layout.size(); ++c) {
      const auto [k, l] = layout[c];
      x(i, static_cast<Index>(c)) = l < 0 ? row.numeric[k] : (row.level[k] == levels[k][static_cast<std::size_t>(l)] ? 1.0 : 0.0);
    }
  }
  report.encoded_columns = names;

  // x_condition by source column name.
  XCondition cond;
  for (const auto& c : schema.x_condition) {
    std::size_t k = schema.covariates.size();
    for (std::size_t j = 0; j < schema.covariates.size(); ++j)
      if (schema.covariates[j].name == c.column) k = j;
    if (k == schema.covariates.size()) fail(ErrorKind::Config, "x_condition refers to unknown covariate '" + c.column + "'");
    const auto& spec = schema.covariates[k];
    if (spec.type == CovariateType::Categorical) {
      if (!c.equals || c.min || c.max) fail(ErrorKind::Config, "categorical '" + c.column + "' only supports 'equals'");
      const auto& lv = levels[k];
      const auto pos = std::find(lv.begin(), lv.end(), *c.equals);
      if (pos == lv.end()) fail(ErrorKind::Config, "level '" + *c.equals + "' of '" + c.column + "' does not occur");
      for (std::size_t col = 0; col < layout.size(); ++col) {
        if (layout[col].first != k) continue;
        const bool selected = static_cast<std::size_t>(layout[col].second) == static_cast<std::size_t>(pos - lv.begin());
        cond.constraints.push_back(CovariateConstraint::equal_to(static_cast<Index>(col), selected ? 1.0 : 0.0));
      }
      continue;
    }
    Index col = 0;
    for (std::size_t j = 0; j < layout.size(); ++j)
      if (layout[j].first == k) col = static_cast<Index>(j);
    if (c.equals) {
      cond.constraints.push_back(CovariateConstraint::equal_to(col, parse_number(*c.equals, 0, c.column)));
      continue;
    }
    CovariateConstraint cc;
    cc.column = col;
    cc.lower = c.min;
    cc.lower_inclusive = c.min_inclusive;
    cc.upper = c.max;
    cc.upper_inclusive = c.max_inclusive;
    cond.constraints.push_back(cc);
  }

  return IngestResult{Dataset(std::move(x), std::move(a), std::move(y), std::move(labels), std::move(names)),
                      std::move(report), std::move(cond)};
}

IngestResult load_csv(const std::string& path, const SchemaConfig& schema) { return ingest_csv(read_file(path), schema); }

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos && (s.empty() || (s.front() != ' ' && s.back() != ' '))) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

}  // namespace

std::string canonical_csv(const Dataset& data) {
  std::string out = "player,outcome";
  for (const auto& name : data.covariate_names()) out += "," + csv_escape(name);
  out += "\n";
  for (Index i = 0; i < data.size(); ++i) {
    out += csv_escape(data.player_labels()[static_cast<std::size_t>(data.players()[i])]);
    out += data.outcomes()[i] ? ",1" : ",0";
    for (Index j = 0; j < data.dimension(); ++j) out += "," + format_double(data.covariates()(i, j));
    out += "\n";
  }
  return out;
}

SchemaConfig canonical_schema(const Dataset& data) {
  SchemaConfig s;
  s.outcome = "outcome";
  s.player = "player";
  for (const auto& name : data.covariate_names()) s.covariates.push_back({name, CovariateType::Numeric, {}});
  return s;
}

}  // namespace playereval
