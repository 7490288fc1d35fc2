#include "proxie/dataset.hpp"

#include "proxie/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace proxie {

namespace {

void append(std::vector<std::string>& out, const std::vector<std::string>& in) {
  out.insert(out.end(), in.begin(), in.end());
}

std::vector<std::string> numbered(const char* prefix, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 1; i <= count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

std::string os_message() { return std::strerror(errno); }

}  // namespace

std::vector<std::string> ColumnRoles::observed_columns() const {
  std::vector<std::string> out{outcome, treatment};
  append(out, covariates);
  append(out, treatment_proxies);
  append(out, outcome_proxies);
  return out;
}

std::vector<std::string> ColumnRoles::all_columns() const {
  auto out = observed_columns();
  append(out, hidden);
  return out;
}

void ColumnRoles::validate() const {
  if (outcome.empty()) throw SchemaError("roles: outcome column not set");
  if (treatment.empty()) throw SchemaError("roles: treatment column not set");
  if (treatment_proxies.empty())
    throw SchemaError("roles: at least one treatment proxy (Z) is required");
  if (outcome_proxies.empty())
    throw SchemaError("roles: at least one outcome proxy (W) is required");
  std::set<std::string> seen;
  for (const auto& c : all_columns()) {
    if (c.empty()) throw SchemaError("roles: empty column name");
    if (!seen.insert(c).second)
      throw SchemaError("roles: column '" + c + "' assigned to more than one role");
  }
}

ColumnRoles ColumnRoles::standard(std::size_t p, std::size_t q, std::size_t r,
                                  std::size_t u) {
  ColumnRoles roles;
  roles.outcome = "Y";
  roles.treatment = "A";
  roles.covariates = numbered("X", p);
  roles.treatment_proxies = numbered("Z", q);
  roles.outcome_proxies = numbered("W", r);
  roles.hidden = numbered("U", u);
  return roles;
}

Dataset::Dataset(std::vector<std::string> names, MatrixXd values,
                 ColumnRoles roles)
    : names_(std::move(names)), values_(std::move(values)), roles_(std::move(roles)) {
  if (static_cast<Index>(names_.size()) != values_.cols())
    throw SchemaError("dataset: " + std::to_string(names_.size()) +
                      " names for " + std::to_string(values_.cols()) + " columns");
  if (values_.rows() < 1) throw ValidationError("dataset: no rows");
  roles_.validate();
  for (const auto& c : roles_.all_columns())
    if (!has_column(c)) throw SchemaError("missing column: " + c);
  for (Index j = 0; j < values_.cols(); ++j)
    for (Index i = 0; i < values_.rows(); ++i)
      if (!std::isfinite(values_(i, j)))
        throw ValidationError("non-finite value in column '" + names_[j] +
                              "' at row " + std::to_string(i + 1));
  const auto a = column(roles_.treatment);
  for (Index i = 0; i < a.size(); ++i)
    if (a[i] != 0.0 && a[i] != 1.0)
      throw ValidationError("treatment column '" + roles_.treatment +
                            "' is not binary at row " + std::to_string(i + 1));
}

bool Dataset::has_column(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

Index Dataset::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw SchemaError("missing column: " + name);
  return static_cast<Index>(it - names_.begin());
}

Eigen::Ref<const VectorXd> Dataset::column(const std::string& name) const {
  return values_.col(index_of(name));
}

MatrixXd Dataset::columns(const std::vector<std::string>& cols) const {
  MatrixXd out(n(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    out.col(static_cast<Index>(j)) = column(cols[j]);
  return out;
}

Dataset Dataset::take_rows(std::span<const Index> rows) const {
  MatrixXd out(static_cast<Index>(rows.size()), values_.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Index>(i)) = values_.row(rows[i]);
  return Dataset(names_, std::move(out), roles_);
}

Dataset Dataset::without_hidden() const {
  ColumnRoles roles = roles_;
  roles.hidden.clear();
  std::vector<std::string> keep;
  for (const auto& name : names_)
    if (std::find(roles_.hidden.begin(), roles_.hidden.end(), name) == roles_.hidden.end())
      keep.push_back(name);
  return Dataset(keep, columns(keep), std::move(roles));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& raw, const std::string& column, std::size_t row) {
  const std::string cell = trim(raw);
  double v = 0.0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ParseError("row " + std::to_string(row) + ", column '" + column +
                         "': cannot parse '" + cell + "' as a finite number",
                     row);
  return v;
}

}  // namespace

Dataset read_csv(const std::filesystem::path& path, const ColumnRoles& roles) {
  roles.validate();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + ": " + os_message());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  const auto wanted = roles.all_columns();
  std::vector<std::size_t> source;
  for (const auto& c : wanted) {
    auto it = std::find(header.begin(), header.end(), c);
    if (it == header.end()) throw SchemaError("missing column: " + c);
    source.push_back(static_cast<std::size_t>(it - header.begin()));
  }

  std::vector<std::vector<double>> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty() || line == "\r") continue;
    ++row;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw ParseError("row " + std::to_string(row) + ": expected " +
                           std::to_string(header.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       row);
    std::vector<double> values(wanted.size());
    for (std::size_t j = 0; j < wanted.size(); ++j)
      values[j] = parse_cell(fields[source[j]], wanted[j], row);
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ValidationError(path.string() + ": no data rows");

  MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(wanted.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < wanted.size(); ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return Dataset(wanted, std::move(m), roles);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

namespace {

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

void write_csv(const Dataset& data, const std::filesystem::path& path,
               bool include_hidden) {
  const auto& hidden = data.roles().hidden;
  std::vector<Index> cols;
  for (Index j = 0; j < data.num_columns(); ++j) {
    const auto& name = data.names()[static_cast<std::size_t>(j)];
    const bool is_hidden = std::find(hidden.begin(), hidden.end(), name) != hidden.end();
    if (include_hidden || !is_hidden) cols.push_back(j);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing: " + os_message());
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (k) out << ',';
    out << quote_if_needed(data.names()[static_cast<std::size_t>(cols[k])]);
  }
  out << '\n';
  const auto& v = data.values();
  for (Index i = 0; i < data.n(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (k) out << ',';
      out << format_double(v(i, cols[k]));
    }
    out << '\n';
  }
  out.flush();
  if (!out) throw IoError("write failed for " + path.string() + ": " + os_message());
}

}  // namespace proxie
