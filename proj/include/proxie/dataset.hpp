#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace proxie {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Column-role schema. Column order within a role is significant: it defines
// the ordering of bridge basis terms built from that role.
struct ColumnRoles {
  std::string outcome;                         // Y
  std::string treatment;                       // A, binary 0/1
  std::vector<std::string> covariates;         // X, p >= 0
  std::vector<std::string> treatment_proxies;  // Z, q >= 1
  std::vector<std::string> outcome_proxies;    // W, r >= 1
  std::vector<std::string> hidden;             // U, simulation only

  // Every named column, hidden last.
  std::vector<std::string> all_columns() const;
  std::vector<std::string> observed_columns() const;

  // Throws SchemaError when lists overlap or a required role is empty.
  void validate() const;

  // Roles used by every built-in simulator: Y, A, X1.., Z1.., W1.., U1..
  static ColumnRoles standard(std::size_t p, std::size_t q, std::size_t r,
                              std::size_t u);

  bool operator==(const ColumnRoles&) const = default;
};

// Immutable observed-data table. Columns are stored in an n x k column-major
// matrix in the order of `names()`.
class Dataset {
 public:
  // Validates the roles against the columns: every role column must exist,
  // values must be finite and the treatment column binary.
  Dataset(std::vector<std::string> names, MatrixXd values, ColumnRoles roles);

  Index n() const { return values_.rows(); }
  Index num_columns() const { return values_.cols(); }
  const std::vector<std::string>& names() const { return names_; }
  const ColumnRoles& roles() const { return roles_; }
  const MatrixXd& values() const { return values_; }

  bool has_column(const std::string& name) const;
  Index index_of(const std::string& name) const;  // throws SchemaError
  Eigen::Ref<const VectorXd> column(const std::string& name) const;

  Eigen::Ref<const VectorXd> y() const { return column(roles_.outcome); }
  Eigen::Ref<const VectorXd> a() const { return column(roles_.treatment); }

  // n x |cols| matrix of the named columns, in order.
  MatrixXd columns(const std::vector<std::string>& cols) const;

  // Row subset / resample; indices may repeat.
  Dataset take_rows(std::span<const Index> rows) const;

  // Drops the hidden (U) columns and clears roles.hidden.
  Dataset without_hidden() const;

 private:
  std::vector<std::string> names_;
  MatrixXd values_;
  ColumnRoles roles_;
};

// Reads a header-first CSV. Only the role columns are retained; extra
// columns in the file are ignored.
Dataset read_csv(const std::filesystem::path& path, const ColumnRoles& roles);

// Writes every column (hidden ones only when include_hidden) with 17
// significant digits so that read_csv reproduces the values exactly.
void write_csv(const Dataset& data, const std::filesystem::path& path,
               bool include_hidden);

// Shortest text that parses back to exactly `v`, at most 17 significant
// digits.
std::string format_double(double v);

// RFC-4180 field splitting for a single line (no embedded newlines).
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace proxie
