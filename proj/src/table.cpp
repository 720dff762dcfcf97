#include "riskseq/table.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "riskseq/common.hpp"

namespace riskseq {

std::size_t DataTable::n_rows() const {
  if (!numeric.empty()) return numeric.front().size();
  if (!categorical.empty()) return categorical.front().size();
  return 0;
}

void DataTable::validate() const {
  if (numeric_names.size() != numeric.size())
    throw SchemaError("table: numeric name/column count mismatch");
  if (categorical_names.size() != categorical.size())
    throw SchemaError("table: categorical name/column count mismatch");
  const std::size_t rows = n_rows();
  for (const auto& col : numeric)
    if (col.size() != rows) throw SchemaError("table: ragged numeric column");
  for (const auto& col : categorical)
    if (col.size() != rows) throw SchemaError("table: ragged categorical column");
  if (!labels.empty()) {
    if (labels.size() != rows) throw SchemaError("table: label count mismatch");
    for (int y : labels)
      if (y != 0 && y != 1) throw SchemaError("table: labels must be 0/1");
  }
}

void write_matrix_csv(const std::string& path, const std::vector<std::string>& names,
                      const std::vector<std::vector<double>>& columns) {
  if (names.size() != columns.size())
    throw SchemaError("matrix csv: name/column count mismatch");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (c) out << ',';
    out << names[c];
  }
  out << '\n';
  const std::size_t rows = columns.empty() ? 0 : columns.front().size();
  char buf[64];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (c) out << ',';
      double v = columns[c][r];
      if (!std::isnan(v)) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        out << buf;
      }
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace riskseq
