#pragma once

// Column-major tabular container shared by the preprocessing pipeline and the
// tree model. NaN marks a missing numeric cell; categoricals are level ids.

#include <cstdint>
#include <string>
#include <vector>

namespace riskseq {

struct DataTable {
  std::vector<std::string> numeric_names;
  std::vector<std::vector<double>> numeric;  // [column][row]
  std::vector<std::string> categorical_names;
  std::vector<std::vector<int>> categorical;  // [column][row]
  std::vector<int> labels;                    // empty when unlabeled, else one per row

  std::size_t n_rows() const;
  void validate() const;  // throws SchemaError on ragged columns or bad labels
};

// Plain CSV with a header row; NaN cells written as empty fields.
void write_matrix_csv(const std::string& path, const std::vector<std::string>& names,
                      const std::vector<std::vector<double>>& columns);

}  // namespace riskseq
