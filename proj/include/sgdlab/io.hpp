#pragma once

// CSV and JSON persistence. Numbers are written with 17 significant digits,
// so a file read back reproduces the doubles exactly.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sgdlab/problem.hpp"
#include "sgdlab/spectral.hpp"
#include "sgdlab/simulate.hpp"

namespace sgdlab {

/// Row-oriented CSV output. Throws Error when the file cannot be opened or a
/// row has the wrong width.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> header);

  CsvWriter& row(const std::vector<double>& values);
  // Leading text cells followed by numbers.
  CsvWriter& row(const std::vector<std::string>& labels, const std::vector<double>& values);

  Index rows() const { return rows_; }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
  std::size_t width_;
  Index rows_ = 0;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;

  /// Column by name; throws ArgumentError listing the available names.
  const std::vector<double>& column(const std::string& name) const;
};

/// Reads a numeric CSV with a header line.
CsvTable read_csv(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);

/// X and Y as `y, x_1..x_d`, plus a JSON sidecar (`<path>.json`) with n, d
/// and whatever generation metadata the dataset carries.
void write_dataset(const std::filesystem::path& path, const RegressionDatasetd& data);

/// `index, value, residual, q_1..q_d` with one row per eigenpair.
void write_basis(const std::filesystem::path& path, const EigenBasisd& basis);

/// `step, t, loss, delta_sq, Delta_sq, a_1..a_k, b_1..b_k` for steps
/// 1..steps that are multiples of `stride`; t = eta * step. The projection
/// columns are omitted when the record carries none.
Index write_trajectory(const std::filesystem::path& path, const TrajectoryRecordd& rec, double eta, Index stride);

}  // namespace sgdlab
