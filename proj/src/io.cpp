#include "sgdlab/io.hpp"

#include <sstream>

#include <nlohmann/json.hpp>

#include "sgdlab/config.hpp"

namespace sgdlab {

CsvWriter::CsvWriter(const std::filesystem::path& path, std::vector<std::string> header)
    : out_(path), path_(path), width_(header.size()) {
  if (!out_) throw Error("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

CsvWriter& CsvWriter::row(const std::vector<double>& values) { return row({}, values); }

CsvWriter& CsvWriter::row(const std::vector<std::string>& labels, const std::vector<double>& values) {
  if (labels.size() + values.size() != width_)
    throw Error("csv row for " + path_.string() + " has " + std::to_string(labels.size() + values.size()) +
                " cells, expected " + std::to_string(width_));
  bool first = true;
  for (const auto& s : labels) {
    out_ << (first ? "" : ",") << s;
    first = false;
  }
  for (double x : values) {
    out_ << (first ? "" : ",") << format_double(x);
    first = false;
  }
  out_ << '\n';
  if (!out_) throw Error("write failed for " + path_.string());
  ++rows_;
  return *this;
}

const std::vector<double>& CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return columns[i];
  std::string names;
  for (const auto& h : header) names += (names.empty() ? "" : ", ") + h;
  throw ArgumentError("no column '" + name + "' (have " + names + ")");
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw Error(path.string() + " is empty");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) table.header.push_back(cell);
  }
  table.columns.resize(table.header.size());
  Index number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t i = 0;
    while (std::getline(ss, cell, ',')) {
      if (i >= table.header.size()) throw Error(path.string() + ":" + std::to_string(number) + ": too many cells");
      try {
        std::size_t used = 0;
        const double x = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        table.columns[i].push_back(x);
      } catch (const std::exception&) {
        throw Error(path.string() + ":" + std::to_string(number) + ": '" + cell + "' is not a number");
      }
      ++i;
    }
    if (i != table.header.size()) throw Error(path.string() + ":" + std::to_string(number) + ": too few cells");
  }
  return table;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

void write_dataset(const std::filesystem::path& path, const RegressionDatasetd& data) {
  std::vector<std::string> header{"y"};
  for (Index j = 0; j < data.d(); ++j) header.push_back("x_" + std::to_string(j + 1));
  CsvWriter csv(path, header);
  std::vector<double> row(static_cast<std::size_t>(data.d() + 1));
  for (Index i = 0; i < data.n(); ++i) {
    row[0] = data.Y(i);
    for (Index j = 0; j < data.d(); ++j) row[static_cast<std::size_t>(j + 1)] = data.X(i, j);
    csv.row(row);
  }
  nlohmann::ordered_json side;
  side["n"] = data.n();
  side["d"] = data.d();
  if (data.sigma_gen) side["sigma_gen"] = *data.sigma_gen;
  if (data.seed) side["seed"] = *data.seed;
  if (data.theta_bar) side["theta_bar"] = std::vector<double>(data.theta_bar->data(), data.theta_bar->data() + data.d());
  write_text(path.string() + ".json", side.dump(2) + "\n");
}

void write_basis(const std::filesystem::path& path, const EigenBasisd& basis) {
  std::vector<std::string> header{"index", "value", "residual"};
  for (Index i = 0; i < basis.d(); ++i) header.push_back("q_" + std::to_string(i + 1));
  CsvWriter csv(path, header);
  for (Index l = 0; l < basis.k(); ++l) {
    std::vector<double> row{double(l + 1), basis.values(l), basis.residuals.size() > l ? basis.residuals(l) : 0.0};
    for (Index i = 0; i < basis.d(); ++i) row.push_back(basis.vectors(i, l));
    csv.row(row);
  }
}

Index write_trajectory(const std::filesystem::path& path, const TrajectoryRecordd& rec, double eta, Index stride) {
  const Index k = rec.proj_a.rows();
  std::vector<std::string> header{"step", "t", "loss", "delta_sq", "Delta_sq"};
  for (Index l = 0; l < k; ++l) header.push_back("a_" + std::to_string(l + 1));
  for (Index l = 0; l < k; ++l) header.push_back("b_" + std::to_string(l + 1));
  CsvWriter csv(path, header);
  std::vector<double> row(header.size());
  for (Index s = stride; s <= rec.steps(); s += stride) {
    row[0] = double(s);
    row[1] = eta * double(s);
    row[2] = rec.loss(s);
    row[3] = rec.delta_sq(s);
    row[4] = rec.Delta_sq(s);
    for (Index l = 0; l < k; ++l) {
      row[static_cast<std::size_t>(5 + l)] = rec.proj_a(l, s);
      row[static_cast<std::size_t>(5 + k + l)] = rec.proj_b(l, s);
    }
    csv.row(row);
  }
  return csv.rows();
}

}  // namespace sgdlab
