#include "msar/io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace msar::io {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("malformed number in " + what + ": '" + s + "'");
  }
}

Matrix read_csv_matrix(const std::string& path, std::vector<std::string>* header) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto names = split_csv_line(line);
  if (header) *header = names;

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != names.size())
      throw std::runtime_error("ragged CSV row in " + path);
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_double(f, path));
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < names.size(); ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return m;
}

void write_value(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

}  // namespace

SpatialWeights read_matrix_market(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty Matrix Market file: " + path);
  std::stringstream banner(line);
  std::string tag, object, format, field, symmetry;
  banner >> tag >> object >> format >> field >> symmetry;
  if (tag != "%%MatrixMarket" || lower(object) != "matrix" ||
      lower(format) != "coordinate" ||
      (lower(field) != "real" && lower(field) != "integer") ||
      lower(symmetry) != "general")
    throw std::runtime_error("unsupported Matrix Market header in " + path);

  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '%') break;
  }
  std::stringstream dims(line);
  Index rows = 0, cols = 0;
  long long nnz = 0;
  if (!(dims >> rows >> cols >> nnz) || rows != cols)
    throw std::runtime_error("bad Matrix Market size line in " + path);

  std::vector<WeightTriplet> entries;
  entries.reserve(static_cast<std::size_t>(nnz));
  for (long long e = 0; e < nnz; ++e) {
    Index i = 0, j = 0;
    double v = 0.0;
    if (!(in >> i >> j >> v))
      throw std::runtime_error("truncated Matrix Market data in " + path);
    entries.push_back({i - 1, j - 1, v});
  }
  return SpatialWeights::from_triplets(rows, std::move(entries));
}

void write_matrix_market(const std::string& path, const SpatialWeights& w) {
  auto out = open_out(path);
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << w.size() << " " << w.size() << " " << w.nnz() << "\n";
  for (const auto& t : w.entries()) {
    out << (t.row + 1) << " " << (t.col + 1) << " ";
    write_value(out, t.value);
    out << "\n";
  }
}

Dataset read_dataset_csv(const std::string& path) {
  std::vector<std::string> header;
  const Matrix m = read_csv_matrix(path, &header);
  Index q = 0;
  while (q < static_cast<Index>(header.size()) && header[q].starts_with("y")) ++q;
  const Index p = static_cast<Index>(header.size()) - q;
  if (q == 0 || p == 0)
    throw std::runtime_error("dataset CSV needs y* columns then x* columns: " + path);
  for (Index c = q; c < static_cast<Index>(header.size()); ++c)
    if (!header[c].starts_with("x"))
      throw std::runtime_error("dataset CSV needs y* columns then x* columns: " + path);
  return Dataset{m.leftCols(q), m.rightCols(p)};
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  auto out = open_out(path);
  for (Index j = 0; j < data.q(); ++j) out << "y" << (j + 1) << ",";
  for (Index j = 0; j < data.p(); ++j) out << "x" << (j + 1) << (j + 1 < data.p() ? "," : "");
  out << "\n";
  for (Index i = 0; i < data.n(); ++i) {
    for (Index j = 0; j < data.q(); ++j) {
      write_value(out, data.Y(i, j));
      out << ",";
    }
    for (Index j = 0; j < data.p(); ++j) {
      write_value(out, data.X(i, j));
      if (j + 1 < data.p()) out << ",";
    }
    out << "\n";
  }
}

DistanceMatrix read_distance_csv(const std::string& path) {
  DistanceMatrix d;
  d.dis = read_csv_matrix(path, nullptr);
  d.validate();
  return d;
}

Vector read_attribute_csv(const std::string& path) {
  std::vector<std::string> header;
  const Matrix m = read_csv_matrix(path, &header);
  if (m.cols() != 1) throw std::runtime_error("attribute CSV must have one column: " + path);
  return m.col(0);
}

void write_attribute_csv(const std::string& path, const std::string& name, const Vector& v) {
  auto out = open_out(path);
  out << name << "\n";
  for (Index i = 0; i < v.size(); ++i) {
    write_value(out, v(i));
    out << "\n";
  }
}

Matrix read_matrix_csv(const std::string& path) { return read_csv_matrix(path, nullptr); }

void write_matrix_csv(const std::string& path, const std::vector<std::string>& header,
                      const Matrix& m) {
  if (static_cast<Index>(header.size()) != m.cols())
    throw std::invalid_argument("write_matrix_csv: header size mismatch");
  auto out = open_out(path);
  for (std::size_t j = 0; j < header.size(); ++j)
    out << header[j] << (j + 1 < header.size() ? "," : "");
  out << "\n";
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      write_value(out, m(i, j));
      if (j + 1 < m.cols()) out << ",";
    }
    out << "\n";
  }
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw std::runtime_error("matrix JSON must be an array of rows");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = static_cast<Index>(j.front().size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (static_cast<Index>(j[i].size()) != cols)
      throw std::runtime_error("ragged matrix JSON");
    for (Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

Json read_json_file(const std::string& path) {
  auto in = open_in(path);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

void write_json_file(const std::string& path, const Json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

MsarParams read_params_json(const std::string& path) {
  const Json j = read_json_file(path);
  MsarParams params;
  params.D = matrix_from_json(j.at("D"));
  params.B = matrix_from_json(j.at("B"));
  params.Sigma_e = matrix_from_json(j.at("Sigma_e"));
  params.validate();
  return params;
}

void write_params_json(const std::string& path, const MsarParams& params) {
  Json j;
  j["D"] = matrix_to_json(params.D);
  j["B"] = matrix_to_json(params.B);
  j["Sigma_e"] = matrix_to_json(params.Sigma_e);
  write_json_file(path, j);
}

}  // namespace msar::io
