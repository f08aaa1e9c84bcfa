#pragma once

#include "msar/model.hpp"
#include "msar/weights.hpp"

#include <json.hpp>

#include <string>

namespace msar::io {

using Json = nlohmann::ordered_json;

/// Matrix Market "coordinate real general" load/save for weights matrices.
SpatialWeights read_matrix_market(const std::string& path);
void write_matrix_market(const std::string& path, const SpatialWeights& w);

/// Dataset CSV: header row y1..yq,x1..xp, one line per unit.
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const std::string& path, const Dataset& data);

/// Square distance matrix CSV: header row, then n rows of n comma-separated
/// values with '.' decimals.
DistanceMatrix read_distance_csv(const std::string& path);

/// Single-column attribute CSV with a header row.
Vector read_attribute_csv(const std::string& path);
void write_attribute_csv(const std::string& path, const std::string& name, const Vector& v);

/// Generic numeric CSV with a header row (header contents ignored on read).
Matrix read_matrix_csv(const std::string& path);
void write_matrix_csv(const std::string& path, const std::vector<std::string>& header,
                      const Matrix& m);

/// Parameters as JSON with keys "D", "B", "Sigma_e" (arrays of rows).
MsarParams read_params_json(const std::string& path);
void write_params_json(const std::string& path, const MsarParams& params);

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

}  // namespace msar::io
