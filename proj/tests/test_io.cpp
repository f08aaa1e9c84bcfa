#include "msar/io.hpp"

#include "support/test_helpers.hpp"

#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace msar;

namespace {

struct TempDir {
  TempDir() {
    const auto tick =
        std::chrono::steady_clock::now().time_since_epoch().count();
    path = std::filesystem::temp_directory_path() /
           ("msar_io_test_" + std::to_string(tick));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  std::filesystem::path path;
};

}  // namespace

TEST_CASE("matrix market round trip") {
  TempDir tmp;
  const auto w = row_normalize(lattice_weights({3, 4, LatticeScheme::queen}));
  const auto path = tmp.file("w.mtx");
  io::write_matrix_market(path, w);
  const auto back = io::read_matrix_market(path);
  CHECK(back.size() == w.size());
  CHECK(back.nnz() == w.nnz());
  CHECK(back.dense().isApprox(w.dense(), 1e-15));
}

TEST_CASE("matrix market rejects malformed input") {
  TempDir tmp;
  const auto path = tmp.file("bad.mtx");
  {
    std::ofstream out(path);
    out << "%%MatrixMarket matrix array real general\n2 2 1\n";
  }
  CHECK_THROWS_AS(io::read_matrix_market(path), std::runtime_error);
  CHECK_THROWS_AS(io::read_matrix_market(tmp.file("missing.mtx")), std::runtime_error);
}

TEST_CASE("dataset csv round trip") {
  TempDir tmp;
  Rng rng(1);
  const Dataset data{msar::testing::random_matrix(rng, 5, 2),
                     msar::testing::random_matrix(rng, 5, 3)};
  const auto path = tmp.file("data.csv");
  io::write_dataset_csv(path, data);
  const auto back = io::read_dataset_csv(path);
  CHECK(back.q() == 2);
  CHECK(back.p() == 3);
  CHECK(back.Y.isApprox(data.Y, 1e-15));
  CHECK(back.X.isApprox(data.X, 1e-15));
}

TEST_CASE("dataset csv requires y then x columns") {
  TempDir tmp;
  const auto path = tmp.file("bad.csv");
  {
    std::ofstream out(path);
    out << "x1,y1\n1.0,2.0\n";
  }
  CHECK_THROWS_AS(io::read_dataset_csv(path), std::runtime_error);
}

TEST_CASE("distance csv validation") {
  TempDir tmp;
  const auto good = tmp.file("d.csv");
  {
    std::ofstream out(good);
    out << "a,b\n0,40\n40,0\n";
  }
  const auto d = io::read_distance_csv(good);
  CHECK(d.dis(0, 1) == 40.0);

  const auto bad = tmp.file("asym.csv");
  {
    std::ofstream out(bad);
    out << "a,b\n0,40\n41,0\n";
  }
  CHECK_THROWS_AS(io::read_distance_csv(bad), std::invalid_argument);
}

TEST_CASE("params json round trip") {
  TempDir tmp;
  MsarParams p;
  p.D.resize(2, 2);
  p.D << 0.3, -0.3, 0.5, 0.4;
  p.B.resize(2, 2);
  p.B << -0.5, 1.0, 1.3, 0.3;
  p.Sigma_e.resize(2, 2);
  p.Sigma_e << 0.5, 0.3, 0.3, 0.8;
  const auto path = tmp.file("params.json");
  io::write_params_json(path, p);
  const auto back = io::read_params_json(path);
  CHECK(back.D.isApprox(p.D, 1e-15));
  CHECK(back.B.isApprox(p.B, 1e-15));
  CHECK(back.Sigma_e.isApprox(p.Sigma_e, 1e-15));
}

TEST_CASE("params json validates shapes and stability") {
  TempDir tmp;
  const auto path = tmp.file("bad_params.json");
  {
    std::ofstream out(path);
    out << R"({"D": [[1.5, 0], [0, 0.2]], "B": [[1, 1]], "Sigma_e": [[1, 0], [0, 1]]})";
  }
  CHECK_THROWS_AS(io::read_params_json(path), std::invalid_argument);
}

TEST_CASE("attribute csv round trip") {
  TempDir tmp;
  Vector v(3);
  v << 1.5, 0.0, 42.25;
  const auto path = tmp.file("attr.csv");
  io::write_attribute_csv(path, "follower", v);
  CHECK(io::read_attribute_csv(path).isApprox(v, 1e-15));
}

TEST_CASE("malformed numbers are reported") {
  TempDir tmp;
  const auto path = tmp.file("nan.csv");
  {
    std::ofstream out(path);
    out << "y1,x1\n1.0,oops\n";
  }
  CHECK_THROWS_AS(io::read_dataset_csv(path), std::runtime_error);
}
