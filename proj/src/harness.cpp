#include "msar/harness.hpp"

#include "msar/rng.hpp"
#include "msar/version.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace msar {

namespace {

double kahan_mean(const std::vector<double>& v) {
  double sum = 0.0, comp = 0.0;
  for (double x : v) {
    const double y = x - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double std_of(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double frob_diff(const SpatialWeights& a, const SpatialWeights& b) {
  return (a.dense() - b.dense()).norm();
}

LatticeScheme scheme_from_string(const std::string& s) {
  if (s == "left") return LatticeScheme::left;
  if (s == "left_right") return LatticeScheme::left_right;
  if (s == "rook") return LatticeScheme::rook;
  if (s == "queen") return LatticeScheme::queen;
  throw std::runtime_error("unknown lattice scheme: " + s);
}

std::string scheme_to_string(LatticeScheme s) {
  switch (s) {
    case LatticeScheme::left: return "left";
    case LatticeScheme::left_right: return "left_right";
    case LatticeScheme::rook: return "rook";
    case LatticeScheme::queen: return "queen";
  }
  return "left";
}

Matrix rows_subset(const Matrix& m, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = m.row(idx[i]);
  return out;
}

}  // namespace

WeightsRecipe recipe_from_json(const io::Json& j) {
  WeightsRecipe r;
  r.type = j.at("type").get<std::string>();
  if (j.contains("scheme")) r.scheme = scheme_from_string(j["scheme"].get<std::string>());
  r.rows = j.value("rows", 0);
  r.cols = j.value("cols", 0);
  r.t1 = j.value("t1", r.t1);
  r.t2 = j.value("t2", r.t2);
  r.inner_w = j.value("inner_w", r.inner_w);
  r.outer_w = j.value("outer_w", r.outer_w);
  r.threshold = j.value("threshold", r.threshold);
  r.theta_d = j.value("theta_d", r.theta_d);
  r.scale = j.value("scale", r.scale);
  r.path = j.value("path", std::string{});
  r.distances = j.value("distances", std::string{});
  r.attributes = j.value("attributes", std::string{});
  r.normalize = j.value("normalize", true);
  if (j.contains("transform")) {
    const auto& t = j["transform"];
    if (t.is_string() && t.get<std::string>() == "linear") {
      r.transform.kind = AttributeTransform::Kind::linear;
    } else if (t.is_object() && t.contains("exponential")) {
      r.transform.kind = AttributeTransform::Kind::exponential;
      r.transform.coefficient = t["exponential"].get<double>();
    } else {
      throw std::runtime_error("bad attribute transform in recipe");
    }
  }
  if (j.contains("base")) r.components.push_back(recipe_from_json(j["base"]));
  if (j.contains("components"))
    for (const auto& c : j["components"]) r.components.push_back(recipe_from_json(c));
  if (j.contains("coeffs")) r.coeffs = j["coeffs"].get<std::vector<double>>();
  return r;
}

io::Json recipe_to_json(const WeightsRecipe& r) {
  io::Json j;
  j["type"] = r.type;
  if (r.type == "lattice") {
    j["scheme"] = scheme_to_string(r.scheme);
    if (r.rows > 0) j["rows"] = r.rows;
    if (r.cols > 0) j["cols"] = r.cols;
  } else if (r.type == "two_window_band") {
    j["t1"] = r.t1;
    j["t2"] = r.t2;
    j["inner_w"] = r.inner_w;
    j["outer_w"] = r.outer_w;
    j["distances"] = r.distances;
  } else if (r.type == "distance_band") {
    j["threshold"] = r.threshold;
    j["distances"] = r.distances;
  } else if (r.type == "exp_kernel") {
    j["theta_d"] = r.theta_d;
    j["scale"] = r.scale;
    j["distances"] = r.distances;
  } else if (r.type == "attribute") {
    j["base"] = recipe_to_json(r.components.at(0));
    j["attributes"] = r.attributes;
    if (r.transform.kind == AttributeTransform::Kind::linear)
      j["transform"] = "linear";
    else
      j["transform"] = io::Json{{"exponential", r.transform.coefficient}};
  } else if (r.type == "combine") {
    io::Json comps = io::Json::array();
    for (const auto& c : r.components) comps.push_back(recipe_to_json(c));
    j["components"] = std::move(comps);
    j["coeffs"] = r.coeffs;
  } else if (r.type == "file") {
    j["path"] = r.path;
  }
  j["normalize"] = r.normalize;
  return j;
}

const DistanceMatrix& RecipeInputs::distance(const std::string& path) {
  auto it = distances_.find(path);
  if (it == distances_.end()) it = distances_.emplace(path, io::read_distance_csv(path)).first;
  return it->second;
}

const Vector& RecipeInputs::attribute(const std::string& path) {
  auto it = attributes_.find(path);
  if (it == attributes_.end()) it = attributes_.emplace(path, io::read_attribute_csv(path)).first;
  return it->second;
}

SpatialWeights build_weights_recipe(const WeightsRecipe& recipe, Index grid_rows,
                                    Index grid_cols, RecipeInputs& inputs) {
  SpatialWeights w;
  if (recipe.type == "lattice") {
    LatticeSpec spec;
    spec.rows = recipe.rows > 0 ? recipe.rows : grid_rows;
    spec.cols = recipe.cols > 0 ? recipe.cols : grid_cols;
    spec.scheme = recipe.scheme;
    w = lattice_weights(spec);
  } else if (recipe.type == "two_window_band") {
    w = two_window_band(inputs.distance(recipe.distances), recipe.t1, recipe.t2,
                        recipe.inner_w, recipe.outer_w);
  } else if (recipe.type == "distance_band") {
    w = distance_band(inputs.distance(recipe.distances), recipe.threshold);
  } else if (recipe.type == "exp_kernel") {
    w = exp_kernel(inputs.distance(recipe.distances), recipe.theta_d, recipe.scale);
  } else if (recipe.type == "attribute") {
    if (recipe.components.size() != 1)
      throw std::runtime_error("attribute recipe needs exactly one base");
    WeightsRecipe base = recipe.components.front();
    base.normalize = false;
    const SpatialWeights adj = build_weights_recipe(base, grid_rows, grid_cols, inputs);
    w = attribute_weighted(adj, inputs.attribute(recipe.attributes), recipe.transform);
  } else if (recipe.type == "combine") {
    if (recipe.components.empty() || recipe.components.size() != recipe.coeffs.size())
      throw std::runtime_error("combine recipe needs matching components and coeffs");
    std::vector<SpatialWeights> parts;
    parts.reserve(recipe.components.size());
    for (const auto& c : recipe.components)
      parts.push_back(build_weights_recipe(c, grid_rows, grid_cols, inputs));
    w = combine(parts, Eigen::Map<const Vector>(recipe.coeffs.data(),
                                                static_cast<Index>(recipe.coeffs.size())));
  } else if (recipe.type == "file") {
    w = io::read_matrix_market(recipe.path);
  } else {
    throw std::runtime_error("unknown weights recipe type: " + recipe.type);
  }
  if (recipe.normalize && !w.normalized()) w = row_normalize(w, IslandPolicy::error);
  return w;
}

bool ExperimentConfig::has_method(const std::string& name) const {
  return std::find(methods.begin(), methods.end(), name) != methods.end();
}

void ExperimentConfig::validate() const {
  if (replications < 1) throw std::invalid_argument("config: replications must be >= 1");
  if (n < 2) throw std::invalid_argument("config: n too small");
  if (params.q() != q || params.p() != p)
    throw std::invalid_argument("config: parameter shapes do not match p, q");
  params.validate();
  if (x_cov.rows() != p || x_cov.cols() != p)
    throw std::invalid_argument("config: x_cov must be p x p");
  if (candidates.empty()) throw std::invalid_argument("config: no candidate matrices");
  if (omega_source >= static_cast<int>(candidates.size()))
    throw std::invalid_argument("config: omega_source out of range");
  for (const auto& m : methods)
    if (m != "per_candidate" && m != "ms" && m != "ma" && m != "univariate_ms" &&
        m != "univariate_ma")
      throw std::invalid_argument("config: unknown method " + m);
}

ExperimentConfig config_from_json(const io::Json& j) {
  ExperimentConfig cfg;
  cfg.n = j.at("n").get<Index>();
  cfg.p = j.at("p").get<Index>();
  cfg.q = j.at("q").get<Index>();
  if (j.contains("grid_shape")) {
    cfg.grid_rows = j["grid_shape"].at("rows").get<Index>();
    cfg.grid_cols = j["grid_shape"].at("cols").get<Index>();
  }
  cfg.params.D = io::matrix_from_json(j.at("params").at("D"));
  cfg.params.B = io::matrix_from_json(j.at("params").at("B"));
  cfg.params.Sigma_e = io::matrix_from_json(j.at("params").at("Sigma_e"));
  if (j.contains("x_cov"))
    cfg.x_cov = io::matrix_from_json(j["x_cov"]);
  else {
    cfg.x_cov = Matrix::Identity(cfg.p, cfg.p);
    if (cfg.p == 2) cfg.x_cov << 1.0, 0.5, 0.5, 1.0;
  }
  cfg.x_fixed = j.value("x_fixed", false);
  cfg.true_w = recipe_from_json(j.at("true_w"));
  for (const auto& c : j.at("candidates")) cfg.candidates.push_back(recipe_from_json(c));
  cfg.omega_source = j.value("omega_source", -1);
  if (j.contains("error_law")) {
    const std::string kind = j["error_law"].at("kind").get<std::string>();
    if (kind == "gaussian")
      cfg.error_kind = ErrorLaw::Kind::gaussian;
    else if (kind == "student_t")
      cfg.error_kind = ErrorLaw::Kind::student_t;
    else if (kind == "none")
      cfg.error_kind = ErrorLaw::Kind::none;
    else
      throw std::runtime_error("config: unknown error law " + kind);
    cfg.error_df = j["error_law"].value("df", 5.0);
  }
  cfg.replications = j.value("replications", 500);
  cfg.seed = j.value("seed", std::uint64_t{1});
  if (j.contains("methods")) cfg.methods = j["methods"].get<std::vector<std::string>>();
  cfg.mse_per_observation =
      j.value("mse_normalization", std::string{"mean"}) != std::string{"sum"};
  cfg.threads = j.value("threads", 0);
  cfg.fit_options.tol = j.value("fit_tol", cfg.fit_options.tol);
  cfg.fit_options.max_iter = j.value("fit_max_iter", cfg.fit_options.max_iter);
  cfg.fit_options.grad_tol = j.value("fit_grad_tol", cfg.fit_options.grad_tol);
  return cfg;
}

io::Json config_to_json(const ExperimentConfig& cfg) {
  io::Json j;
  j["n"] = cfg.n;
  j["p"] = cfg.p;
  j["q"] = cfg.q;
  j["grid_shape"] = {{"rows", cfg.grid_rows}, {"cols", cfg.grid_cols}};
  j["params"] = {{"D", io::matrix_to_json(cfg.params.D)},
                 {"B", io::matrix_to_json(cfg.params.B)},
                 {"Sigma_e", io::matrix_to_json(cfg.params.Sigma_e)}};
  j["x_cov"] = io::matrix_to_json(cfg.x_cov);
  j["x_fixed"] = cfg.x_fixed;
  j["true_w"] = recipe_to_json(cfg.true_w);
  io::Json cands = io::Json::array();
  for (const auto& c : cfg.candidates) cands.push_back(recipe_to_json(c));
  j["candidates"] = std::move(cands);
  j["omega_source"] = cfg.omega_source;
  const char* kind = cfg.error_kind == ErrorLaw::Kind::gaussian     ? "gaussian"
                     : cfg.error_kind == ErrorLaw::Kind::student_t ? "student_t"
                                                                   : "none";
  j["error_law"] = {{"kind", kind}, {"df", cfg.error_df}};
  j["replications"] = cfg.replications;
  j["seed"] = cfg.seed;
  j["methods"] = cfg.methods;
  j["mse_normalization"] = cfg.mse_per_observation ? "mean" : "sum";
  j["threads"] = cfg.threads;
  j["fit_tol"] = cfg.fit_options.tol;
  j["fit_max_iter"] = cfg.fit_options.max_iter;
  j["fit_grad_tol"] = cfg.fit_options.grad_tol;
  return j;
}

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg, RecipeInputs& inputs) {
  cfg.validate();
  PreparedExperiment prep;
  prep.true_w = build_weights_recipe(cfg.true_w, cfg.grid_rows, cfg.grid_cols, inputs);
  if (prep.true_w.size() != cfg.n)
    throw std::invalid_argument("config: true_w size does not match n");
  for (const auto& r : cfg.candidates) {
    prep.candidates.push_back(build_weights_recipe(r, cfg.grid_rows, cfg.grid_cols, inputs));
    if (prep.candidates.back().size() != cfg.n)
      throw std::invalid_argument("config: candidate size does not match n");
  }
  if (cfg.x_fixed) {
    Rng xr = Rng::stream(cfg.seed, 0x58'00000000ULL);
    const Matrix L = Eigen::LLT<Matrix>(cfg.x_cov).matrixL();
    prep.x_fixed.resize(cfg.n, cfg.p);
    Vector z(cfg.p);
    for (Index i = 0; i < cfg.n; ++i) {
      for (Index c = 0; c < cfg.p; ++c) z(c) = xr.normal();
      prep.x_fixed.row(i) = (L * z).transpose();
    }
  }
  return prep;
}

namespace {

struct SelectionOutcome {
  std::vector<CriterionValue> criteria;
  std::vector<bool> crit_ok;
  int selected = -1;
  WeightVector weights;
  bool ma_ok = false;
  int omega_source = -1;
  bool omega_fallback = false;
};

/// Fits are assumed done; runs Omega, criteria, MS argmin and the MA QP.
SelectionOutcome run_selection(const Dataset& data, const std::vector<SpatialWeights>& cands,
                               const std::vector<CandidateFit>& fits,
                               const std::vector<bool>& fit_ok, int omega_source,
                               bool want_ma) {
  SelectionOutcome out;
  const int K = static_cast<int>(cands.size());
  const OmegaEstimate omega = omega_hat_auto(fits, cands, omega_source);
  out.omega_source = omega.source_candidate;
  out.omega_fallback = omega.fallback_used;

  out.criteria.resize(K);
  out.crit_ok.assign(K, false);
  for (int k = 0; k < K; ++k) {
    if (!fit_ok[k]) continue;
    try {
      out.criteria[k] = criterion(fits[k], cands[k], data, omega);
      out.crit_ok[k] = true;
    } catch (const std::exception&) {
    }
  }

  for (int k = 0; k < K; ++k)
    if (out.crit_ok[k] &&
        (out.selected < 0 || out.criteria[k].C_hat < out.criteria[out.selected].C_hat))
      out.selected = k;

  if (want_ma) {
    // The averaging problem needs every included candidate; failed ones are
    // excluded and re-embedded with weight zero.
    std::vector<CandidateFit> ok_fits;
    std::vector<CriterionValue> ok_crit;
    std::vector<int> map;
    for (int k = 0; k < K; ++k)
      if (out.crit_ok[k]) {
        ok_fits.push_back(fits[k]);
        ok_crit.push_back(out.criteria[k]);
        map.push_back(k);
      }
    if (!ok_fits.empty()) {
      const AveragingProblem prob = build_problem(ok_fits, data, ok_crit);
      const WeightVector sol = solve_simplex_qp(prob);
      out.weights.w = Vector::Zero(K);
      for (std::size_t i = 0; i < map.size(); ++i)
        out.weights.w(map[i]) = sol.w(static_cast<Index>(i));
      out.weights.objective = sol.objective;
      out.weights.kkt_residual = sol.kkt_residual;
      out.weights.iterations = sol.iterations;
      out.ma_ok = true;
    }
  }
  return out;
}

}  // namespace

ReplicationResult run_replication(const ExperimentConfig& cfg, const PreparedExperiment& prep,
                                  int rep) {
  ReplicationResult res;
  res.rep = rep;
  try {
    Rng seeder = Rng::stream(cfg.seed, static_cast<std::uint64_t>(rep));
    const std::uint64_t x_seed = seeder.next_u64();
    const std::uint64_t e_seed = seeder.next_u64();

    Matrix X;
    if (cfg.x_fixed) {
      X = prep.x_fixed;
    } else {
      Rng xr(x_seed);
      const Matrix L = Eigen::LLT<Matrix>(cfg.x_cov).matrixL();
      X.resize(cfg.n, cfg.p);
      Vector z(cfg.p);
      for (Index i = 0; i < cfg.n; ++i) {
        for (Index c = 0; c < cfg.p; ++c) z(c) = xr.normal();
        X.row(i) = (L * z).transpose();
      }
    }

    ErrorLaw law{cfg.error_kind, cfg.error_df, cfg.params.Sigma_e};
    const Dataset data = simulate(cfg.params, prep.true_w, X, law, e_seed);

    const Matrix S_true = build_S(cfg.params.D, prep.true_w);
    const Vector mu =
        Eigen::PartialPivLU<Matrix>(S_true).solve(apply_xtilde(X, vec(cfg.params.B), cfg.q));
    const double denom = cfg.mse_per_observation ? static_cast<double>(cfg.n) : 1.0;
    const Index n = cfg.n;
    auto mse_of = [&](const Vector& mu_hat) {
      Vector out(cfg.q);
      for (Index j = 0; j < cfg.q; ++j)
        out(j) = (mu_hat.segment(j * n, n) - mu.segment(j * n, n)).squaredNorm() / denom;
      return out;
    };

    const int K = static_cast<int>(prep.candidates.size());
    std::vector<CandidateFit> fits(K);
    std::vector<bool> fit_ok(K, false);
    for (int k = 0; k < K; ++k) {
      try {
        fits[k] = fit(data, prep.candidates[k], cfg.fit_options);
        fits[k].candidate_index = k;
        fit_ok[k] = true;
      } catch (const std::exception&) {
      }
    }

    res.per_candidate.resize(K);
    if (cfg.has_method("per_candidate")) {
      for (int k = 0; k < K; ++k) {
        if (!fit_ok[k]) continue;
        auto& m = res.per_candidate[k];
        m.mse_mu = mse_of(fits[k].mu_tilde);
        m.frob_D = (fits[k].D_hat - cfg.params.D).norm();
        m.frob_B = (fits[k].B_tilde(cfg.p, cfg.q) - cfg.params.B).norm();
        m.ok = true;
        m.converged = fits[k].converged;
      }
    }

    const bool want_ms = cfg.has_method("ms");
    const bool want_ma = cfg.has_method("ma");
    if (want_ms || want_ma) {
      const SelectionOutcome sel = run_selection(data, prep.candidates, fits, fit_ok,
                                                 cfg.omega_source, want_ma);
      res.omega_source_used = sel.omega_source;
      res.omega_fallback = sel.omega_fallback;
      if (want_ms && sel.selected >= 0) {
        const int k = sel.selected;
        res.selected_k = k;
        res.ms.mse_mu = mse_of(fits[k].mu_tilde);
        res.ms.frob_D = (fits[k].D_hat - cfg.params.D).norm();
        res.ms.frob_B = (fits[k].B_tilde(cfg.p, cfg.q) - cfg.params.B).norm();
        res.ms.frob_W = frob_diff(prep.candidates[k], prep.true_w);
        res.ms.ok = true;
        res.ms.converged = fits[k].converged;
      }
      if (want_ma && sel.ma_ok) {
        std::vector<CandidateFit> all_fits(fits.begin(), fits.end());
        const auto [mu_avg, w_avg] =
            averaged_estimates(sel.weights, all_fits, prep.candidates);
        res.ma_weights = sel.weights.w;
        res.ma.mse_mu = mse_of(mu_avg);
        res.ma.frob_W = frob_diff(w_avg, prep.true_w);
        res.ma.ok = true;
        res.ma.converged = true;
      }
    }

    const bool uni_ms = cfg.has_method("univariate_ms");
    const bool uni_ma = cfg.has_method("univariate_ma");
    if (uni_ms || uni_ma) {
      res.uni_ms.resize(cfg.q);
      res.uni_ma.resize(cfg.q);
      res.uni_selected.assign(cfg.q, -1);
      res.uni_weights.resize(cfg.q);
      for (Index j = 0; j < cfg.q; ++j) {
        const Dataset dj{data.Y.col(j), data.X};
        std::vector<CandidateFit> fj(K);
        std::vector<bool> fj_ok(K, false);
        for (int k = 0; k < K; ++k) {
          try {
            fj[k] = fit(dj, prep.candidates[k], cfg.fit_options);
            fj[k].candidate_index = k;
            fj_ok[k] = true;
          } catch (const std::exception&) {
          }
        }
        const SelectionOutcome sel =
            run_selection(dj, prep.candidates, fj, fj_ok, cfg.omega_source, uni_ma);
        const Vector mu_j = mu.segment(j * n, n);
        if (uni_ms && sel.selected >= 0) {
          const int k = sel.selected;
          res.uni_selected[j] = k;
          auto& m = res.uni_ms[j];
          m.mse_mu = Vector::Constant(1, (fj[k].mu_tilde - mu_j).squaredNorm() / denom);
          m.frob_W = frob_diff(prep.candidates[k], prep.true_w);
          m.ok = true;
          m.converged = fj[k].converged;
        }
        if (uni_ma && sel.ma_ok) {
          const auto [mu_avg, w_avg] = averaged_estimates(sel.weights, fj, prep.candidates);
          res.uni_weights[j] = sel.weights.w;
          auto& m = res.uni_ma[j];
          m.mse_mu = Vector::Constant(1, (mu_avg - mu_j).squaredNorm() / denom);
          m.frob_W = frob_diff(w_avg, prep.true_w);
          m.ok = true;
          m.converged = true;
        }
      }
    }
  } catch (const std::exception& e) {
    res.error = e.what();
  }
  return res;
}

namespace {

class SeriesAccumulator {
 public:
  void add(const std::string& method, const std::string& metric, double value) {
    if (std::isfinite(value)) series_[{method, metric}].push_back(value);
  }

  void emit(std::vector<SummaryRow>* rows) const {
    for (const auto& [key, values] : series_) {
      const double mean = kahan_mean(values);
      rows->push_back({key.first, key.second, "mean", mean});
      rows->push_back({key.first, key.second, "median", median_of(values)});
      rows->push_back({key.first, key.second, "std", std_of(values, mean)});
      rows->push_back({key.first, key.second, "count", static_cast<double>(values.size())});
    }
  }

 private:
  std::map<std::pair<std::string, std::string>, std::vector<double>> series_;
};

void add_metrics(SeriesAccumulator* acc, const std::string& method, const MethodMetrics& m) {
  if (!m.ok) return;
  for (Index j = 0; j < m.mse_mu.size(); ++j)
    acc->add(method, "mse_mu" + std::to_string(j + 1), m.mse_mu(j));
  acc->add(method, "frob_D", m.frob_D);
  acc->add(method, "frob_B", m.frob_B);
  acc->add(method, "frob_W", m.frob_W);
}

}  // namespace

double SummaryTable::value(const std::string& method, const std::string& metric,
                           const std::string& statistic) const {
  for (const auto& r : rows)
    if (r.method == method && r.metric == metric && r.statistic == statistic) return r.value;
  throw std::out_of_range("summary row not found: " + method + "/" + metric + "/" + statistic);
}

bool SummaryTable::has(const std::string& method, const std::string& metric,
                       const std::string& statistic) const {
  for (const auto& r : rows)
    if (r.method == method && r.metric == metric && r.statistic == statistic) return true;
  return false;
}

SummaryTable run_experiment(const ExperimentConfig& cfg,
                            std::vector<ReplicationResult>* details) {
  RecipeInputs inputs;
  const PreparedExperiment prep = prepare_experiment(cfg, inputs);
  const int R = cfg.replications;
  std::vector<ReplicationResult> results(R);

  int threads = cfg.threads > 0 ? cfg.threads
                                : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, R));

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= R) break;
      results[r] = run_replication(cfg, prep, r);
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Deterministic fold in replication order, independent of the worker count.
  const int K = static_cast<int>(prep.candidates.size());
  SeriesAccumulator acc;
  std::vector<long> ms_counts(K, 0);
  std::vector<std::vector<long>> uni_counts(cfg.q, std::vector<long>(K, 0));
  std::vector<std::vector<double>> ma_weights(K);
  std::vector<std::vector<std::vector<double>>> uni_weights(
      cfg.q, std::vector<std::vector<double>>(K));
  long ms_total = 0;
  std::vector<long> uni_totals(cfg.q, 0);
  long failures = 0, omega_fallbacks = 0, nonconverged_fits = 0;

  for (const auto& r : results) {
    if (!r.error.empty()) {
      ++failures;
      continue;
    }
    for (int k = 0; k < K; ++k) {
      if (k < static_cast<int>(r.per_candidate.size())) {
        add_metrics(&acc, "W" + std::to_string(k + 1), r.per_candidate[k]);
        if (r.per_candidate[k].ok && !r.per_candidate[k].converged) ++nonconverged_fits;
      }
    }
    if (r.ms.ok) {
      add_metrics(&acc, "MS", r.ms);
      ++ms_counts[r.selected_k];
      ++ms_total;
    }
    if (r.ma.ok) {
      add_metrics(&acc, "MA", r.ma);
      for (int k = 0; k < K; ++k) ma_weights[k].push_back(r.ma_weights(k));
    }
    if (r.omega_fallback) ++omega_fallbacks;
    for (Index j = 0; j < static_cast<Index>(r.uni_ms.size()); ++j) {
      const std::string tag = "SAR-Y" + std::to_string(j + 1);
      if (r.uni_ms[j].ok) {
        add_metrics(&acc, tag + "-MS", r.uni_ms[j]);
        ++uni_counts[j][r.uni_selected[j]];
        ++uni_totals[j];
      }
      if (j < static_cast<Index>(r.uni_ma.size()) && r.uni_ma[j].ok) {
        add_metrics(&acc, tag + "-MA", r.uni_ma[j]);
        for (int k = 0; k < K; ++k) uni_weights[j][k].push_back(r.uni_weights[j](k));
      }
    }
  }

  SummaryTable table;
  acc.emit(&table.rows);
  for (int k = 0; k < K; ++k) {
    if (ms_total > 0)
      table.rows.push_back({"MS", "accuracy_W" + std::to_string(k + 1), "freq",
                            static_cast<double>(ms_counts[k]) / static_cast<double>(ms_total)});
    if (!ma_weights[k].empty())
      table.rows.push_back(
          {"MA", "weight_W" + std::to_string(k + 1), "mean", kahan_mean(ma_weights[k])});
  }
  for (Index j = 0; j < cfg.q; ++j) {
    const std::string tag = "SAR-Y" + std::to_string(j + 1);
    for (int k = 0; k < K; ++k) {
      if (uni_totals[j] > 0)
        table.rows.push_back({tag + "-MS", "accuracy_W" + std::to_string(k + 1), "freq",
                              static_cast<double>(uni_counts[j][k]) /
                                  static_cast<double>(uni_totals[j])});
      if (!uni_weights[j][k].empty())
        table.rows.push_back({tag + "-MA", "weight_W" + std::to_string(k + 1), "mean",
                              kahan_mean(uni_weights[j][k])});
    }
  }
  table.rows.push_back({"run", "replication_failures", "count", static_cast<double>(failures)});
  table.rows.push_back(
      {"run", "omega_fallbacks", "count", static_cast<double>(omega_fallbacks)});
  table.rows.push_back(
      {"run", "nonconverged_fits", "count", static_cast<double>(nonconverged_fits)});

  if (details) *details = std::move(results);
  return table;
}

SplitEvalResult split_evaluate(const Dataset& data,
                               const std::vector<SpatialWeights>& candidates,
                               const SplitEvalOptions& opts) {
  if (!(opts.train_ratio > 0.0 && opts.train_ratio < 1.0))
    throw std::invalid_argument("split_evaluate: train_ratio must lie in (0, 1)");
  if (opts.splits < 1) throw std::invalid_argument("split_evaluate: splits must be >= 1");
  if (candidates.empty()) throw std::invalid_argument("split_evaluate: no candidates");
  const Index n = data.n();
  const Index q = data.q();
  const Index n_train = static_cast<Index>(std::llround(opts.train_ratio * n));
  if (n_train <= data.p() * q || n - n_train < 1)
    throw std::invalid_argument("split_evaluate: split sizes are infeasible");
  const int K = static_cast<int>(candidates.size());

  SplitEvalResult out;
  for (int s = 0; s < opts.splits; ++s) {
    Rng rng = Rng::stream(opts.seed, static_cast<std::uint64_t>(s));
    std::vector<Index> perm(n);
    for (Index i = 0; i < n; ++i) perm[i] = i;
    for (Index i = n - 1; i > 0; --i) {
      const Index j = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
      std::swap(perm[i], perm[j]);
    }
    std::vector<Index> train(perm.begin(), perm.begin() + n_train);
    std::vector<Index> test(perm.begin() + n_train, perm.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());

    SplitRow row;
    row.split = s;
    std::vector<SpatialWeights> w_train, w_test;
    for (const auto& w : candidates) {
      Index isl = 0;
      w_train.push_back(row_normalize(w.restrict_to(train), IslandPolicy::drop_to_zero, &isl));
      row.islands_train += isl;
      w_test.push_back(row_normalize(w.restrict_to(test), IslandPolicy::drop_to_zero, &isl));
      row.islands_test += isl;
    }

    const Dataset dtr{rows_subset(data.Y, train), rows_subset(data.X, train)};
    const Dataset dte{rows_subset(data.Y, test), rows_subset(data.X, test)};

    std::vector<CandidateFit> fits(K);
    std::vector<bool> fit_ok(K, false);
    for (int k = 0; k < K; ++k) {
      fits[k] = fit(dtr, w_train[k], opts.fit_options);
      fits[k].candidate_index = k;
      fit_ok[k] = true;
    }
    const SelectionOutcome sel =
        run_selection(dtr, w_train, fits, fit_ok, opts.omega_source, /*want_ma=*/true);
    if (sel.selected < 0 || !sel.ma_ok)
      throw std::runtime_error("split_evaluate: selection failed on split " +
                               std::to_string(s));

    // Apply the training-fitted parameters to the test subgraph.
    std::vector<Vector> mu_test(K);
    for (int k = 0; k < K; ++k) {
      const Matrix S_te = build_S(fits[k].D_hat, w_test[k]);
      mu_test[k] = Eigen::PartialPivLU<Matrix>(S_te).solve(
          apply_xtilde(dte.X, fits[k].beta_tilde, q));
    }

    auto mse_cols = [q](const Vector& fitted, const Dataset& d) {
      Vector out(q);
      const Index m = d.n();
      const Vector y = d.y();
      for (Index j = 0; j < q; ++j)
        out(j) = (fitted.segment(j * m, m) - y.segment(j * m, m)).squaredNorm() /
                 static_cast<double>(m);
      return out;
    };

    row.selected_k = sel.selected;
    row.weights = sel.weights.w;
    row.ms_train_mse = mse_cols(fits[sel.selected].mu_tilde, dtr);
    row.ms_test_mse = mse_cols(mu_test[sel.selected], dte);

    Vector mu_tr_avg = Vector::Zero(dtr.n() * q);
    Vector mu_te_avg = Vector::Zero(dte.n() * q);
    for (int k = 0; k < K; ++k) {
      mu_tr_avg += sel.weights.w(k) * fits[k].mu_tilde;
      mu_te_avg += sel.weights.w(k) * mu_test[k];
    }
    row.ma_train_mse = mse_cols(mu_tr_avg, dtr);
    row.ma_test_mse = mse_cols(mu_te_avg, dte);
    out.rows.push_back(std::move(row));
  }
  return out;
}

void write_summary_csv(const std::string& path, const SummaryTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "method,metric,statistic,value\n";
  char buf[32];
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    out << r.method << "," << r.metric << "," << r.statistic << "," << buf << "\n";
  }
}

void write_replications_csv(const std::string& path, const ExperimentConfig& cfg,
                            const std::vector<ReplicationResult>& reps) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "rep,method,metric,value\n";
  char buf[32];
  auto put = [&](int rep, const std::string& method, const std::string& metric, double v) {
    if (!std::isfinite(v)) return;
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << rep << "," << method << "," << metric << "," << buf << "\n";
  };
  auto put_metrics = [&](int rep, const std::string& method, const MethodMetrics& m) {
    if (!m.ok) return;
    for (Index j = 0; j < m.mse_mu.size(); ++j)
      put(rep, method, "mse_mu" + std::to_string(j + 1), m.mse_mu(j));
    put(rep, method, "frob_D", m.frob_D);
    put(rep, method, "frob_B", m.frob_B);
    put(rep, method, "frob_W", m.frob_W);
  };
  for (const auto& r : reps) {
    if (!r.error.empty()) {
      out << r.rep << ",run,failed,1\n";
      continue;
    }
    for (std::size_t k = 0; k < r.per_candidate.size(); ++k)
      put_metrics(r.rep, "W" + std::to_string(k + 1), r.per_candidate[k]);
    if (r.ms.ok) {
      put_metrics(r.rep, "MS", r.ms);
      put(r.rep, "MS", "selected", static_cast<double>(r.selected_k + 1));
    }
    if (r.ma.ok) {
      put_metrics(r.rep, "MA", r.ma);
      for (Index k = 0; k < r.ma_weights.size(); ++k)
        put(r.rep, "MA", "weight_W" + std::to_string(k + 1), r.ma_weights(k));
    }
    for (std::size_t j = 0; j < r.uni_ms.size(); ++j) {
      const std::string tag = "SAR-Y" + std::to_string(j + 1);
      if (r.uni_ms[j].ok) {
        put_metrics(r.rep, tag + "-MS", r.uni_ms[j]);
        put(r.rep, tag + "-MS", "selected", static_cast<double>(r.uni_selected[j] + 1));
      }
      if (j < r.uni_ma.size() && r.uni_ma[j].ok) {
        put_metrics(r.rep, tag + "-MA", r.uni_ma[j]);
        for (Index k = 0; k < r.uni_weights[j].size(); ++k)
          put(r.rep, tag + "-MA", "weight_W" + std::to_string(k + 1), r.uni_weights[j](k));
      }
    }
  }
  (void)cfg;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string dump = config_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

io::Json meta_json(const ExperimentConfig& cfg, bool include_time) {
  io::Json j;
  j["library"] = "msar";
  j["version"] = kVersion;
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  j["config_hash"] = hex;
  if (include_time) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&tt, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    j["timestamp"] = buf;
  }
  j["config"] = config_to_json(cfg);
  return j;
}

}  // namespace msar
