// Command-line front end: build weights matrices, simulate, fit, select,
// average, run experiments, and split-evaluate external datasets.

#include "msar/harness.hpp"
#include "msar/io.hpp"
#include "msar/rng.hpp"
#include "msar/version.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using msar::Index;
using msar::Matrix;
using msar::Vector;
using Json = msar::io::Json;

constexpr int kExitOk = 0;
constexpr int kExitUserError = 1;
constexpr int kExitNumerical = 2;

struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
  if (!std::filesystem::exists(path)) throw UserError("no such file: " + path);
}

// "a,b;c,d" -> 2x2 matrix, rows separated by ';'.
Matrix parse_inline_matrix(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::stringstream ss(text);
  std::string row;
  while (std::getline(ss, row, ';')) {
    std::vector<double> vals;
    std::stringstream rs(row);
    std::string cell;
    while (std::getline(rs, cell, ',')) vals.push_back(std::stod(cell));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw UserError("empty matrix literal");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw UserError("ragged matrix literal");
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return m;
}

Json fit_to_json(const msar::CandidateFit& f, Index p, Index q) {
  Json j;
  j["D_hat"] = msar::io::matrix_to_json(f.D_hat);
  j["Sigma_hat"] = msar::io::matrix_to_json(f.Sigma_hat);
  j["B_gls"] = msar::io::matrix_to_json(msar::unvec(f.beta_gls, p, q));
  j["B_tilde"] = msar::io::matrix_to_json(f.B_tilde(p, q));
  j["converged"] = f.converged;
  j["iterations"] = f.iterations;
  j["objective"] = f.objective;
  j["grad_norm"] = f.grad_norm;
  return j;
}

struct SelectionRun {
  msar::Dataset data{Matrix{}, Matrix{}};
  std::vector<msar::SpatialWeights> candidates;
  std::vector<msar::CandidateFit> fits;
  msar::OmegaEstimate omega;
  std::vector<msar::CriterionValue> criteria;
};

SelectionRun run_selection_pipeline(const std::string& data_path,
                                    const std::vector<std::string>& weight_paths,
                                    int omega_from_1based, const msar::FitOptions& fopts,
                                    bool allow_nonconverged) {
  require_file(data_path);
  for (const auto& p : weight_paths) require_file(p);
  if (weight_paths.empty()) throw UserError("at least one weights matrix is required");
  if (omega_from_1based > static_cast<int>(weight_paths.size()))
    throw UserError("--omega-from is out of range");

  SelectionRun run;
  run.data = msar::io::read_dataset_csv(data_path);
  for (const auto& p : weight_paths) {
    auto w = msar::io::read_matrix_market(p);
    if (!w.normalized()) w = msar::row_normalize(w, msar::IslandPolicy::error);
    run.candidates.push_back(std::move(w));
  }

  run.fits.resize(run.candidates.size());
  for (std::size_t k = 0; k < run.candidates.size(); ++k) {
    run.fits[k] = msar::fit(run.data, run.candidates[k], fopts);
    run.fits[k].candidate_index = static_cast<int>(k);
    if (!run.fits[k].converged && !allow_nonconverged)
      throw std::runtime_error("fit did not converge for candidate " + std::to_string(k + 1) +
                               " (pass --allow-nonconverged to continue)");
  }
  run.omega = msar::omega_hat_auto(run.fits, run.candidates, omega_from_1based - 1);
  run.criteria.resize(run.fits.size());
  for (std::size_t k = 0; k < run.fits.size(); ++k)
    run.criteria[k] = msar::criterion(run.fits[k], run.candidates[k], run.data, run.omega);
  return run;
}

Json criteria_to_json(const SelectionRun& run) {
  Json arr = Json::array();
  for (const auto& c : run.criteria) {
    Json j;
    j["k"] = c.k + 1;
    j["sse"] = c.sse;
    j["trace_term"] = c.trace_term;
    j["stein_term"] = c.stein_term;
    j["C_hat"] = c.C_hat;
    if (c.warn_ill_conditioned) j["warn_ill_conditioned"] = true;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial weights matrix selection and model averaging for MSAR models",
               "msar"};
  app.set_version_flag("--version", msar::kVersion);
  app.require_subcommand(1);

  // ---- weights ----
  auto* cmd_weights = app.add_subcommand("weights", "Build a spatial weights matrix");
  std::string w_recipe, w_scheme, w_out = "weights.mtx";
  Index w_rows = 0, w_cols = 0;
  bool w_no_normalize = false;
  cmd_weights->add_option("--recipe", w_recipe, "Recipe JSON file");
  cmd_weights->add_option("--scheme", w_scheme, "Lattice scheme: left|left_right|rook|queen");
  cmd_weights->add_option("--rows", w_rows, "Lattice rows");
  cmd_weights->add_option("--cols", w_cols, "Lattice cols");
  cmd_weights->add_flag("--no-normalize", w_no_normalize, "Skip row normalization");
  cmd_weights->add_option("--out", w_out, "Output Matrix Market path");

  // ---- simulate ----
  auto* cmd_sim = app.add_subcommand("simulate", "Draw one dataset from the reduced form");
  std::string s_params, s_weights, s_x, s_law = "gaussian", s_xcov, s_out = "data.csv";
  double s_df = 5.0;
  std::uint64_t s_seed = 1;
  Index s_p = 2;
  cmd_sim->add_option("--params", s_params, "Parameter JSON (D, B, Sigma_e)")->required();
  cmd_sim->add_option("--weights", s_weights, "True weights matrix (.mtx)")->required();
  cmd_sim->add_option("--x", s_x, "Covariate CSV (generated when omitted)");
  cmd_sim->add_option("--x-cov", s_xcov, "Covariate row covariance, e.g. \"1,0.5;0.5,1\"");
  cmd_sim->add_option("--error-law", s_law, "gaussian|student_t|none");
  cmd_sim->add_option("--df", s_df, "Degrees of freedom for student_t");
  cmd_sim->add_option("--seed", s_seed, "RNG seed");
  cmd_sim->add_option("--out", s_out, "Output dataset CSV");

  // ---- fit ----
  auto* cmd_fit = app.add_subcommand("fit", "Estimate one candidate model");
  std::string f_data, f_weights, f_out, f_mu_out;
  msar::FitOptions f_opts;
  bool f_allow = false;
  cmd_fit->add_option("--data", f_data, "Dataset CSV")->required();
  cmd_fit->add_option("--weights", f_weights, "Candidate weights matrix (.mtx)")->required();
  cmd_fit->add_option("--tol", f_opts.tol, "Block-iteration tolerance on D");
  cmd_fit->add_option("--max-iter", f_opts.max_iter, "Maximum block iterations");
  cmd_fit->add_option("--out", f_out, "Output JSON (stdout when omitted)");
  cmd_fit->add_option("--mu-out", f_mu_out, "Optional fitted-mean CSV");
  cmd_fit->add_flag("--allow-nonconverged", f_allow, "Exit 0 even without convergence");

  // ---- select ----
  auto* cmd_sel = app.add_subcommand("select", "Criterion values and the selected candidate");
  std::string sel_data, sel_out;
  std::vector<std::string> sel_weights;
  int sel_omega = 0;
  bool sel_allow = false;
  msar::FitOptions sel_fopts;
  cmd_sel->add_option("--data", sel_data, "Dataset CSV")->required();
  cmd_sel->add_option("--weights", sel_weights, "Candidate matrices (.mtx)")->required();
  cmd_sel->add_option("--omega-from", sel_omega,
                      "1-based candidate used for Omega (default: densest)");
  cmd_sel->add_flag("--allow-nonconverged", sel_allow, "Continue past non-convergence");
  cmd_sel->add_option("--out", sel_out, "Output JSON (stdout when omitted)");

  // ---- average ----
  auto* cmd_avg = app.add_subcommand("average", "Model-averaging weights over the simplex");
  std::string avg_data, avg_out, avg_mu_out;
  std::vector<std::string> avg_weights;
  int avg_omega = 0;
  bool avg_allow = false;
  cmd_avg->add_option("--data", avg_data, "Dataset CSV")->required();
  cmd_avg->add_option("--weights", avg_weights, "Candidate matrices (.mtx)")->required();
  cmd_avg->add_option("--omega-from", avg_omega,
                      "1-based candidate used for Omega (default: densest)");
  cmd_avg->add_flag("--allow-nonconverged", avg_allow, "Continue past non-convergence");
  cmd_avg->add_option("--out", avg_out, "Output JSON (stdout when omitted)");
  cmd_avg->add_option("--mu-out", avg_mu_out, "Optional averaged-mean CSV");

  // ---- experiment ----
  auto* cmd_exp = app.add_subcommand("experiment", "Run a Monte Carlo experiment");
  std::string e_config, e_out_dir = ".";
  int e_reps = -1, e_threads = -1;
  std::int64_t e_seed = -1;
  bool e_no_meta_time = false, e_keep_reps = false;
  cmd_exp->add_option("--config", e_config, "Experiment config JSON")->required();
  cmd_exp->add_option("--reps", e_reps, "Override replication count");
  cmd_exp->add_option("--seed", e_seed, "Override RNG seed");
  cmd_exp->add_option("--threads", e_threads, "Worker threads (1 = serial)");
  cmd_exp->add_option("--out", e_out_dir, "Output directory");
  cmd_exp->add_flag("--no-meta-time", e_no_meta_time, "Omit the timestamp from meta.json");
  cmd_exp->add_flag("--replications-csv", e_keep_reps, "Also write per-replication rows");

  // ---- split-eval ----
  auto* cmd_split = app.add_subcommand("split-eval", "Train/test split evaluation");
  std::string sp_data, sp_out;
  std::vector<std::string> sp_weights;
  msar::SplitEvalOptions sp_opts;
  int sp_omega = 0;
  cmd_split->add_option("--data", sp_data, "Dataset CSV")->required();
  cmd_split->add_option("--weights", sp_weights, "Candidate matrices (.mtx)")->required();
  cmd_split->add_option("--splits", sp_opts.splits, "Number of random splits");
  cmd_split->add_option("--ratio", sp_opts.train_ratio, "Training fraction");
  cmd_split->add_option("--seed", sp_opts.seed, "RNG seed");
  cmd_split->add_option("--omega-from", sp_omega, "1-based candidate used for Omega");
  cmd_split->add_option("--out", sp_out, "Output JSON (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUserError;
  }

  auto emit_json = [](const Json& j, const std::string& path) {
    if (path.empty())
      std::cout << j.dump(2) << "\n";
    else
      msar::io::write_json_file(path, j);
  };

  try {
    if (cmd_weights->parsed()) {
      msar::WeightsRecipe recipe;
      if (!w_recipe.empty()) {
        require_file(w_recipe);
        recipe = msar::recipe_from_json(msar::io::read_json_file(w_recipe));
      } else if (!w_scheme.empty()) {
        Json j{{"type", "lattice"}, {"scheme", w_scheme}, {"rows", w_rows}, {"cols", w_cols}};
        recipe = msar::recipe_from_json(j);
      } else {
        throw UserError("pass either --recipe or --scheme/--rows/--cols");
      }
      if (w_no_normalize) recipe.normalize = false;
      msar::RecipeInputs inputs;
      const auto w = msar::build_weights_recipe(recipe, w_rows, w_cols, inputs);
      msar::io::write_matrix_market(w_out, w);
      return kExitOk;
    }

    if (cmd_sim->parsed()) {
      require_file(s_params);
      require_file(s_weights);
      const auto params = msar::io::read_params_json(s_params);
      auto w = msar::io::read_matrix_market(s_weights);
      if (!w.normalized()) w = msar::row_normalize(w, msar::IslandPolicy::error);
      Matrix X;
      if (!s_x.empty()) {
        require_file(s_x);
        X = msar::io::read_matrix_csv(s_x);
      } else {
        Matrix xcov = s_xcov.empty() ? Matrix(Matrix::Identity(s_p, s_p))
                                     : parse_inline_matrix(s_xcov);
        s_p = params.p();
        if (xcov.rows() != s_p) xcov = Matrix::Identity(s_p, s_p);
        msar::Rng rng = msar::Rng::stream(s_seed, 0x58'00000000ULL);
        const Matrix L = Eigen::LLT<Matrix>(xcov).matrixL();
        X.resize(w.size(), s_p);
        Vector z(s_p);
        for (Index i = 0; i < X.rows(); ++i) {
          for (Index c = 0; c < s_p; ++c) z(c) = rng.normal();
          X.row(i) = (L * z).transpose();
        }
      }
      msar::ErrorLaw law;
      law.Sigma_e = params.Sigma_e;
      law.df = s_df;
      if (s_law == "gaussian")
        law.kind = msar::ErrorLaw::Kind::gaussian;
      else if (s_law == "student_t")
        law.kind = msar::ErrorLaw::Kind::student_t;
      else if (s_law == "none")
        law.kind = msar::ErrorLaw::Kind::none;
      else
        throw UserError("unknown error law: " + s_law);
      const auto data = msar::simulate(params, w, X, law, s_seed);
      msar::io::write_dataset_csv(s_out, data);
      return kExitOk;
    }

    if (cmd_fit->parsed()) {
      require_file(f_data);
      require_file(f_weights);
      const auto data = msar::io::read_dataset_csv(f_data);
      auto w = msar::io::read_matrix_market(f_weights);
      if (!w.normalized()) w = msar::row_normalize(w, msar::IslandPolicy::error);
      const auto fit = msar::fit(data, w, f_opts);
      emit_json(fit_to_json(fit, data.p(), data.q()), f_out);
      if (!f_mu_out.empty()) {
        std::vector<std::string> header;
        for (Index j = 0; j < data.q(); ++j) header.push_back("mu" + std::to_string(j + 1));
        msar::io::write_matrix_csv(f_mu_out, header,
                                   msar::unvec(fit.mu_tilde, data.n(), data.q()));
      }
      if (!fit.converged && !f_allow) {
        std::cerr << "fit did not converge (grad_norm=" << fit.grad_norm << ")\n";
        return kExitNumerical;
      }
      return kExitOk;
    }

    if (cmd_sel->parsed()) {
      SelectionRun run;
      try {
        run = run_selection_pipeline(sel_data, sel_weights, sel_omega, sel_fopts, sel_allow);
      } catch (const UserError&) {
        throw;
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
      }
      Json j;
      j["candidates"] = criteria_to_json(run);
      j["selected"] = static_cast<int>(msar::select(run.criteria)) + 1;
      j["omega_source"] = run.omega.source_candidate + 1;
      j["omega_fallback"] = run.omega.fallback_used;
      emit_json(j, sel_out);
      return kExitOk;
    }

    if (cmd_avg->parsed()) {
      SelectionRun run;
      msar::WeightVector sol;
      try {
        run = run_selection_pipeline(avg_data, avg_weights, avg_omega, sel_fopts, avg_allow);
        const auto prob = msar::build_problem(run.fits, run.data, run.criteria);
        sol = msar::solve_simplex_qp(prob);
      } catch (const UserError&) {
        throw;
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
      }
      Json j;
      j["weights"] = std::vector<double>(sol.w.data(), sol.w.data() + sol.w.size());
      j["objective"] = sol.objective;
      j["kkt_residual"] = sol.kkt_residual;
      j["candidates"] = criteria_to_json(run);
      j["omega_source"] = run.omega.source_candidate + 1;
      emit_json(j, avg_out);
      if (!avg_mu_out.empty()) {
        const auto [mu, w_avg] = msar::averaged_estimates(sol, run.fits, run.candidates);
        (void)w_avg;
        std::vector<std::string> header;
        for (Index j2 = 0; j2 < run.data.q(); ++j2)
          header.push_back("mu" + std::to_string(j2 + 1));
        msar::io::write_matrix_csv(avg_mu_out, header,
                                   msar::unvec(mu, run.data.n(), run.data.q()));
      }
      return kExitOk;
    }

    if (cmd_exp->parsed()) {
      require_file(e_config);
      auto cfg = msar::config_from_json(msar::io::read_json_file(e_config));
      if (e_reps > 0) cfg.replications = e_reps;
      if (e_seed >= 0) cfg.seed = static_cast<std::uint64_t>(e_seed);
      if (e_threads > 0) cfg.threads = e_threads;
      std::filesystem::create_directories(e_out_dir);
      std::vector<msar::ReplicationResult> reps;
      msar::SummaryTable table;
      try {
        table = msar::run_experiment(cfg, e_keep_reps ? &reps : nullptr);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
      }
      const auto dir = std::filesystem::path(e_out_dir);
      msar::write_summary_csv((dir / "summary.csv").string(), table);
      if (e_keep_reps)
        msar::write_replications_csv((dir / "replications.csv").string(), cfg, reps);
      msar::io::write_json_file((dir / "meta.json").string(),
                                msar::meta_json(cfg, !e_no_meta_time));
      return kExitOk;
    }

    if (cmd_split->parsed()) {
      require_file(sp_data);
      for (const auto& p : sp_weights) require_file(p);
      const auto data = msar::io::read_dataset_csv(sp_data);
      std::vector<msar::SpatialWeights> cands;
      for (const auto& p : sp_weights)
        cands.push_back(msar::io::read_matrix_market(p));
      sp_opts.omega_source = sp_omega - 1;
      msar::SplitEvalResult res;
      try {
        res = msar::split_evaluate(data, cands, sp_opts);
      } catch (const std::invalid_argument&) {
        throw;
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
      }
      Json rows = Json::array();
      auto vec_json = [](const Vector& v) {
        return std::vector<double>(v.data(), v.data() + v.size());
      };
      for (const auto& r : res.rows) {
        Json j;
        j["split"] = r.split;
        j["selected"] = r.selected_k + 1;
        j["weights"] = vec_json(r.weights);
        j["ms_train_mse"] = vec_json(r.ms_train_mse);
        j["ms_test_mse"] = vec_json(r.ms_test_mse);
        j["ma_train_mse"] = vec_json(r.ma_train_mse);
        j["ma_test_mse"] = vec_json(r.ma_test_mse);
        j["islands_train"] = r.islands_train;
        j["islands_test"] = r.islands_test;
        rows.push_back(std::move(j));
      }
      Json j;
      j["splits"] = std::move(rows);
      emit_json(j, sp_out);
      return kExitOk;
    }
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUserError;
  }
  return kExitUserError;
}
