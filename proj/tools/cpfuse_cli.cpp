#include <cpfuse/cpfuse.hpp>
#include <cpfuse/harness/runner.hpp>

#if __has_include(<CLI/CLI.hpp>)
#include <CLI/CLI.hpp>
#else
#include "CLI11.hpp"
#endif

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace cpfuse;
using namespace cpfuse::harness;

namespace {

void save_matrix(const fs::path& path, const Matrix& M) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  io::write_matrix_csv(f, M);
}

Matrix matrix_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw std::invalid_argument(std::string("crb: '") + what + "' must be a nonempty array of rows");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = static_cast<Index>(j.at(0).size());
  Matrix M(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Index>(row.size()) != cols) throw std::invalid_argument(std::string("crb: ragged matrix '") + what + "'");
    for (Index c = 0; c < cols; ++c) M(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return M;
}

CrbScenario crb_from_json(const nlohmann::json& j) {
  CrbScenario s;
  const auto mode = j.value("mode", std::string("hybrid"));
  if (mode == "hybrid") s.mode = BoundMode::hybrid;
  else if (mode == "bayesian") s.mode = BoundMode::bayesian;
  else throw std::invalid_argument("crb: mode must be 'hybrid' or 'bayesian'");
  s.At = matrix_from_json(j.at("A_tilde"), "A_tilde");
  s.Bt = matrix_from_json(j.at("B_tilde"), "B_tilde");
  s.Apt = matrix_from_json(j.at("Ap_tilde"), "Ap_tilde");
  s.Bpt = matrix_from_json(j.at("Bp_tilde"), "Bp_tilde");
  s.Cp = matrix_from_json(j.at("Cp"), "Cp");
  s.H = j.contains("H") ? matrix_from_json(j.at("H"), "H") : Matrix::Identity(s.Cp.rows(), s.Cp.rows());
  s.sigma_c = j.at("sigma_c").get<double>();
  s.sigma_n = j.at("sigma_n").get<double>();
  s.sigma_np = j.at("sigma_np").get<double>();
  s.sigma_A = j.value("sigma_A", 0.0);
  s.sigma_B = j.value("sigma_B", 0.0);
  s.sigma_Ap = j.value("sigma_Ap", 0.0);
  s.sigma_Bp = j.value("sigma_Bp", 0.0);
  s.sigma_Cp = j.value("sigma_Cp", 0.0);
  return s;
}

void print_summary(const RunResult& r) {
  std::cout << std::left << std::setw(34) << "method" << std::setw(14) << r.config.sweep_name()
            << std::right << std::setw(6) << "ok" << std::setw(13) << "mse_C" << std::setw(13) << "mse_Cp"
            << std::setw(13) << "mse_A" << std::setw(12) << "runtime_s" << '\n';
  for (const auto& s : r.summary)
    std::cout << std::left << std::setw(34) << s.method << std::setw(14) << s.sweep_value << std::right
              << std::setw(6) << s.ok << std::setw(13) << std::setprecision(4) << s.mse[2].mean
              << std::setw(13) << s.mse[5].mean << std::setw(13) << s.mse[0].mean << std::setw(12)
              << s.mean_runtime_s << '\n';
  std::cout << "wall time " << std::setprecision(3) << r.wall_seconds << " s, " << r.rows.size() << " rows\n";
}

void set_outputs(ExperimentConfig& c, const std::string& out) {
  if (out.empty()) return;
  fs::create_directories(out);
  const std::string base = std::string(to_string(c.scenario)) +
                           (c.scenario == Scenario::sampling_rates ? std::string("_") + to_string(c.variant) : "");
  c.csv_path = (fs::path(out) / (base + "_rows.csv")).string();
  c.summary_path = (fs::path(out) / (base + "_summary.csv")).string();
  c.json_path = (fs::path(out) / (base + "_manifest.json")).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled CP decomposition of tensor pairs"};
  app.require_subcommand(1);

  // decompose ---------------------------------------------------------------
  auto* dec = app.add_subcommand("decompose", "factor a pair of tensors with a coupled model");
  std::string y_path, yp_path, out_prefix = "cpfuse";
  std::string solver = "als";
  Index rank = 3, rank_p = 0;
  double sn = 0.1, snp = 0.1, sc = 0.1;
  double beta = 2, beta_p = 2, beta_c = 2, phi = 1, phi_p = 1, phi_c = 1;
  bool hard = false;
  std::uint64_t seed = 1;
  int restarts = 5, k_max = -1;
  dec->add_option("Y", y_path, "first tensor (.ct3 binary or .csv)")->required()->check(CLI::ExistingFile);
  dec->add_option("Yp", yp_path, "second tensor")->required()->check(CLI::ExistingFile);
  dec->add_option("-R,--rank", rank, "rank of the first model");
  dec->add_option("--rank-p", rank_p, "rank of the second model (default: --rank)");
  dec->add_option("--solver", solver, "als (Gaussian) or mu (Tweedie)")->check(CLI::IsMember({"als", "mu"}));
  dec->add_option("--sigma-n", sn, "noise std-dev of Y");
  dec->add_option("--sigma-np", snp, "noise std-dev of Y'");
  dec->add_option("--sigma-c", sc, "coupling std-dev");
  dec->add_flag("--hard", hard, "exact coupling C = C'");
  dec->add_option("--beta", beta);
  dec->add_option("--beta-p", beta_p);
  dec->add_option("--beta-c", beta_c);
  dec->add_option("--phi", phi);
  dec->add_option("--phi-p", phi_p);
  dec->add_option("--phi-c", phi_c);
  dec->add_option("--restarts", restarts);
  dec->add_option("--iters", k_max, "iteration cap");
  dec->add_option("--seed", seed);
  dec->add_option("-o,--out", out_prefix, "output prefix for the factor CSV files");

  // simulate ----------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "run a Monte-Carlo scenario");
  std::string scenario, config_path, variant, out_dir;
  std::optional<std::uint64_t> sim_seed;
  std::optional<std::size_t> trials;
  unsigned threads = 0;
  sim->add_option("scenario", scenario, "similar_factors, shared_component, compressed, gamma_coupling, "
                                        "sampling_rates or warm_cold");
  sim->add_option("-c,--config", config_path, "JSON config")->check(CLI::ExistingFile);
  sim->add_option("--variant", variant, "sampling_rates variant")
      ->check(CLI::IsMember({"snr_sweep", "l_sweep", "coarse_grid"}));
  sim->add_option("--seed", sim_seed);
  sim->add_option("--trials", trials);
  sim->add_option("--threads", threads, "0: all cores");
  sim->add_option("-o,--out", out_dir, "output directory");

  // crb ---------------------------------------------------------------------
  auto* crb = app.add_subcommand("crb", "evaluate the Cramer-Rao-type bound of a scenario file");
  std::string crb_path, crb_out;
  crb->add_option("scenario", crb_path, "JSON scenario")->required()->check(CLI::ExistingFile);
  crb->add_option("-o,--out", crb_out, "write the full bound matrix as CSV");

  // bench-compress ----------------------------------------------------------
  auto* bench = app.add_subcommand("bench-compress", "time compressed vs uncompressed coupled ALS");
  Index size = 100, bench_rank = 5;
  int iters = 50;
  double snr = 4.0;
  std::uint64_t bench_seed = 1;
  bench->add_option("--size", size, "edge length of both cubic tensors");
  bench->add_option("-R,--rank", bench_rank);
  bench->add_option("--iters", iters, "coupled iterations timed");
  bench->add_option("--snr", snr, "SNR of Y in dB");
  bench->add_option("--seed", bench_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*dec) {
      CoupledProblem p{io::load_tensor(y_path), io::load_tensor(yp_path), GaussianNoise{sn}, GaussianNoise{snp},
                       HybridGaussianCoupling{}, rank, rank_p ? rank_p : rank};
      const Index K = p.Y.dim(2), Kp = p.Yp.dim(2);
      if (hard || solver == "als") {
        if (K != Kp) throw DimensionError("decompose: direct coupling needs equal third dimensions");
      }
      Rng rng(seed);
      CoupledSolution sol;
      if (solver == "als") {
        AlsConfig cfg;
        cfg.restarts = restarts;
        if (k_max > 0) cfg.k_max = k_max;
        p.coupling = hard ? CouplingSpec{HardCoupling::direct(K)} : CouplingSpec{HybridGaussianCoupling::direct(K, sc)};
        sol = coupled_als(p, cfg, rng);
      } else {
        MuConfig cfg;
        cfg.restarts = restarts;
        if (k_max > 0) cfg.k_max = k_max;
        p.noise = TweedieNoise{beta, phi};
        p.noise_p = TweedieNoise{beta_p, phi_p};
        p.coupling = TweedieCoupling{beta_c, phi_c};
        sol = coupled_mu(p, cfg, rng);
      }
      const char* names[] = {"A", "B", "C"};
      for (int f = 0; f < 3; ++f) {
        save_matrix(out_prefix + "_" + names[f] + ".csv", sol.model.factor(f));
        save_matrix(out_prefix + "_" + names[f] + "p.csv", sol.model_p.factor(f));
      }
      std::cout << "objective " << std::setprecision(10) << sol.trace.final_objective() << " after "
                << sol.trace.iterations << " iterations (" << to_string(sol.trace.termination) << ")\n";
    } else if (*sim) {
      ExperimentConfig c;
      if (!config_path.empty()) {
        c = load_config(config_path);
        if (!scenario.empty() && scenario_from_string(scenario) != c.scenario)
          throw std::invalid_argument("simulate: scenario argument disagrees with the config file");
      } else {
        if (scenario.empty()) throw std::invalid_argument("simulate: give a scenario or --config");
        c = default_config(scenario_from_string(scenario));
      }
      if (!variant.empty()) {
        const SamplingVariant v = variant == "l_sweep"       ? SamplingVariant::l_sweep
                                  : variant == "coarse_grid" ? SamplingVariant::coarse_grid
                                                             : SamplingVariant::snr_sweep;
        apply_sampling_variant(c, v);
      }
      if (sim_seed) c.seed = *sim_seed;
      if (trials) c.trials = *trials;
      if (threads) c.threads = threads;
      set_outputs(c, out_dir);
      const auto r = run_experiment(c);
      write_outputs(r);
      print_summary(r);
    } else if (*crb) {
      std::ifstream f(crb_path);
      const auto s = crb_from_json(nlohmann::json::parse(f, nullptr, true, true));
      const auto b = bound(s);
      const char* blocks[] = {"A~", "B~", "C", "A'~", "B'~", "C'"};
      for (int i = 0; i < 6; ++i) std::cout << "trace " << blocks[i] << ' ' << std::setprecision(8) << b.block_trace(i) << '\n';
      if (!crb_out.empty()) save_matrix(crb_out, b.matrix);
    } else if (*bench) {
      auto c = default_config(Scenario::compressed);
      c.I = c.J = c.K = c.Ip = c.Jp = c.Kp = size;
      c.R = bench_rank;
      c.ranks = {bench_rank, bench_rank, bench_rank};
      c.bench_iters = iters;
      c.sweep = {snr};
      c.trials = 1;
      c.seed = bench_seed;
      const auto r = run_experiment(c);
      print_summary(r);
      const double t_full = mean_of(r.rows, "coupled", 0, [](const ResultRow& x) { return x.runtime_s; });
      const double t_cmp = mean_of(r.rows, "coupled_compressed", 0, [](const ResultRow& x) { return x.runtime_s; });
      std::cout << "uncompressed " << t_full << " s, compressed " << t_cmp << " s, speedup " << t_full / t_cmp << "x\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
