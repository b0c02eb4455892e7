#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "../als.hpp"
#include "../mu.hpp"

namespace cpfuse::harness {

enum class Scenario { similar_factors, shared_component, compressed, gamma_coupling, sampling_rates, warm_cold };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::similar_factors: return "similar_factors";
    case Scenario::shared_component: return "shared_component";
    case Scenario::compressed: return "compressed";
    case Scenario::gamma_coupling: return "gamma_coupling";
    case Scenario::sampling_rates: return "sampling_rates";
    case Scenario::warm_cold: return "warm_cold";
  }
  return "?";
}

inline Scenario scenario_from_string(const std::string& s) {
  for (auto v : {Scenario::similar_factors, Scenario::shared_component, Scenario::compressed,
                 Scenario::gamma_coupling, Scenario::sampling_rates, Scenario::warm_cold})
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown scenario '" + s + "'");
}

/// Variants of the sampling-rate scenario.
enum class SamplingVariant { snr_sweep, l_sweep, coarse_grid };

inline const char* to_string(SamplingVariant v) {
  switch (v) {
    case SamplingVariant::snr_sweep: return "snr_sweep";
    case SamplingVariant::l_sweep: return "l_sweep";
    case SamplingVariant::coarse_grid: return "coarse_grid";
  }
  return "?";
}

/// Everything one Monte-Carlo run needs. Field names double as JSON keys.
struct ExperimentConfig {
  Scenario scenario = Scenario::similar_factors;
  SamplingVariant variant = SamplingVariant::snr_sweep;

  Index I = 10, J = 10, K = 10;
  Index Ip = 10, Jp = 10, Kp = 10;
  Index R = 3;

  double sigma_n = 0.1;
  double sigma_np = 0.001;
  double sigma_c = 0.1;
  double sigma_c_hard = 1e-4;
  std::vector<Index> coupled_cols;

  /// Swept quantity; its meaning depends on the scenario (see sweep_name()).
  std::vector<double> sweep;

  // Tweedie scenario.
  double beta = 2.0, beta_p = 2.0, beta_c = 2.0;
  double phi = 0.5, phi_p = 0.05, phi_c = 0.05;
  double collinearity = 0.99997;

  // Sampled sinusoids and interpolation kernels.
  std::vector<double> frequencies{2.05, 2.55, 3.5};
  double duration = 4.0;
  /// Interpolation grid size; the grid step is duration / L.
  Index L = 100;
  /// "signal": kernel period = duration; "literal": (L-1) * step.
  std::string kernel_period = "signal";
  /// SNR of the noisy tensor in the coarse-grid variant.
  double snr_p_db = -5.61;
  /// When false the coarse-grid variant uses sigma_np as given.
  bool noise_from_snr = true;
  Index fine_grid = 5000;

  // Compression.
  std::array<Index, 3> ranks{5, 5, 5};
  int bench_iters = 50;

  std::size_t trials = 20;
  std::uint64_t seed = 1;
  unsigned threads = 0;  ///< 0: hardware concurrency
  /// Draw the deterministic factors once and keep them across trials.
  bool fixed_truth = false;

  AlsConfig als;
  MuConfig mu;

  std::string csv_path;
  std::string summary_path;
  std::string json_path;

  std::string sweep_name() const {
    switch (scenario) {
      case Scenario::similar_factors: return "inv_sigma_c";
      case Scenario::compressed: return "snr_db";
      case Scenario::sampling_rates:
        return variant == SamplingVariant::snr_sweep ? "snr_diff_db"
               : variant == SamplingVariant::l_sweep ? "L"
                                                     : "sigma_c";
      case Scenario::gamma_coupling: return "phi";
      default: return "sigma_c";
    }
  }

  void validate() const {
    if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
    if (sweep.empty()) throw std::invalid_argument("config: sweep grid must be nonempty");
    if (R < 1) throw std::invalid_argument("config: R must be >= 1");
    if (!(sigma_n > 0) || !(sigma_np > 0) || !(sigma_c > 0))
      throw std::invalid_argument("config: noise and coupling levels must be positive");
    if (kernel_period != "signal" && kernel_period != "literal")
      throw std::invalid_argument("config: kernel_period must be 'signal' or 'literal'");
    if (fine_grid < 1000) throw std::invalid_argument("config: fine_grid must be >= 1000");
    als.validate();
    mu.validate();
  }
};

/// Scenario defaults at desk scale.
inline ExperimentConfig default_config(Scenario s) {
  ExperimentConfig c;
  c.scenario = s;
  switch (s) {
    case Scenario::similar_factors:
      c.sigma_n = 0.1;
      c.sigma_np = 0.001;
      c.sweep = {2, 5, 10, 20, 50, 100, 1e3, 1e4, 1e5, 2e5};
      c.trials = 100;
      c.fixed_truth = true;
      c.als.scaling = FactorScaling::first_row;
      break;
    case Scenario::shared_component:
      c.R = 2;
      c.sigma_n = c.sigma_np = 0.05;
      c.sigma_c = 0.001;
      c.coupled_cols = {0};
      c.sweep = {0.001};
      c.trials = 200;
      break;
    case Scenario::compressed:
      c.I = c.J = c.K = c.Ip = c.Jp = c.Kp = 100;
      c.R = 5;
      c.sigma_c = 1e-3;
      c.sigma_np = 0.0018;
      c.sweep = {4, 8, 12, 16, 20};
      c.trials = 10;
      break;
    case Scenario::gamma_coupling:
      c.sweep = {0.5};
      c.trials = 50;
      break;
    case Scenario::sampling_rates:
      c.K = 37;
      c.Kp = 53;
      c.sigma_np = 0.01;
      c.sigma_c = 0.15;
      c.sweep = {-20, -10, 0, 10, 20};
      c.trials = 50;
      break;
    case Scenario::warm_cold:
      c.sigma_n = 0.03;
      c.sigma_np = 0.01;
      c.sweep = {1e-3, 1e-2, 0.1, 1.0};
      c.trials = 100;
      c.als.restarts = 1;
      break;
  }
  return c;
}

/// Applies the variant-specific defaults of the sampling-rate scenario.
inline void apply_sampling_variant(ExperimentConfig& c, SamplingVariant v) {
  c.variant = v;
  if (v == SamplingVariant::l_sweep) {
    c.sigma_n = c.sigma_np = 0.1;
    c.sweep = {5, 15, 25, 37, 45, 53, 65, 75};
  } else if (v == SamplingVariant::coarse_grid) {
    // Odd sample counts keep the Dirichlet kernel periodic.
    c.K = 25;
    c.Kp = 37;
    c.frequencies = {3.22, 3.47, 3.73};
    c.sigma_n = 0.001;
    c.sweep = {0.15};
  }
}

namespace detail {

inline std::string scaling_name(FactorScaling s) { return s == FactorScaling::l2 ? "l2" : "first_row"; }
inline std::string update_name(UpdateMode u) { return u == UpdateMode::joint ? "joint" : "sequential"; }

template <class T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["scenario"] = to_string(c.scenario);
  j["variant"] = to_string(c.variant);
  j["dims"] = {c.I, c.J, c.K};
  j["dims_p"] = {c.Ip, c.Jp, c.Kp};
  j["R"] = c.R;
  j["sigma_n"] = c.sigma_n;
  j["sigma_np"] = c.sigma_np;
  j["sigma_c"] = c.sigma_c;
  j["sigma_c_hard"] = c.sigma_c_hard;
  j["coupled_cols"] = c.coupled_cols;
  j["sweep"] = c.sweep;
  j["sweep_name"] = c.sweep_name();
  j["beta"] = c.beta;
  j["beta_p"] = c.beta_p;
  j["beta_c"] = c.beta_c;
  j["phi"] = c.phi;
  j["phi_p"] = c.phi_p;
  j["phi_c"] = c.phi_c;
  j["collinearity"] = c.collinearity;
  j["frequencies"] = c.frequencies;
  j["duration"] = c.duration;
  j["L"] = c.L;
  j["kernel_period"] = c.kernel_period;
  j["snr_p_db"] = c.snr_p_db;
  j["noise_from_snr"] = c.noise_from_snr;
  j["fine_grid"] = c.fine_grid;
  j["ranks"] = c.ranks;
  j["bench_iters"] = c.bench_iters;
  j["trials"] = c.trials;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["fixed_truth"] = c.fixed_truth;
  j["als"] = {{"k_max", c.als.k_max},
              {"delta_min", c.als.delta_min},
              {"restarts", c.als.restarts},
              {"warm_start", c.als.warm_start},
              {"warm_iters", c.als.warm_iters},
              {"update_mode", detail::update_name(c.als.update_mode)},
              {"hard_threshold", c.als.hard_threshold},
              {"scaling", detail::scaling_name(c.als.scaling)}};
  j["mu"] = {{"k_max", c.mu.k_max},         {"delta_min", c.mu.delta_min},
             {"restarts", c.mu.restarts},   {"epsilon", c.mu.epsilon},
             {"warm_start", c.mu.warm_start}, {"warm_iters", c.mu.warm_iters}};
  j["output"] = {{"csv", c.csv_path}, {"summary", c.summary_path}, {"json", c.json_path}};
  return j;
}

/// Builds a config from JSON: scenario defaults first, then every key present
/// in `j`. Unknown keys are rejected so typos do not pass silently.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "scenario", "variant", "dims", "dims_p", "R", "sigma_n", "sigma_np", "sigma_c", "sigma_c_hard",
      "coupled_cols", "sweep", "sweep_name", "beta", "beta_p", "beta_c", "phi", "phi_p", "phi_c",
      "collinearity", "frequencies", "duration", "L", "kernel_period", "snr_p_db",
      "noise_from_snr", "fine_grid", "ranks", "bench_iters", "trials", "seed", "threads",
      "fixed_truth", "als", "mu", "output"};
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("config: unknown key '" + key + "'");
  if (!j.contains("scenario")) throw std::invalid_argument("config: 'scenario' is required");

  ExperimentConfig c = default_config(scenario_from_string(j.at("scenario").get<std::string>()));
  if (j.contains("variant")) {
    const auto v = j.at("variant").get<std::string>();
    if (v == "snr_sweep") apply_sampling_variant(c, SamplingVariant::snr_sweep);
    else if (v == "l_sweep") apply_sampling_variant(c, SamplingVariant::l_sweep);
    else if (v == "coarse_grid") apply_sampling_variant(c, SamplingVariant::coarse_grid);
    else throw std::invalid_argument("config: unknown variant '" + v + "'");
  }
  if (j.contains("dims")) {
    const auto d = j.at("dims").get<std::vector<Index>>();
    if (d.size() != 3) throw std::invalid_argument("config: dims needs three entries");
    c.I = d[0], c.J = d[1], c.K = d[2];
  }
  if (j.contains("dims_p")) {
    const auto d = j.at("dims_p").get<std::vector<Index>>();
    if (d.size() != 3) throw std::invalid_argument("config: dims_p needs three entries");
    c.Ip = d[0], c.Jp = d[1], c.Kp = d[2];
  }
  using detail::take;
  take(j, "R", c.R);
  take(j, "sigma_n", c.sigma_n);
  take(j, "sigma_np", c.sigma_np);
  take(j, "sigma_c", c.sigma_c);
  take(j, "sigma_c_hard", c.sigma_c_hard);
  take(j, "coupled_cols", c.coupled_cols);
  take(j, "sweep", c.sweep);
  take(j, "beta", c.beta);
  take(j, "beta_p", c.beta_p);
  take(j, "beta_c", c.beta_c);
  take(j, "phi", c.phi);
  take(j, "phi_p", c.phi_p);
  take(j, "phi_c", c.phi_c);
  take(j, "collinearity", c.collinearity);
  take(j, "frequencies", c.frequencies);
  take(j, "duration", c.duration);
  take(j, "L", c.L);
  take(j, "kernel_period", c.kernel_period);
  take(j, "snr_p_db", c.snr_p_db);
  take(j, "noise_from_snr", c.noise_from_snr);
  take(j, "fine_grid", c.fine_grid);
  take(j, "ranks", c.ranks);
  take(j, "bench_iters", c.bench_iters);
  take(j, "trials", c.trials);
  take(j, "seed", c.seed);
  take(j, "threads", c.threads);
  take(j, "fixed_truth", c.fixed_truth);
  if (j.contains("als")) {
    const auto& a = j.at("als");
    take(a, "k_max", c.als.k_max);
    take(a, "delta_min", c.als.delta_min);
    take(a, "restarts", c.als.restarts);
    take(a, "warm_start", c.als.warm_start);
    take(a, "warm_iters", c.als.warm_iters);
    take(a, "hard_threshold", c.als.hard_threshold);
    if (a.contains("update_mode")) {
      const auto u = a.at("update_mode").get<std::string>();
      if (u != "joint" && u != "sequential")
        throw std::invalid_argument("config: update_mode must be 'joint' or 'sequential'");
      c.als.update_mode = u == "joint" ? UpdateMode::joint : UpdateMode::sequential;
    }
    if (a.contains("scaling")) {
      const auto s = a.at("scaling").get<std::string>();
      if (s != "l2" && s != "first_row")
        throw std::invalid_argument("config: scaling must be 'l2' or 'first_row'");
      c.als.scaling = s == "l2" ? FactorScaling::l2 : FactorScaling::first_row;
    }
  }
  if (j.contains("mu")) {
    const auto& m = j.at("mu");
    take(m, "k_max", c.mu.k_max);
    take(m, "delta_min", c.mu.delta_min);
    take(m, "restarts", c.mu.restarts);
    take(m, "epsilon", c.mu.epsilon);
    take(m, "warm_start", c.mu.warm_start);
    take(m, "warm_iters", c.mu.warm_iters);
  }
  if (j.contains("output")) {
    const auto& o = j.at("output");
    take(o, "csv", c.csv_path);
    take(o, "summary", c.summary_path);
    take(o, "json", c.json_path);
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  return config_from_json(nlohmann::json::parse(in, nullptr, true, true));
}

}  // namespace cpfuse::harness
