#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "scenarios.hpp"

namespace cpfuse::harness {

inline constexpr const char* kVersion = "0.1.0";

struct SummaryRow {
  std::string method;
  std::string sweep_name;
  double sweep_value = 0.0;
  std::size_t sweep_index = 0;
  std::size_t ok = 0, failed = 0;
  std::array<MeanCi, 6> mse;  ///< A, B, C, A', B', C'
  MeanCi recon_C, recon_Cp;
  double mean_objective = kNaN;
  double mean_runtime_s = 0.0;
};

struct RunResult {
  ExperimentConfig config;
  std::vector<ResultRow> rows;
  std::vector<SummaryRow> summary;
  double wall_seconds = 0.0;
};

/// Mean and CI per (sweep point, method), in sweep then method order.
inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  std::map<std::pair<std::size_t, std::string>, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) groups[{r.sweep_index, r.method}].push_back(&r);
  std::vector<SummaryRow> out;
  for (const auto& [key, g] : groups) {
    SummaryRow s;
    s.method = key.second;
    s.sweep_index = key.first;
    s.sweep_name = g.front()->sweep_name;
    s.sweep_value = g.front()->sweep_value;
    std::array<std::vector<double>, 6> se;
    std::vector<double> rc, rcp;
    double obj = 0.0, rt = 0.0;
    for (const ResultRow* r : g) {
      rt += r->runtime_s;
      if (r->status != "ok") {
        ++s.failed;
        continue;
      }
      ++s.ok;
      for (std::size_t f = 0; f < 6; ++f) se[f].push_back(r->se[f]);
      if (!std::isnan(r->recon_C)) rc.push_back(r->recon_C);
      if (!std::isnan(r->recon_Cp)) rcp.push_back(r->recon_Cp);
      obj += r->objective;
    }
    for (std::size_t f = 0; f < 6; ++f) s.mse[f] = mean_ci(se[f]);
    s.recon_C = mean_ci(rc);
    s.recon_Cp = mean_ci(rcp);
    if (s.ok) s.mean_objective = obj / static_cast<double>(s.ok);
    s.mean_runtime_s = rt / static_cast<double>(g.size());
    out.push_back(std::move(s));
  }
  return out;
}

/// Runs every trial of `cfg`. Each trial owns an RNG stream derived from the
/// seed, the scenario name and the trial index, so the rows do not depend on
/// the thread count.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const RunContext run = make_run_context(cfg);
  std::vector<std::vector<ResultRow>> per_trial(cfg.trials);
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::string first_error;

  auto worker = [&] {
    for (std::size_t t; (t = next.fetch_add(1)) < cfg.trials;) {
      Rng rng = derive_rng(cfg.seed, to_string(cfg.scenario), t);
      try {
        per_trial[t] = run_trial(cfg, run, t, rng);
      } catch (const std::exception& e) {
        // Data generation failed before any solver ran.
        std::lock_guard lk(err_mu);
        if (first_error.empty()) first_error = e.what();
      }
    }
  };
  unsigned n = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  n = static_cast<unsigned>(std::min<std::size_t>(n, cfg.trials));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  if (!first_error.empty()) throw std::runtime_error("run_experiment: " + first_error);

  RunResult res;
  res.config = cfg;
  for (auto& v : per_trial)
    for (auto& r : v) res.rows.push_back(std::move(r));
  std::stable_sort(res.rows.begin(), res.rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.sweep_index, a.trial) < std::tie(b.sweep_index, b.trial);
  });
  res.summary = summarize(res.rows);
  res.wall_seconds = detail::seconds_since(t0);
  return res;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << text;
}

}  // namespace detail

/// Per-trial rows. Runtime is left out so reruns are byte-identical.
inline std::string rows_csv(const std::vector<ResultRow>& rows) {
  using detail::fmt;
  std::ostringstream os;
  os << "scenario,method,sweep_name,sweep_value,trial,se_A,se_B,se_C,se_Ap,se_Bp,se_Cp,"
        "se_C_coupled,se_C_uncoupled,se_Cp_coupled,se_Cp_uncoupled,recon_C,recon_Cp,"
        "objective,iterations,termination,status\n";
  for (const auto& r : rows) {
    os << r.scenario << ',' << r.method << ',' << r.sweep_name << ',' << fmt(r.sweep_value) << ','
       << r.trial;
    for (double v : r.se) os << ',' << fmt(v);
    os << ',' << fmt(r.se_C_coupled) << ',' << fmt(r.se_C_uncoupled) << ',' << fmt(r.se_Cp_coupled)
       << ',' << fmt(r.se_Cp_uncoupled) << ',' << fmt(r.recon_C) << ',' << fmt(r.recon_Cp) << ','
       << fmt(r.objective) << ',' << r.iterations << ',' << r.termination << ','
       << detail::csv_field(r.status) << '\n';
  }
  return os.str();
}

inline std::string summary_csv(const std::vector<SummaryRow>& summary) {
  using detail::fmt;
  std::ostringstream os;
  os << "method,sweep_name,sweep_value,ok,failed";
  for (const char* f : {"A", "B", "C", "Ap", "Bp", "Cp"}) os << ",mse_" << f << ",ci_" << f;
  os << ",recon_C,recon_Cp,mean_objective\n";
  for (const auto& s : summary) {
    os << s.method << ',' << s.sweep_name << ',' << fmt(s.sweep_value) << ',' << s.ok << ',' << s.failed;
    for (const auto& m : s.mse) os << ',' << fmt(s.ok ? m.mean : kNaN) << ',' << fmt(s.ok ? m.half_width : kNaN);
    os << ',' << fmt(s.recon_C.n ? s.recon_C.mean : kNaN) << ',' << fmt(s.recon_Cp.n ? s.recon_Cp.mean : kNaN)
       << ',' << fmt(s.mean_objective) << '\n';
  }
  return os.str();
}

inline nlohmann::json manifest(const RunResult& r) {
  nlohmann::json j;
  j["version"] = kVersion;
  j["config"] = to_json(r.config);
  j["seed"] = r.config.seed;
  j["rows"] = r.rows.size();
  j["wall_seconds"] = r.wall_seconds;
  auto& rt = j["runtime_by_method"] = nlohmann::json::object();
  for (const auto& s : r.summary) rt[s.method][detail::fmt(s.sweep_value)] = s.mean_runtime_s;
  std::size_t failed = 0;
  for (const auto& row : r.rows) failed += row.status != "ok";
  j["failed_rows"] = failed;
  return j;
}

/// Writes whichever of the configured output paths are set.
inline void write_outputs(const RunResult& r) {
  if (!r.config.csv_path.empty()) detail::write_file(r.config.csv_path, rows_csv(r.rows));
  if (!r.config.summary_path.empty()) detail::write_file(r.config.summary_path, summary_csv(r.summary));
  if (!r.config.json_path.empty()) detail::write_file(r.config.json_path, manifest(r).dump(2) + "\n");
}

/// Mean over trials of the cold/warm final objective ratio at each sweep point.
inline std::vector<double> cold_warm_ratio(const std::vector<ResultRow>& rows, std::size_t points) {
  std::vector<double> sum(points, 0.0), cnt(points, 0.0);
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> pairs;
  for (const auto& r : rows) {
    if (r.status != "ok") continue;
    auto& p = pairs.try_emplace({r.sweep_index, r.trial}, kNaN, kNaN).first->second;
    (r.method == "warm" ? p.first : p.second) = r.objective;
  }
  for (const auto& [key, p] : pairs) {
    if (std::isnan(p.first) || std::isnan(p.second) || key.first >= points) continue;
    sum[key.first] += p.second / p.first;
    cnt[key.first] += 1;
  }
  for (std::size_t i = 0; i < points; ++i) sum[i] = cnt[i] ? sum[i] / cnt[i] : kNaN;
  return sum;
}

/// Mean of a row quantity over the ok rows of one method at one sweep point.
inline double mean_of(const std::vector<ResultRow>& rows, const std::string& method, std::size_t sweep_index,
                      const std::function<double(const ResultRow&)>& get) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (r.method == method && r.sweep_index == sweep_index && r.status == "ok") {
      s += get(r);
      ++n;
    }
  return n ? s / static_cast<double>(n) : kNaN;
}

}  // namespace cpfuse::harness
