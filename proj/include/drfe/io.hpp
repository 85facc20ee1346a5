#pragma once

// JSON and CSV persistence. Doubles are written in shortest round-trip form
// (nlohmann's serializer for JSON, std::to_chars for CSV), so reading a file
// back reproduces every value bit for bit.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "drfe/ambiguity_dc.hpp"
#include "drfe/errors.hpp"
#include "drfe/fw_solver.hpp"
#include "drfe/grid_prob.hpp"
#include "drfe/pendulum.hpp"

namespace drfe {

using json = nlohmann::json;

class IoError : public Error {
 public:
  using Error::Error;
};

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError("cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(json& j, const GridPmf& p) {
  j = json{{"support", std::vector<std::int64_t>(p.support().begin(), p.support().end())},
           {"mass", std::vector<double>(p.mass().begin(), p.mass().end())}};
}

inline void from_json(const json& j, GridPmf& p) {
  p = GridPmf::from_masses(j.at("mass").get<std::vector<double>>(),
                           j.at("support").get<std::vector<std::int64_t>>());
}

inline void to_json(json& j, const ConditionalKernel& k) {
  json rows = json::array();
  for (std::size_t i = 0; i < k.rows(); ++i) {
    auto r = k.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  j = json{{"support", std::vector<std::int64_t>(k.support().begin(), k.support().end())},
           {"mass", std::move(rows)}};
}

inline void from_json(const json& j, ConditionalKernel& k) {
  auto support = j.at("support").get<std::vector<std::int64_t>>();
  std::vector<double> flat;
  for (const auto& row : j.at("mass")) {
    auto r = row.get<std::vector<double>>();
    if (r.size() != support.size()) throw IoError("kernel row length does not match support");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  k = ConditionalKernel::from_masses(std::move(support), std::move(flat));
}

inline json problem_to_json(const DcProblem& p) {
  return json{{"base", p.base()},
              {"rho", std::vector<double>(p.rho().begin(), p.rho().end())},
              {"eta", p.eta()},
              {"delta0", p.bounds().delta0},
              {"delta1", p.bounds().delta1}};
}

inline DcProblem problem_from_json(const json& j) {
  return DcProblem(j.at("base").get<GridPmf>(), j.at("rho").get<std::vector<double>>(),
                   AmbiguityBudget(j.at("eta").get<double>()),
                   RatioBounds{j.at("delta0").get<double>(), j.at("delta1").get<double>()});
}

inline json result_to_json(const SolveResult& r) {
  return json{{"r_star", std::vector<double>(r.r_star.values().begin(), r.r_star.values().end())},
              {"phi_star", r.phi_star},
              {"inner_max_value", r.inner_max_value},
              {"termination", to_string(r.trace.termination)},
              {"iterations", r.trace.records.empty() ? 0 : r.trace.records.back().n},
              {"start", r.start}};
}

// ---------------------------------------------------------------------------
// CSV

inline std::string trace_csv(const SolveTrace& t) {
  std::string s = "n,phi,omega,lambda,j,L,kl_residual,norm_residual\n";
  for (const auto& r : t.records) {
    s += std::to_string(r.n) + ',' + format_double(r.phi) + ',' + format_double(r.omega) + ',' +
         format_double(r.lambda) + ',' + std::to_string(r.j) + ',' + format_double(r.L) + ',' +
         format_double(r.kl_residual) + ',' + format_double(r.norm_residual) + '\n';
  }
  return s;
}

inline std::string worst_case_kl_csv(std::span<const double> values, std::size_t num_actions) {
  std::string s = "state_index,action_index,value\n";
  for (std::size_t cell = 0; cell < values.size(); ++cell) {
    s += std::to_string(cell / num_actions) + ',' + std::to_string(cell % num_actions) + ',' +
         format_double(values[cell]) + '\n';
  }
  return s;
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

/// Parses worst_case_kl.csv into a dense per-cell vector; every cell must appear exactly once.
inline std::vector<double> parse_worst_case_kl_csv(const std::string& text, std::size_t num_states,
                                                   std::size_t num_actions) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "state_index,action_index,value") {
    throw IoError("worst_case_kl.csv: unexpected header");
  }
  std::vector<double> values(num_states * num_actions, 0.0);
  std::vector<char> seen(values.size(), 0);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != 3) throw IoError("worst_case_kl.csv: line " + std::to_string(line_no) + " needs 3 fields");
    const double xs = parse_double(f[0]), us = parse_double(f[1]);
    if (xs < 0 || us < 0 || xs >= double(num_states) || us >= double(num_actions) ||
        xs != std::floor(xs) || us != std::floor(us)) {
      throw IoError("worst_case_kl.csv: line " + std::to_string(line_no) + " has an invalid cell index");
    }
    const std::size_t cell = static_cast<std::size_t>(xs) * num_actions + static_cast<std::size_t>(us);
    if (seen[cell]) throw IoError("worst_case_kl.csv: duplicate cell on line " + std::to_string(line_no));
    seen[cell] = 1;
    values[cell] = parse_double(f[2]);
  }
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) throw IoError("worst_case_kl.csv: missing cell " + std::to_string(c));
  }
  return values;
}

inline std::string trajectories_csv(const pendulum::TrajectoryStats& s) {
  std::string out = "step,theta_mean,theta_std,omega_mean,omega_std,u_mean,u_std\n";
  for (std::size_t k = 0; k < s.size(); ++k) {
    out += std::to_string(k) + ',' + format_double(s.theta_mean[k]) + ',' +
           format_double(s.theta_std[k]) + ',' + format_double(s.omega_mean[k]) + ',' +
           format_double(s.omega_std[k]) + ',' + format_double(s.u_mean[k]) + ',' +
           format_double(s.u_std[k]) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

/// worst_case_kl.csv and traces/cell_<state>_<action>.csv under dir.
inline void save_inner_solution(const std::filesystem::path& dir,
                                std::span<const double> worst_case_kl,
                                const std::vector<SolveTrace>& traces, std::size_t num_actions) {
  std::filesystem::create_directories(dir / "traces");
  write_file(dir / "worst_case_kl.csv", worst_case_kl_csv(worst_case_kl, num_actions));
  for (std::size_t cell = 0; cell < traces.size(); ++cell) {
    write_file(dir / "traces" /
                   ("cell_" + std::to_string(cell / num_actions) + "_" +
                    std::to_string(cell % num_actions) + ".csv"),
               trace_csv(traces[cell]));
  }
}

inline void save_policy(const std::filesystem::path& dir, const ConditionalKernel& policy) {
  std::filesystem::create_directories(dir);
  write_file(dir / "policy.json", json(policy).dump() + "\n");
}

inline ConditionalKernel load_policy(const std::filesystem::path& dir) {
  try {
    return json::parse(read_file(dir / "policy.json")).get<ConditionalKernel>();
  } catch (const json::exception& e) {
    throw IoError("policy.json: " + std::string(e.what()));
  }
}

}  // namespace drfe
