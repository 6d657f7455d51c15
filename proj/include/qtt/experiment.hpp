#pragma once

//! Experiment driver: sweep (d, eps) cells over a domain configuration,
//! solve each coupled system, and collect energy, effective ranks, residuals,
//! and timings.  After the sweep the per-eps energy sequences are Richardson
//! extrapolated and every cell gets |E_d - E*| filled in.  Cell errors are
//! recorded as failure rows; they do not abort the plan.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "qtt/assembly.hpp"
#include "qtt/config_io.hpp"
#include "qtt/coupling.hpp"
#include "qtt/errors.hpp"
#include "qtt/solve.hpp"

namespace qtt
{
  enum class OracleMode
  {
    automatic,  // dense comparison whenever the system fits the guard
    force,      // always attempt it, a guard violation fails the cell
    off
  };

  inline OracleMode parse_oracle_mode(const std::string& s)
  {
    if (s == "auto")
      return OracleMode::automatic;
    if (s == "force")
      return OracleMode::force;
    if (s == "off")
      return OracleMode::off;
    throw config_error("oracle mode must be auto, force, or off");
  }

  struct CellResult
  {
    int d = 0;
    double eps = 0.0;
    bool ok = false;
    std::string error;  // failure description, empty on success
    double energy = std::numeric_limits<double>::quiet_NaN();
    double energy_err = std::numeric_limits<double>::quiet_NaN();  // |E_d - E*|, filled post-sweep
    double erank_B = std::numeric_limits<double>::quiet_NaN();
    double erank_g = std::numeric_limits<double>::quiet_NaN();
    double erank_u = std::numeric_limits<double>::quiet_NaN();
    double residual = std::numeric_limits<double>::quiet_NaN();
    int sweeps = 0;
    double oracle_dev = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
  };

  //! per-eps Richardson summary over the successful cells
  struct EpsSummary
  {
    double eps = 0.0;
    double e_star = 0.0;
    double observed_order = std::numeric_limits<double>::quiet_NaN();
    int levels = 0;  // consecutive d levels used; 0 means no extrapolation
  };

  struct ExperimentReport
  {
    std::vector<CellResult> rows;  // plan order: d outer, eps inner
    std::vector<EpsSummary> summaries;
    bool any_failure = false;
  };

  namespace detail
  {
    inline CellResult run_cell(const DomainConfig& cfg, const ExperimentPlan& plan, int d, double eps,
                               OracleMode oracle, std::ostream* log)
    {
      CellResult cell;
      cell.d = d;
      cell.eps = eps;
      const auto start = std::chrono::steady_clock::now();
      try
      {
        std::vector<TTMatrix> a_raw;
        std::vector<TTVector> f_raw;
        for (const Quadrangle& quad : cfg.quads)
        {
          SubdomainSystem sys = build_subdomain_system(quad, d, plan.rhs, eps);
          a_raw.push_back(std::move(sys.stiffness));
          f_raw.push_back(std::move(sys.load));
        }
        const CoupledSystem coupled = assemble_coupled(cfg, a_raw, f_raw, d, eps);

        SolveOptions opts;
        opts.tol = plan.solver_tol;
        opts.max_sweeps = plan.solver_max_sweeps;
        opts.seed = plan.seed;
        const SolveReport rep = tt_solve(coupled.op, coupled.rhs, opts);

        cell.erank_B = rep.erank_B;
        cell.erank_g = rep.erank_g;
        cell.erank_u = rep.erank_u;
        cell.residual = rep.residual;
        cell.sweeps = rep.sweeps;
        cell.energy = energy_quadratic(a_raw, split_solution(rep.u));

        const index_t rows = coupled.op.rows();
        const bool want_oracle = oracle == OracleMode::force
                                 || (oracle == OracleMode::automatic && rows <= kDenseSolveGuard);
        if (want_oracle)
        {
          const VectorXd ud = dense_solve(coupled.op, coupled.rhs);
          const VectorXd ut = to_dense(rep.u, rows);
          cell.oracle_dev = (ut - ud).norm() / ud.norm();
        }
        cell.ok = true;
      }
      catch (const std::exception& e)
      {
        cell.ok = false;
        cell.error = e.what();
        if (log)
          *log << "cell d=" << d << " eps=" << eps << " failed: " << e.what() << "\n";
      }
      cell.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      return cell;
    }
  }

  //! Run every (d, eps) cell of the plan.  Throws config_error for an invalid
  //! configuration; individual cell errors become failure rows instead.
  inline ExperimentReport run_plan(const ExperimentPlan& plan, OracleMode oracle = OracleMode::automatic,
                                   std::ostream* log = nullptr)
  {
    const DomainConfig cfg = load_domain_config(plan.config_path);
    validate_config(cfg);

    ExperimentReport report;
    for (int d : plan.d_values)
      for (double eps : plan.eps_values)
      {
        CellResult cell = detail::run_cell(cfg, plan, d, eps, oracle, log);
        report.any_failure = report.any_failure || !cell.ok;
        report.rows.push_back(std::move(cell));
      }

    // Richardson extrapolation per eps from the longest consecutive-d suffix
    for (double eps : plan.eps_values)
    {
      EpsSummary summary;
      summary.eps = eps;
      std::vector<int> ds;
      std::vector<double> energies;
      for (const CellResult& cell : report.rows)
        if (cell.ok && cell.eps == eps)
        {
          ds.push_back(cell.d);
          energies.push_back(cell.energy);
        }
      std::size_t first = ds.size();
      if (!ds.empty())
      {
        first = ds.size() - 1;
        while (first > 0 && ds[first - 1] + 1 == ds[first])
          --first;
      }
      const std::size_t levels = ds.size() - first;
      if (levels >= 2)
      {
        const RichardsonResult rich =
            richardson(std::vector<double>(energies.begin() + std::ptrdiff_t(first), energies.end()));
        summary.e_star = rich.e_star;
        summary.observed_order = rich.observed_order;
        summary.levels = int(levels);
        for (CellResult& cell : report.rows)
          if (cell.ok && cell.eps == eps && cell.d >= ds[first])
            cell.energy_err = std::abs(cell.energy - rich.e_star);
      }
      report.summaries.push_back(summary);
    }
    return report;
  }

  namespace detail
  {
    inline std::string csv_field(double v)
    {
      if (std::isnan(v))
        return {};
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return buf;
    }
  }

  inline constexpr const char* kCsvHeader = "d,eps,energy,energy_err,erank_B,erank_g,erank_u,residual,"
                                            "sweeps,oracle_dev,wall_ms";

  //! CSV in plan order; failure rows carry only d, eps, and the timing
  inline std::string to_csv(const ExperimentReport& report)
  {
    std::string out = kCsvHeader;
    out += '\n';
    for (const CellResult& c : report.rows)
    {
      char wall[40];
      std::snprintf(wall, sizeof wall, "%.3f", c.wall_ms);
      out += std::to_string(c.d);
      out += ',';
      out += detail::csv_field(c.eps);
      out += ',';
      if (c.ok)
      {
        out += detail::csv_field(c.energy);
        out += ',';
        out += detail::csv_field(c.energy_err);
        out += ',';
        out += detail::csv_field(c.erank_B);
        out += ',';
        out += detail::csv_field(c.erank_g);
        out += ',';
        out += detail::csv_field(c.erank_u);
        out += ',';
        out += detail::csv_field(c.residual);
        out += ',';
        out += std::to_string(c.sweeps);
        out += ',';
        out += detail::csv_field(c.oracle_dev);
      }
      else
        out += ",,,,,,,";
      out += ',';
      out += wall;
      out += '\n';
    }
    return out;
  }

  //! plot-data files (two columns, one block per parameter value):
  //! energy error and operator erank against vertex count, solution erank
  //! against eps
  inline void write_plot_data(const ExperimentReport& report, int subdomains, const std::string& dir)
  {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto vertices = [&](int d) { return double(subdomains) * std::pow(4.0, d); };

    std::ofstream err_file(fs::path(dir) / "energy_err_vs_vertices.dat");
    std::ofstream rank_v_file(fs::path(dir) / "erank_B_vs_vertices.dat");
    for (const EpsSummary& s : report.summaries)
    {
      err_file << "# eps " << detail::csv_field(s.eps) << "\n";
      rank_v_file << "# eps " << detail::csv_field(s.eps) << "\n";
      for (const CellResult& c : report.rows)
        if (c.ok && c.eps == s.eps)
        {
          if (!std::isnan(c.energy_err))
            err_file << vertices(c.d) << " " << c.energy_err << "\n";
          rank_v_file << vertices(c.d) << " " << c.erank_B << "\n";
        }
      err_file << "\n";
      rank_v_file << "\n";
    }

    std::ofstream rank_e_file(fs::path(dir) / "erank_u_vs_eps.dat");
    std::vector<int> ds;
    for (const CellResult& c : report.rows)
      if (c.ok && std::find(ds.begin(), ds.end(), c.d) == ds.end())
        ds.push_back(c.d);
    for (int d : ds)
    {
      rank_e_file << "# d " << d << "\n";
      for (const CellResult& c : report.rows)
        if (c.ok && c.d == d)
          rank_e_file << detail::csv_field(c.eps) << " " << c.erank_u << "\n";
      rank_e_file << "\n";
    }
  }
}
