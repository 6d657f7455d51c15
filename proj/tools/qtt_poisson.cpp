// Experiment driver for the QTT Poisson pipeline.
//
//   qtt_poisson run <plan.json> [--d 3,4,5] [--eps 1e-8] [--oracle auto|force|off]
//                               [--out results.csv] [--seed N] [--plots dir]
//
// Exit codes: 0 full success, 2 when some (d, eps) cells failed, 1 for
// configuration or usage errors.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <qtt/config_io.hpp>
#include <qtt/experiment.hpp>

namespace
{
  void apply_overrides(qtt::ExperimentPlan& plan, const std::vector<int>& d_override,
                       const std::vector<double>& eps_override)
  {
    if (!d_override.empty())
    {
      for (std::size_t k = 0; k < d_override.size(); ++k)
      {
        if (d_override[k] < 1)
          throw qtt::config_error("--d values must be >= 1");
        if (k > 0 && d_override[k] <= d_override[k - 1])
          throw qtt::config_error("--d values must be strictly increasing");
      }
      plan.d_values = d_override;
    }
    if (!eps_override.empty())
    {
      for (double e : eps_override)
        if (!(e > 0.0))
          throw qtt::config_error("--eps values must be positive");
      plan.eps_values = eps_override;
    }
  }
}

int main(int argc, char** argv)
{
  CLI::App app{ "QTT Poisson solver experiment driver" };
  app.require_subcommand(1);

  CLI::App* run = app.add_subcommand("run", "run an experiment plan and emit a CSV");
  std::string plan_path;
  std::vector<int> d_override;
  std::vector<double> eps_override;
  std::string oracle = "auto";
  std::string out_override;
  std::string plots_dir;
  std::uint64_t seed = 0;
  run->add_option("plan", plan_path, "experiment plan file (JSON)")->required();
  run->add_option("--d", d_override, "override the plan's d list")->delimiter(',');
  run->add_option("--eps", eps_override, "override the plan's eps list")->delimiter(',');
  run->add_option("--oracle", oracle, "dense oracle mode: auto, force, or off");
  run->add_option("--out", out_override, "override the CSV output path (empty writes to stdout)");
  CLI::Option* seed_opt = run->add_option("--seed", seed, "override the enrichment seed");
  run->add_option("--plots", plots_dir, "also write plot-data files into this directory");

  try
  {
    app.parse(argc, argv);
  }
  catch (const CLI::ParseError& e)
  {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try
  {
    qtt::ExperimentPlan plan = qtt::load_experiment_plan(plan_path);
    apply_overrides(plan, d_override, eps_override);
    if (seed_opt->count() > 0)
      plan.seed = seed;
    if (run->count("--out") > 0)
      plan.output_path = out_override;
    const qtt::OracleMode mode = qtt::parse_oracle_mode(oracle);

    const qtt::ExperimentReport report = qtt::run_plan(plan, mode, &std::cerr);
    const std::string csv = qtt::to_csv(report);
    if (plan.output_path.empty())
      std::cout << csv;
    else
    {
      std::ofstream out(plan.output_path);
      if (!out)
        throw qtt::config_error("cannot write output file " + plan.output_path);
      out << csv;
    }
    if (!plots_dir.empty())
    {
      const qtt::DomainConfig cfg = qtt::load_domain_config(plan.config_path);
      qtt::write_plot_data(report, int(cfg.quads.size()), plots_dir);
    }
    return report.any_failure ? 2 : 0;
  }
  catch (const std::exception& e)
  {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
