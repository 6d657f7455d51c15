#pragma once

//! File loading for domain configurations, source descriptors, and experiment
//! plans.  Both file kinds are JSON (comments allowed).
//!
//! Domain config schema:
//!   quads:      [[[x,y],[x,y],[x,y],[x,y]], ...]   vertices counterclockwise
//!   interfaces: [{"m":0,"p":1,"kind":"side","side_m":"right","side_p":"top","reversed":true},
//!                {"m":1,"p":2,"kind":"vertex","corner_m":"LB","corner_p":"RT"}]
//!   dirichlet:  {"0":["bottom","left"], ...}
//!
//! Plan schema:
//!   config: path (relative paths resolve against the plan file's directory)
//!   d: [3,4,5], eps: [1e-8], rhs: source descriptor,
//!   solver: {"tol":1e-8,"max_sweeps":50}, output: csv path, seed: integer
//!
//! Source descriptor: {"kind":"constant","value":c} or
//! {"kind":"polynomial","terms":[[px,py,coeff],...]} with total degree <= 4.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qtt/assembly.hpp"
#include "qtt/coupling.hpp"
#include "qtt/errors.hpp"

namespace qtt
{
  struct ExperimentPlan
  {
    std::string config_path;
    std::vector<int> d_values;        // strictly increasing
    std::vector<double> eps_values;   // positive rounding tolerances
    SourceSpec rhs = SourceSpec::constant_source(1.0);
    double solver_tol = 1e-8;
    int solver_max_sweeps = 50;
    std::string output_path;          // empty writes the CSV to stdout
    std::uint64_t seed = 0;
  };

  namespace detail
  {
    inline nlohmann::json parse_json_file(const std::string& path, const char* what)
    {
      std::ifstream in(path);
      if (!in)
        throw config_error(std::string(what) + ": cannot open " + path);
      try
      {
        return nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
      }
      catch (const nlohmann::json::exception& e)
      {
        throw config_error(std::string(what) + " " + path + ": " + e.what());
      }
    }

    inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                             const char* what)
    {
      for (auto it = j.begin(); it != j.end(); ++it)
      {
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](const char* k) { return it.key() == k; });
        if (!known)
          throw config_error(std::string(what) + ": unknown key \"" + it.key() + "\"");
      }
    }

    inline std::string lower(std::string s)
    {
      std::transform(s.begin(), s.end(), s.begin(),
                     [](unsigned char c) { return char(std::tolower(c)); });
      return s;
    }

    inline double json_number(const nlohmann::json& j, const char* what)
    {
      if (!j.is_number())
        throw config_error(std::string(what) + ": expected a number");
      return j.get<double>();
    }

    inline int json_int(const nlohmann::json& j, const char* what)
    {
      if (!j.is_number_integer())
        throw config_error(std::string(what) + ": expected an integer");
      return j.get<int>();
    }
  }

  inline SourceSpec parse_source(const nlohmann::json& j)
  {
    if (!j.is_object())
      throw config_error("source: expected an object");
    detail::require_keys(j, { "kind", "value", "terms" }, "source");
    const std::string kind = j.value("kind", std::string("constant"));
    if (kind == "constant")
    {
      if (j.contains("terms"))
        throw config_error("source: constant kind takes no terms");
      return SourceSpec::constant_source(j.contains("value") ? detail::json_number(j.at("value"), "source value") : 1.0);
    }
    if (kind == "polynomial")
    {
      if (j.contains("value"))
        throw config_error("source: polynomial kind takes no value");
      if (!j.contains("terms") || !j.at("terms").is_array())
        throw config_error("source: polynomial kind needs a terms array");
      std::vector<SourceSpec::Term> terms;
      for (const auto& t : j.at("terms"))
      {
        if (!t.is_array() || t.size() != 3)
          throw config_error("source: each polynomial term is [px, py, coeff]");
        SourceSpec::Term term;
        term.px = detail::json_int(t[0], "term px");
        term.py = detail::json_int(t[1], "term py");
        term.coeff = detail::json_number(t[2], "term coeff");
        if (term.px < 0 || term.py < 0 || term.px + term.py > kMaxSourceDegree)
          throw config_error("source: term degree out of range (total degree <= "
                             + std::to_string(kMaxSourceDegree) + ")");
        terms.push_back(term);
      }
      return SourceSpec::polynomial_source(std::move(terms));
    }
    throw config_error("source: unknown kind \"" + kind + "\" (constant or polynomial)");
  }

  inline DomainConfig parse_domain_config(const nlohmann::json& j)
  {
    if (!j.is_object())
      throw config_error("domain config: expected a JSON object");
    detail::require_keys(j, { "quads", "interfaces", "dirichlet" }, "domain config");
    if (!j.contains("quads") || !j.at("quads").is_array() || j.at("quads").empty())
      throw config_error("domain config: quads must be a non-empty array");

    DomainConfig cfg;
    for (const auto& jq : j.at("quads"))
    {
      if (!jq.is_array() || jq.size() != 4)
        throw config_error("domain config: each quad lists exactly 4 vertices");
      Quadrangle q;
      for (int c = 0; c < 4; ++c)
      {
        const auto& jv = jq[std::size_t(c)];
        if (!jv.is_array() || jv.size() != 2)
          throw config_error("domain config: each vertex is [x, y]");
        q.v[std::size_t(c)] = Vector2d(detail::json_number(jv[0], "vertex x"),
                                       detail::json_number(jv[1], "vertex y"));
      }
      cfg.quads.push_back(q);
    }

    const int nq = int(cfg.quads.size());
    if (j.contains("interfaces"))
    {
      if (!j.at("interfaces").is_array())
        throw config_error("domain config: interfaces must be an array");
      for (const auto& ji : j.at("interfaces"))
      {
        if (!ji.is_object())
          throw config_error("domain config: each interface is an object");
        detail::require_keys(ji, { "m", "p", "kind", "side_m", "side_p", "reversed", "corner_m", "corner_p" },
                             "interface");
        InterfaceSpec spec;
        spec.a = detail::json_int(ji.at("m"), "interface m");
        spec.b = detail::json_int(ji.at("p"), "interface p");
        if (spec.a < 0 || spec.a >= nq || spec.b < 0 || spec.b >= nq)
          throw config_error("domain config: interface subdomain index out of range");
        const std::string kind = ji.value("kind", std::string());
        if (kind == "side")
        {
          if (ji.contains("corner_m") || ji.contains("corner_p"))
            throw config_error("domain config: side interface takes side_m/side_p, not corners");
          spec.vertex = false;
          spec.side_a = parse_side(detail::lower(ji.at("side_m").get<std::string>()));
          spec.side_b = parse_side(detail::lower(ji.at("side_p").get<std::string>()));
          spec.reversed = ji.value("reversed", false);
        }
        else if (kind == "vertex")
        {
          if (ji.contains("side_m") || ji.contains("side_p") || ji.contains("reversed"))
            throw config_error("domain config: vertex interface takes corner_m/corner_p only");
          spec.vertex = true;
          spec.vertex_a = parse_vertex(detail::lower(ji.at("corner_m").get<std::string>()));
          spec.vertex_b = parse_vertex(detail::lower(ji.at("corner_p").get<std::string>()));
        }
        else
          throw config_error("domain config: interface kind must be side or vertex");
        cfg.interfaces.push_back(spec);
      }
    }

    cfg.dirichlet.assign(std::size_t(nq), {});
    if (j.contains("dirichlet"))
    {
      if (!j.at("dirichlet").is_object())
        throw config_error("domain config: dirichlet must map subdomain index to side list");
      for (auto it = j.at("dirichlet").begin(); it != j.at("dirichlet").end(); ++it)
      {
        int m = -1;
        try
        {
          std::size_t used = 0;
          m = std::stoi(it.key(), &used);
          if (used != it.key().size())
            m = -1;
        }
        catch (const std::exception&)
        {
          m = -1;
        }
        if (m < 0 || m >= nq)
          throw config_error("domain config: dirichlet key \"" + it.key() + "\" is not a subdomain index");
        if (!it.value().is_array())
          throw config_error("domain config: dirichlet sides must be an array");
        for (const auto& js : it.value())
        {
          const Side s = parse_side(detail::lower(js.get<std::string>()));
          auto& sides = cfg.dirichlet[std::size_t(m)];
          if (std::find(sides.begin(), sides.end(), s) != sides.end())
            throw config_error("domain config: duplicate dirichlet side on subdomain " + it.key());
          sides.push_back(s);
        }
      }
    }
    return cfg;
  }

  inline DomainConfig load_domain_config(const std::string& path)
  {
    return parse_domain_config(detail::parse_json_file(path, "domain config"));
  }

  inline ExperimentPlan parse_experiment_plan(const nlohmann::json& j, const std::string& plan_dir)
  {
    if (!j.is_object())
      throw config_error("experiment plan: expected a JSON object");
    detail::require_keys(j, { "config", "d", "eps", "rhs", "solver", "output", "seed" }, "experiment plan");
    if (!j.contains("config") || !j.at("config").is_string())
      throw config_error("experiment plan: config path is required");

    ExperimentPlan p;
    const std::filesystem::path cfg(j.at("config").get<std::string>());
    p.config_path = cfg.is_absolute() || plan_dir.empty() ? cfg.string()
                                                          : (std::filesystem::path(plan_dir) / cfg).string();

    if (j.contains("d"))
    {
      if (!j.at("d").is_array())
        throw config_error("experiment plan: d must be an array");
      for (const auto& jd : j.at("d"))
        p.d_values.push_back(detail::json_int(jd, "plan d"));
    }
    for (std::size_t k = 0; k < p.d_values.size(); ++k)
    {
      if (p.d_values[k] < 1)
        throw config_error("experiment plan: d values must be >= 1");
      if (k > 0 && p.d_values[k] <= p.d_values[k - 1])
        throw config_error("experiment plan: d values must be strictly increasing");
    }

    if (j.contains("eps"))
    {
      if (!j.at("eps").is_array())
        throw config_error("experiment plan: eps must be an array");
      for (const auto& je : j.at("eps"))
      {
        const double e = detail::json_number(je, "plan eps");
        if (!(e > 0.0))
          throw config_error("experiment plan: eps values must be positive");
        p.eps_values.push_back(e);
      }
    }

    if (j.contains("rhs"))
      p.rhs = parse_source(j.at("rhs"));

    if (j.contains("solver"))
    {
      const auto& js = j.at("solver");
      if (!js.is_object())
        throw config_error("experiment plan: solver must be an object");
      detail::require_keys(js, { "tol", "max_sweeps" }, "plan solver");
      if (js.contains("tol"))
      {
        p.solver_tol = detail::json_number(js.at("tol"), "solver tol");
        if (!(p.solver_tol > 0.0))
          throw config_error("experiment plan: solver tol must be positive");
      }
      if (js.contains("max_sweeps"))
      {
        p.solver_max_sweeps = detail::json_int(js.at("max_sweeps"), "solver max_sweeps");
        if (p.solver_max_sweeps < 1)
          throw config_error("experiment plan: solver max_sweeps must be >= 1");
      }
    }

    if (j.contains("output"))
      p.output_path = j.at("output").get<std::string>();
    if (j.contains("seed"))
    {
      if (!j.at("seed").is_number_integer())
        throw config_error("experiment plan: seed must be an integer");
      p.seed = j.at("seed").get<std::uint64_t>();
    }
    return p;
  }

  inline ExperimentPlan load_experiment_plan(const std::string& path)
  {
    const auto j = detail::parse_json_file(path, "experiment plan");
    return parse_experiment_plan(j, std::filesystem::path(path).parent_path().string());
  }
}
