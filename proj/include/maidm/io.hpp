#pragma once

// Files exchanged between commands: posterior draws, diagnostics, summaries
// and simulation outputs.

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "maidm/csv.hpp"
#include "maidm/diagnostics.hpp"
#include "maidm/error.hpp"
#include "maidm/mcmc.hpp"
#include "maidm/simulate.hpp"

namespace maidm {

/// `chain,draw,<names...>`, constrained values, one row per stored draw.
inline void write_draws_csv(const PosteriorSamples& s, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << "chain,draw";
  for (const auto& n : s.names) out << ',' << n;
  out << '\n';
  for (std::size_t c = 0; c < s.num_chains; ++c)
    for (std::size_t d = 0; d < s.num_draws; ++d) {
      out << c << ',' << d;
      for (std::size_t p = 0; p < s.dim; ++p) out << ',' << csv::fmt(s.at(c, d, p));
      out << '\n';
    }
  csv::finish(out, path);
}

/// Reads a draws file. Chains must be numbered 0..C-1 with equal draw counts.
inline PosteriorSamples read_draws_csv(const std::filesystem::path& path) {
  const auto tab = csv::read(path);
  if (tab.header.size() < 3 || tab.header[0] != "chain" || tab.header[1] != "draw")
    throw InvalidArgument(tab.source + ": draws header must start with 'chain,draw' and name at least one parameter");
  if (tab.rows.empty()) throw InvalidArgument(tab.source + ": no draws");
  PosteriorSamples s;
  s.names.assign(tab.header.begin() + 2, tab.header.end());
  s.dim = s.names.size();
  std::vector<std::vector<double>> by_chain;
  for (std::size_t r = 0; r < tab.rows.size(); ++r) {
    const double cf = tab.number(r, 0);
    if (!(cf >= 0.0) || cf != std::floor(cf))
      throw InvalidArgument(tab.source + ":" + std::to_string(tab.line_numbers[r]) + ": bad chain index");
    const auto c = static_cast<std::size_t>(cf);
    if (c >= by_chain.size()) by_chain.resize(c + 1);
    for (std::size_t p = 0; p < s.dim; ++p) {
      const double v = tab.number(r, p + 2);
      if (!std::isfinite(v))
        throw InvalidArgument(tab.source + ":" + std::to_string(tab.line_numbers[r]) + ": non-finite draw");
      by_chain[c].push_back(v);
    }
  }
  s.num_chains = by_chain.size();
  s.num_draws = by_chain.front().size() / s.dim;
  for (const auto& ch : by_chain)
    if (ch.size() != s.num_draws * s.dim || ch.empty())
      throw InvalidArgument(tab.source + ": chains have unequal draw counts");
  for (const auto& ch : by_chain) s.values.insert(s.values.end(), ch.begin(), ch.end());
  s.chains.resize(s.num_chains);
  return s;
}

inline nlohmann::json number_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

inline nlohmann::json diagnostics_json(const PosteriorSamples& s, const PosteriorSummary& sum, double rhat_threshold) {
  nlohmann::json j;
  j["sampler"] = to_string(s.kind);
  j["master_seed"] = s.master_seed;
  j["num_chains"] = s.num_chains;
  j["draws_per_chain"] = s.num_draws;
  j["rhat_threshold"] = rhat_threshold;
  j["max_rhat"] = sum.max_rhat();
  bool ok = true;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& r : sum.rows) {
    const bool bad = r.degenerate || !(r.rhat <= rhat_threshold);
    ok = ok && !bad;
    params.push_back({{"name", r.name},
                      {"rhat", number_or_null(r.rhat)},
                      {"ess_bulk", number_or_null(r.ess_bulk)},
                      {"ess_tail", number_or_null(r.ess_tail)},
                      {"degenerate", r.degenerate},
                      {"flagged", bad}});
  }
  j["parameters"] = params;
  j["converged"] = ok;
  nlohmann::json chains = nlohmann::json::array();
  for (std::size_t c = 0; c < s.chains.size(); ++c) {
    const auto& ci = s.chains[c];
    nlohmann::json blocks = nlohmann::json::array();
    for (std::size_t b = 0; b < ci.block_accept.size(); ++b)
      blocks.push_back({{"block", b < s.block_names.size() ? s.block_names[b] : std::to_string(b)},
                        {"accept_rate", ci.block_accept[b]},
                        {"scale", ci.block_scale[b]}});
    std::ostringstream h1, h2;
    h1 << std::hex << ci.proposal_hash_frozen;
    h2 << std::hex << ci.proposal_hash_final;
    chains.push_back({{"chain", c},
                      {"seed", ci.seed},
                      {"blocks", blocks},
                      {"proposal_hash_frozen", h1.str()},
                      {"proposal_hash_final", h2.str()},
                      {"non_finite_proposals", ci.non_finite_proposals},
                      {"divergences", ci.divergences}});
  }
  j["chains"] = chains;
  nlohmann::json corr = nlohmann::json::array();
  for (int i = 0; i < 5; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < 5; ++k) row.push_back(sum.theta_corr(i, k));
    corr.push_back(row);
  }
  j["theta_correlation"] = {{"names", {"v0", "s0", "T", "alpha", "beta"}}, {"matrix", corr}};
  return j;
}

/// parameter,mean,sd,q05,q95,rhat,ess_bulk
inline std::string summary_csv(const PosteriorSummary& sum) {
  std::string out = "parameter,mean,sd,q05,q95,rhat,ess_bulk\n";
  auto num = [](double x) { return std::isfinite(x) ? csv::fmt(x) : std::string("nan"); };
  for (const auto& r : sum.rows)
    out += r.name + "," + num(r.mean) + "," + num(r.sd) + "," + num(r.q05) + "," + num(r.q95) + "," + num(r.rhat) +
           "," + num(r.ess_bulk) + "\n";
  return out;
}

/// Posterior means laid out one row per parameter group: v0..beta, sigma_eps,
/// sigma_k, ell. The ell cell reads "<seconds> (<samples>)" at step dt.
inline std::string table_i_csv(const PosteriorSummary& sum, double dt) {
  std::vector<std::string> groups;
  auto has = [&](const std::string& n) {
    for (const auto& r : sum.rows)
      if (r.name == n) return true;
    return false;
  };
  if (has("v0")) groups.push_back("");
  for (std::size_t d = 0; has("v0[" + std::to_string(d) + "]"); ++d) groups.push_back("[" + std::to_string(d) + "]");
  if (has("v0_pop")) groups.push_back("_pop");
  std::ostringstream os;
  os << "group,v0,s0,T,alpha,beta,sigma_eps,sigma_k,ell\n";
  auto cell = [&](const std::string& n) { return has(n) ? csv::fmt(sum.row(n).mean) : std::string(); };
  for (const auto& g : groups) {
    const std::string label = g.empty() ? "pooled" : (g == "_pop" ? "population" : "driver" + g);
    os << label;
    for (const char* n : kThetaNames) os << ',' << cell(std::string(n) + g);
    // Noise columns are per driver (unpooled) or shared.
    const std::string nsfx = has("sigma_eps" + g) ? g : "";
    os << ',' << cell("sigma_eps" + nsfx) << ',' << cell("sigma_k" + nsfx) << ',';
    if (has("ell" + nsfx)) {
      const double ell = sum.row("ell" + nsfx).mean;
      std::ostringstream e;
      e.setf(std::ios::fixed);
      e.precision(2);
      e << ell << " (" << ell / dt << ")";
      os << e.str();
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Simulation outputs

inline void write_replicate_csv(const Trajectory& tr, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << "t,a,v,s,x\n";
  for (std::size_t k = 0; k < tr.size(); ++k)
    out << csv::fmt(tr.t[k]) << ',' << csv::fmt(tr.a[k]) << ',' << csv::fmt(tr.v[k]) << ',' << csv::fmt(tr.s[k]) << ','
        << csv::fmt(tr.x[k]) << '\n';
  csv::finish(out, path);
}

inline std::string replicate_file_name(std::size_t r) {
  std::ostringstream os;
  os << "replicate_";
  os.width(5);
  os.fill('0');
  os << r << ".csv";
  return os.str();
}

/// Directory layout: replicates.csv (replicate,param_index,seed,collided,steps)
/// plus one replicate_NNNNN.csv per replicate.
inline void write_sim_replicates(const SimOutput& sim, const std::filesystem::path& dir) {
  std::ostringstream man;
  man << "replicate,param_index,seed,collided,steps,mode,dt\n";
  for (std::size_t r = 0; r < sim.replicates.size(); ++r) {
    const auto& rep = sim.replicates[r];
    man << r << ',' << rep.param_index << ',' << rep.seed << ',' << (rep.traj.collided ? 1 : 0) << ','
        << rep.traj.size() << ',' << to_string(sim.mode) << ',' << csv::fmt(sim.dt) << '\n';
    write_replicate_csv(rep.traj, dir / replicate_file_name(r));
  }
  csv::write_text(dir / "replicates.csv", man.str());
}

inline SimOutput read_sim_replicates(const std::filesystem::path& dir) {
  const auto man = csv::read(dir / "replicates.csv");
  const auto cr = man.column("replicate"), cp = man.column("param_index"), cs = man.column("seed"),
             cc = man.column("collided"), cm = man.column("mode"), cd = man.column("dt");
  if (man.rows.empty()) throw InvalidArgument(man.source + ": no replicates");
  SimOutput sim;
  sim.mode = sim_mode_from_string(man.rows[0][cm]);
  sim.dt = man.number(0, cd);
  for (std::size_t r = 0; r < man.rows.size(); ++r) {
    const auto idx = static_cast<std::size_t>(man.number(r, cr));
    const auto tab = csv::read(dir / replicate_file_name(idx));
    static const char* cols[] = {"t", "a", "v", "s", "x"};
    for (const char* c : cols)
      if (tab.find(c) < 0)
        throw InvalidArgument(tab.source + ": missing channel column '" + std::string(c) + "'");
    SimReplicate rep;
    rep.param_index = static_cast<std::size_t>(man.number(r, cp));
    rep.seed = std::stoull(man.rows[r][cs]);
    rep.traj.dt = sim.dt;
    rep.traj.collided = man.number(r, cc) != 0.0;
    const auto ct = tab.column("t"), ca = tab.column("a"), cv = tab.column("v"), cs2 = tab.column("s"),
               cx = tab.column("x");
    for (std::size_t k = 0; k < tab.rows.size(); ++k) {
      rep.traj.t.push_back(tab.number(k, ct));
      rep.traj.a.push_back(tab.number(k, ca));
      rep.traj.v.push_back(tab.number(k, cv));
      rep.traj.s.push_back(tab.number(k, cs2));
      rep.traj.x.push_back(tab.number(k, cx));
    }
    if (rep.traj.collided) rep.traj.collision_step = rep.traj.size();
    sim.steps = std::max(sim.steps, rep.traj.size());
    sim.replicates.push_back(std::move(rep));
  }
  return sim;
}

inline void write_envelope_csv(const SimOutput& sim, Channel c, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << "t,q025,q25,q50,q75,q975\n";
  for (const auto& row : quantile_envelope(sim, c)) {
    out << csv::fmt(row[0]);
    for (std::size_t q = 1; q < 6; ++q) out << ',' << csv::fmt(row[q]);
    out << '\n';
  }
  csv::finish(out, path);
}

inline void write_parameter_sets_csv(const std::vector<ParameterSet>& sets, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << "index,draw,v0,s0,T,alpha,beta,sigma_eps,sigma_k,ell\n";
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto& p = sets[i];
    out << i << ',' << p.draw << ',' << csv::fmt(p.theta.v0) << ',' << csv::fmt(p.theta.s0) << ','
        << csv::fmt(p.theta.T) << ',' << csv::fmt(p.theta.alpha) << ',' << csv::fmt(p.theta.beta) << ','
        << csv::fmt(p.sigma_eps) << ',' << (p.has_gp ? csv::fmt(p.sigma_k) : "") << ','
        << (p.has_gp ? csv::fmt(p.ell) : "") << '\n';
  }
  csv::finish(out, path);
}

}  // namespace maidm
