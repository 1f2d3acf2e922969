#pragma once

// Convergence diagnostics and posterior summaries.
//
// R-hat is the rank-normalized split statistic: every chain is split in half,
// draws are replaced by normal scores of their pooled ranks, and the larger of
// the bulk value and the value for the folded draws |x - median| is reported.
// ESS uses the multi-chain autocorrelation estimate truncated by Geyer's
// initial monotone sequence.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <Eigen/Core>

#include "maidm/error.hpp"
#include "maidm/idm.hpp"
#include "maidm/mcmc.hpp"

namespace maidm {

using Chains = std::vector<std::vector<double>>;

inline constexpr std::size_t kMinDiagnosticDraws = 100;

namespace detail {

inline void check_chains(const Chains& chains, const char* who) {
  if (chains.size() < 2) throw InvalidArgument(std::string(who) + ": need at least 2 chains");
  const std::size_t n = chains.front().size();
  if (n < kMinDiagnosticDraws)
    throw InvalidArgument(std::string(who) + ": need at least " + std::to_string(kMinDiagnosticDraws) + " draws per chain");
  for (const auto& c : chains)
    if (c.size() != n) throw InvalidArgument(std::string(who) + ": chains differ in length");
}

inline bool any_chain_constant(const Chains& chains) {
  for (const auto& c : chains) {
    const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
    if (*lo == *hi) return true;
  }
  return false;
}

inline Chains split_chains(const Chains& chains) {
  Chains out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

/// Normal scores of pooled average ranks: Phi^-1((r - 3/8) / (S + 1/4)).
inline Chains rank_normalize(const Chains& chains) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t i = 0; i < chains[c].size(); ++i) all.emplace_back(chains[c][i], c * chains[c].size() + i);
  std::sort(all.begin(), all.end());
  const double s = static_cast<double>(all.size());
  std::vector<double> rank(all.size());
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j + 1 < all.size() && all[j + 1].first == all[i].first) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[all[k].second] = r;
    i = j + 1;
  }
  const boost::math::normal_distribution<double> nd;
  Chains out = chains;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t i = 0; i < chains[c].size(); ++i)
      out[c][i] = boost::math::quantile(nd, (rank[c * chains[c].size() + i] - 0.375) / (s + 0.25));
  return out;
}

// Accumulates offsets from the first value, so a constant sample is exact.
inline double mean_of(const std::vector<double>& x) {
  const double ref = x.front();
  double s = 0.0;
  for (double v : x) s += v - ref;
  return ref + s / static_cast<double>(x.size());
}

inline double var_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// Classic potential scale reduction over the given (already split) chains.
inline double rhat_basic(const Chains& chains) {
  const auto n = static_cast<double>(chains.front().size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    means.push_back(mean_of(c));
    vars.push_back(var_of(c));
  }
  const double w = mean_of(vars);
  const double b = n * var_of(means);
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

/// Multi-chain ESS over the given chains (no splitting or ranking here).
inline double ess_basic(const Chains& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = mean_of(chains[c]);
    vars[c] = var_of(chains[c]);
  }
  const double w = mean_of(vars);
  const double nd = static_cast<double>(n);
  const double var_plus = (nd - 1.0) / nd * w + (m > 1 ? var_of(means) : 0.0);
  if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();

  // Biased per-chain autocovariance at lag t, averaged over chains.
  auto acov = [&](std::size_t t) {
    double tot = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i + t < n; ++i) s += (chains[c][i] - means[c]) * (chains[c][i + t] - means[c]);
      tot += s / nd;
    }
    return tot / static_cast<double>(m);
  };
  // rho_t = 1 - (W - mean biased acov_t) / var_plus
  auto rho_t = [&](std::size_t t) { return 1.0 - (w - acov(t)) / var_plus; };

  // Geyer initial positive and monotone sequence over pairs (rho_{2k} + rho_{2k+1}).
  double sum_pairs = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  double rho_even = 1.0;
  std::size_t t = 0;
  for (; t + 1 < n; t += 2) {
    const double rho_odd = rho_t(t + 1);
    double pair = rho_even + rho_odd;
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    sum_pairs += pair;
    prev_pair = pair;
    if (t + 2 >= n) break;
    rho_even = rho_t(t + 2);
  }
  const double tau = -1.0 + 2.0 * sum_pairs;
  const double total = static_cast<double>(m) * nd;
  const double tau_floor = 1.0 / std::log10(total);
  return total / std::max(tau, tau_floor);
}

}  // namespace detail

/// NaN when any chain is constant (degenerate).
inline double rhat_bulk(const Chains& chains) {
  detail::check_chains(chains, "rhat");
  if (detail::any_chain_constant(chains)) return std::numeric_limits<double>::quiet_NaN();
  return detail::rhat_basic(detail::rank_normalize(detail::split_chains(chains)));
}

inline double rhat_tail(const Chains& chains) {
  detail::check_chains(chains, "rhat");
  if (detail::any_chain_constant(chains)) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(pooled.size() / 2), pooled.end());
  const double med = pooled[pooled.size() / 2];
  Chains folded = chains;
  for (auto& c : folded)
    for (auto& v : c) v = std::abs(v - med);
  if (detail::any_chain_constant(folded)) return std::numeric_limits<double>::quiet_NaN();
  return detail::rhat_basic(detail::rank_normalize(detail::split_chains(folded)));
}

/// Rank-normalized split R-hat: max(bulk, tail). NaN for degenerate chains.
inline double rhat(const Chains& chains) {
  const double b = rhat_bulk(chains), t = rhat_tail(chains);
  if (std::isnan(b) || std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  return std::max(b, t);
}

/// Bulk ESS (rank-normalized split chains). NaN for degenerate chains.
inline double ess_bulk(const Chains& chains) {
  detail::check_chains(chains, "ess");
  if (detail::any_chain_constant(chains)) return std::numeric_limits<double>::quiet_NaN();
  return detail::ess_basic(detail::rank_normalize(detail::split_chains(chains)));
}

/// ESS of the raw draws (split chains, no rank transform).
inline double ess(const Chains& chains) {
  detail::check_chains(chains, "ess");
  if (detail::any_chain_constant(chains)) return std::numeric_limits<double>::quiet_NaN();
  return detail::ess_basic(detail::split_chains(chains));
}

/// Minimum ESS of the 5% and 95% quantile indicators.
inline double ess_tail(const Chains& chains) {
  detail::check_chains(chains, "ess");
  if (detail::any_chain_constant(chains)) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  std::sort(pooled.begin(), pooled.end());
  double out = std::numeric_limits<double>::infinity();
  for (double p : {0.05, 0.95}) {
    const double q = pooled[static_cast<std::size_t>(std::floor(p * static_cast<double>(pooled.size() - 1)))];
    Chains ind = chains;
    for (auto& c : ind)
      for (auto& v : c) v = v <= q ? 1.0 : 0.0;
    if (detail::any_chain_constant(ind)) return std::numeric_limits<double>::quiet_NaN();
    out = std::min(out, detail::ess_basic(detail::split_chains(ind)));
  }
  return out;
}

/// Type-7 (linear interpolation) sample quantile.
inline double quantile(std::vector<double> x, double p) {
  if (x.empty()) throw InvalidArgument("quantile: empty sample");
  std::sort(x.begin(), x.end());
  const double h = p * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

struct ParamSummary {
  std::string name;
  double mean = 0.0, sd = 0.0, q05 = 0.0, q50 = 0.0, q95 = 0.0;
  double rhat = std::numeric_limits<double>::quiet_NaN();
  double ess_bulk = std::numeric_limits<double>::quiet_NaN();
  double ess_tail = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;  ///< some chain is constant, or too few chains/draws for R-hat
};

struct PosteriorSummary {
  std::vector<ParamSummary> rows;
  /// Pearson correlation of (v0, s0, T, alpha, beta), averaged over every
  /// group present (the pooled vector, or each driver's theta_d).
  Eigen::Matrix<double, 5, 5> theta_corr = Eigen::Matrix<double, 5, 5>::Identity();
  std::vector<Eigen::Matrix<double, 5, 5>> theta_corr_groups;
  std::vector<std::string> theta_groups;  ///< "" for pooled names, else the driver suffix "[d]"

  const ParamSummary& row(const std::string& name) const {
    for (const auto& r : rows)
      if (r.name == name) return r;
    throw InvalidArgument("summary has no parameter '" + name + "'");
  }
  double max_rhat() const {
    double m = 0.0;
    for (const auto& r : rows)
      if (!std::isnan(r.rhat)) m = std::max(m, r.rhat);
    return m;
  }
};

/// Pearson correlation matrix among the given columns of the pooled draws.
inline Eigen::MatrixXd sample_correlation(const PosteriorSamples& s, const std::vector<std::size_t>& cols) {
  const auto k = static_cast<Eigen::Index>(cols.size());
  const std::size_t total = s.num_chains * s.num_draws;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(total), k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto col = s.pooled(cols[static_cast<std::size_t>(j)]);
    for (std::size_t i = 0; i < total; ++i) x(static_cast<Eigen::Index>(i), j) = col[i];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  Eigen::MatrixXd cov = x.transpose() * x;
  Eigen::VectorXd sd = cov.diagonal().cwiseSqrt();
  Eigen::MatrixXd corr(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      corr(i, j) = (sd[i] > 0.0 && sd[j] > 0.0) ? cov(i, j) / (sd[i] * sd[j]) : (i == j ? 1.0 : 0.0);
  return corr;
}

inline PosteriorSummary summarize(const PosteriorSamples& s) {
  if (s.num_draws == 0 || s.num_chains == 0) throw InvalidArgument("summarize: no draws");
  PosteriorSummary out;
  const bool diag_ok = s.num_chains >= 2 && s.num_draws >= kMinDiagnosticDraws;
  for (std::size_t p = 0; p < s.dim; ++p) {
    ParamSummary r;
    r.name = s.names[p];
    const auto all = s.pooled(p);
    r.mean = detail::mean_of(all);
    r.sd = all.size() > 1 ? std::sqrt(std::max(0.0, detail::var_of(all))) : 0.0;
    r.q05 = quantile(all, 0.05);
    r.q50 = quantile(all, 0.5);
    r.q95 = quantile(all, 0.95);
    if (diag_ok) {
      const auto ch = s.per_chain(p);
      r.rhat = rhat(ch);
      r.ess_bulk = ess_bulk(ch);
      r.ess_tail = ess_tail(ch);
      r.degenerate = std::isnan(r.rhat);
    } else {
      r.degenerate = true;
    }
    out.rows.push_back(std::move(r));
  }

  // Theta groups: plain names first, else every "[d]" suffix.
  auto find = [&](const std::string& n) -> std::ptrdiff_t {
    const auto it = std::find(s.names.begin(), s.names.end(), n);
    return it == s.names.end() ? -1 : it - s.names.begin();
  };
  std::vector<std::string> suffixes;
  if (find("v0") >= 0) {
    suffixes.push_back("");
  } else {
    for (std::size_t d = 0;; ++d) {
      const std::string sfx = "[" + std::to_string(d) + "]";
      if (find("v0" + sfx) < 0) break;
      suffixes.push_back(sfx);
    }
  }
  Eigen::Matrix<double, 5, 5> acc = Eigen::Matrix<double, 5, 5>::Zero();
  for (const auto& sfx : suffixes) {
    std::vector<std::size_t> cols;
    for (const char* n : kThetaNames) {
      const auto i = find(std::string(n) + sfx);
      if (i < 0) throw InvalidArgument("summarize: missing theta column '" + std::string(n) + sfx + "'");
      cols.push_back(static_cast<std::size_t>(i));
    }
    const Eigen::Matrix<double, 5, 5> c = sample_correlation(s, cols);
    out.theta_corr_groups.push_back(c);
    out.theta_groups.push_back(sfx);
    acc += c;
  }
  if (!suffixes.empty()) out.theta_corr = acc / static_cast<double>(suffixes.size());
  return out;
}

}  // namespace maidm
