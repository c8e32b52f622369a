#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "vqid/errors.hpp"
#include "vqid/prob.hpp"

// I-projection onto a transportation polytope: minimize D(mu || rho) over
// nonnegative a-by-b matrices mu with prescribed row sums p and column sums
// w. Zero entries of rho are hard support constraints. Solved by iterative
// proportional fitting (alternating I-projection onto the row- and
// column-margin sets), which converges geometrically for feasible supports.

namespace vqid {

struct TransportResult {
  double value = kInf;        // min D(mu || rho), +inf when infeasible
  std::vector<double> plan;   // row-major a*b minimizer; empty when infeasible
  bool feasible = false;
  int iterations = 0;
  double margin_residual = 0.0;
};

namespace detail {

// Gale/Hall feasibility on the support graph: margins (p, w) can be carried
// iff for every row subset A, p(A) <= w(N(A)). Exponential in the number of
// positive rows, which is tiny here (alphabet-sized).
inline bool margins_feasible(const std::vector<double>& p, const std::vector<double>& w,
                             const std::vector<double>& rho, std::size_t a, std::size_t b) {
  std::vector<std::size_t> rows;
  for (std::size_t x = 0; x < a; ++x)
    if (p[x] > 0.0) rows.push_back(x);
  if (rows.size() > 20) return true;  // too many to enumerate; let IPF decide
  const double tol = 1e-12;
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << rows.size()); ++mask) {
    double pa = 0.0;
    std::vector<char> hit(b, 0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!(mask & (std::uint64_t{1} << r))) continue;
      std::size_t x = rows[r];
      pa += p[x];
      for (std::size_t z = 0; z < b; ++z)
        if (rho[x * b + z] > 0.0) hit[z] = 1;
    }
    double wn = 0.0;
    for (std::size_t z = 0; z < b; ++z)
      if (hit[z]) wn += w[z];
    if (pa > wn + tol) return false;
  }
  return true;
}

}  // namespace detail

inline TransportResult min_divergence_transport(const std::vector<double>& p,
                                                const std::vector<double>& w,
                                                const std::vector<double>& rho, std::size_t a,
                                                std::size_t b, double tol = 1e-10,
                                                int max_iter = 100000) {
  if (p.size() != a || w.size() != b || rho.size() != a * b)
    throw ConfigError("min_divergence_transport: dimension mismatch");
  TransportResult res;

  // Support screening: a positive margin with an all-zero rho row/column can
  // never be matched.
  for (std::size_t x = 0; x < a; ++x) {
    if (p[x] <= 0.0) continue;
    bool any = false;
    for (std::size_t z = 0; z < b; ++z) any = any || rho[x * b + z] > 0.0;
    if (!any) return res;
  }
  for (std::size_t z = 0; z < b; ++z) {
    if (w[z] <= 0.0) continue;
    bool any = false;
    for (std::size_t x = 0; x < a; ++x) any = any || (p[x] > 0.0 && rho[x * b + z] > 0.0);
    if (!any) return res;
  }
  if (!detail::margins_feasible(p, w, rho, a, b)) return res;

  // IPF on the restricted support. Start from rho itself (any positive
  // scaling gives the same projection).
  std::vector<double> mu(a * b, 0.0);
  for (std::size_t x = 0; x < a; ++x)
    for (std::size_t z = 0; z < b; ++z)
      if (p[x] > 0.0 && w[z] > 0.0) mu[x * b + z] = rho[x * b + z];

  const double margin_tol = std::min(tol, 1e-10);
  double resid = kInf;
  int it = 0;
  for (; it < max_iter; ++it) {
    // Scale rows to p.
    for (std::size_t x = 0; x < a; ++x) {
      double s = 0.0;
      for (std::size_t z = 0; z < b; ++z) s += mu[x * b + z];
      if (s > 0.0) {
        double f = p[x] / s;
        for (std::size_t z = 0; z < b; ++z) mu[x * b + z] *= f;
      }
    }
    // Scale columns to w; then measure how far rows have drifted.
    for (std::size_t z = 0; z < b; ++z) {
      double s = 0.0;
      for (std::size_t x = 0; x < a; ++x) s += mu[x * b + z];
      if (s > 0.0) {
        double f = w[z] / s;
        for (std::size_t x = 0; x < a; ++x) mu[x * b + z] *= f;
      }
    }
    resid = 0.0;
    for (std::size_t x = 0; x < a; ++x) {
      double s = 0.0;
      for (std::size_t z = 0; z < b; ++z) s += mu[x * b + z];
      resid += std::abs(s - p[x]);
    }
    if (resid < margin_tol) break;
  }
  if (resid >= margin_tol && !(resid < 1e-6))
    throw SolverError("min_divergence_transport: IPF residual " + std::to_string(resid) +
                          " after " + std::to_string(max_iter) + " iterations",
                      resid);

  double val = 0.0;
  for (std::size_t i = 0; i < a * b; ++i) val += xlogxy(mu[i], rho[i]);
  res.value = val;
  res.plan = std::move(mu);
  res.feasible = true;
  res.iterations = it + 1;
  res.margin_residual = resid;
  return res;
}

}  // namespace vqid
