#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "iolvm/graph.hpp"

namespace iolvm {

enum class SolverKind { Spp, TspExact, TspHeuristic };

std::string to_string(SolverKind kind);
SolverKind solver_kind_from_string(const std::string& s);

/// Largest node count accepted by the Held-Karp solver.
inline constexpr std::size_t kMaxExactTspNodes = 16;
inline constexpr std::size_t kMaxBruteForceSppNodes = 10;
inline constexpr std::size_t kMaxBruteForceTspNodes = 8;

struct SolverOptions {
  /// Shortest-path costs below this floor are raised to it before Dijkstra.
  double clamp_floor = 1e-6;
};

/// Side information from a solver call.
struct SolveStats {
  std::size_t clamped_edges = 0;
};

/// argmin_{x in X(p)} <y, x>. Spp needs a SourceTarget requirement; the TSP
/// kinds need none. Deterministic for equal inputs.
SolutionVector solve(SolverKind kind, const Graph& g, std::span<const double> y,
                     const Requirement& p, const SolverOptions& opts = {},
                     SolveStats* stats = nullptr);

struct PerturbedSolution {
  SolutionVector x;
  std::vector<double> eps;
  SolveStats stats;
};

/// n i.i.d. N(0, sigma_eps^2) draws from `seed`; zeros when sigma_eps == 0.
std::vector<double> draw_perturbation(std::size_t n, double sigma_eps, std::uint64_t seed);

/// Solves on y + eps with eps ~ N(0, sigma_eps^2 I) drawn from `seed`.
PerturbedSolution solve_perturbed(SolverKind kind, const Graph& g, std::span<const double> y,
                                  const Requirement& p, double sigma_eps, std::uint64_t seed,
                                  const SolverOptions& opts = {});

/// Exhaustive enumeration; ties go to the lexicographically smallest sorted
/// edge-id set.
SolutionVector brute_force(SolverKind kind, const Graph& g, std::span<const double> y,
                           const Requirement& p);

/// True when no 2-opt move improves the tour by more than `rel_tol` of its cost.
bool is_two_opt_optimal(const Graph& g, std::span<const double> y, const SolutionVector& tour,
                        double rel_tol = 1e-12);

/// Visit order of a tour solution starting at node 0.
std::vector<NodeId> tour_order(const Graph& g, const SolutionVector& tour);

}  // namespace iolvm
