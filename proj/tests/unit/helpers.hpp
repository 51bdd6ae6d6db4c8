#pragma once

#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "iolvm/error.hpp"
#include "iolvm/graph.hpp"
#include "iolvm/rng.hpp"

#define CHECK_THROWS_CODE(expr, expected_code)                       \
  do {                                                               \
    bool threw_ = false;                                             \
    try {                                                            \
      (void)(expr);                                                  \
    } catch (const ::iolvm::Error& e_) {                             \
      threw_ = true;                                                 \
      CHECK_MESSAGE(e_.code() == (expected_code), e_.what());        \
    }                                                                \
    CHECK_MESSAGE(threw_, "expected " #expected_code " from " #expr); \
  } while (0)

namespace testutil {

using namespace iolvm;

inline std::vector<NodeSpec> nodes_on_line(int n) {
  std::vector<NodeSpec> nodes;
  for (int v = 0; v < n; ++v) nodes.push_back({v, {static_cast<double>(v), 0.0}});
  return nodes;
}

/// 0 -> 1 -> ... -> n-1.
inline Graph line_graph(int n) {
  std::vector<EdgeSpec> edges;
  for (int v = 0; v + 1 < n; ++v) edges.push_back({v, v + 1});
  return build_graph(nodes_on_line(n), edges, true);
}

/// Undirected complete graph on n points of a unit circle.
inline Graph complete_graph(int n) {
  std::vector<NodeSpec> nodes;
  for (int v = 0; v < n; ++v) {
    const double a = 6.283185307179586 * v / n;
    nodes.push_back({v, {std::cos(a), std::sin(a)}});
  }
  std::vector<EdgeSpec> edges;
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v) edges.push_back({u, v});
  return build_graph(nodes, edges, false);
}

/// Diamond 0->1->3, 0->2->3 plus the chord 1->2.
inline Graph diamond() {
  const std::vector<NodeSpec> nodes{{0, {0, 0}}, {1, {1, 1}}, {2, {1, -1}}, {3, {2, 0}}};
  const std::vector<EdgeSpec> edges{{0, 1}, {0, 2}, {1, 3}, {2, 3}, {1, 2}};
  return build_graph(nodes, edges, true);
}

inline Graph random_graph(int n, double arc_prob, bool directed, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<NodeSpec> nodes;
  for (int v = 0; v < n; ++v) nodes.push_back({v, {unit(rng), unit(rng)}});
  std::vector<EdgeSpec> edges;
  for (int u = 0; u < n; ++u)
    for (int v = directed ? 0 : u + 1; v < n; ++v)
      if (u != v && unit(rng) < arc_prob) edges.push_back({u, v});
  return build_graph(nodes, edges, directed);
}

inline SolutionVector edges_of(const Graph& g, std::vector<EdgeId> ids) {
  return SolutionVector::from_edges(g.num_edges(), ids);
}

}  // namespace testutil
