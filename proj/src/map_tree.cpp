// Maximum-weight arborescence by Chu-Liu/Edmonds contraction.

#include <tuple>
#include <vector>

#include "taxon/tree_dist.hpp"

namespace taxon {
namespace {

struct Arc {
  int from;
  int to;
  double score;
  int orig_from;  // endpoints in the uncontracted graph, for tie-breaking
  int orig_to;
  int source;     // index of this arc in the enclosing level
};

// Higher score wins; equal scores prefer the smaller original (i, j).
bool better(const Arc& a, const Arc& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.orig_from, a.orig_to) < std::tie(b.orig_from, b.orig_to);
}

// Returns indices into `arcs` of the chosen incoming arc for every non-root node.
std::vector<int> solve(int num_nodes, int root, const std::vector<Arc>& arcs) {
  std::vector<int> best(num_nodes, -1);
  for (int k = 0; k < static_cast<int>(arcs.size()); ++k) {
    const Arc& a = arcs[k];
    if (a.to == root || a.from == a.to) continue;
    if (best[a.to] < 0 || better(a, arcs[best[a.to]])) best[a.to] = k;
  }

  // Find one cycle among the chosen arcs.
  std::vector<int> mark(num_nodes, -1);
  std::vector<int> cycle;
  for (int v = 0; v < num_nodes && cycle.empty(); ++v) {
    int u = v;
    while (u != root && mark[u] < 0) {
      mark[u] = v;
      u = arcs[best[u]].from;
    }
    if (u != root && mark[u] == v) {
      for (int x = u;;) {
        cycle.push_back(x);
        x = arcs[best[x]].from;
        if (x == u) break;
      }
    }
  }

  std::vector<int> chosen;
  if (cycle.empty()) {
    for (int v = 0; v < num_nodes; ++v)
      if (v != root) chosen.push_back(best[v]);
    return chosen;
  }

  std::vector<char> in_cycle(num_nodes, 0);
  for (int v : cycle) in_cycle[v] = 1;
  std::vector<int> relabel(num_nodes, -1);
  int next_id = 0;
  for (int v = 0; v < num_nodes; ++v)
    if (!in_cycle[v]) relabel[v] = next_id++;
  const int cycle_id = next_id++;
  for (int v : cycle) relabel[v] = cycle_id;

  std::vector<Arc> contracted;
  contracted.reserve(arcs.size());
  for (int k = 0; k < static_cast<int>(arcs.size()); ++k) {
    const Arc& a = arcs[k];
    const int u = relabel[a.from], v = relabel[a.to];
    if (u == v) continue;
    double s = a.score;
    if (in_cycle[a.to]) s -= arcs[best[a.to]].score;
    contracted.push_back({u, v, s, a.orig_from, a.orig_to, k});
  }

  const std::vector<int> sub = solve(next_id, relabel[root], contracted);
  int entered = -1;
  for (int idx : sub) {
    const int k = contracted[idx].source;
    chosen.push_back(k);
    if (in_cycle[arcs[k].to]) entered = arcs[k].to;
  }
  for (int v : cycle)
    if (v != entered) chosen.push_back(best[v]);
  return chosen;
}

}  // namespace

Arborescence map_tree(const WeightMatrix& w) {
  const int n = w.n();
  std::vector<Arc> arcs;
  arcs.reserve(static_cast<std::size_t>(num_edges(n)));
  for_each_edge(n, [&](int i, int j) {
    arcs.push_back({i, j, w(i, j), i, j, static_cast<int>(arcs.size())});
  });
  std::vector<int> parents(n, 0);
  for (int k : solve(n + 1, 0, arcs)) parents[arcs[k].to - 1] = arcs[k].from;
  return Arborescence(std::move(parents));
}

}  // namespace taxon
