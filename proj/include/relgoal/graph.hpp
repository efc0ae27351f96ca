#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace relgoal::graph {

// Directed interaction structure over object nodes 1..K plus the action
// source node 0. edge(i, j) means node i influences node j.
struct InteractionGraph {
  int object_count = 0;
  int arm_index = 0;  // the object node that receives the action edge
  double threshold = 0.0;
  std::vector<std::uint8_t> adj;   // (K+1)^2, row-major
  Eigen::MatrixXd avg_weights;     // KxK soft weights behind the adjacency; may be empty

  InteractionGraph() = default;
  explicit InteractionGraph(int k)
      : object_count(k), adj(std::size_t(k + 1) * std::size_t(k + 1), 0) {}

  int nodes() const { return object_count + 1; }

  bool edge(int i, int j) const { return adj[std::size_t(i) * nodes() + j] != 0; }

  void set_edge(int i, int j, bool present) {
    if (i == j) return;
    adj[std::size_t(i) * nodes() + j] = present ? 1 : 0;
  }

  std::vector<std::pair<int, int>> edges() const {
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < nodes(); ++i)
      for (int j = 0; j < nodes(); ++j)
        if (edge(i, j)) out.emplace_back(i, j);
    return out;
  }

  // Object nodes reachable from the action source.
  std::vector<int> reachable_objects() const {
    std::vector<bool> vis(nodes(), false);
    std::vector<int> stack{0};
    vis[0] = true;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int u = 0; u < nodes(); ++u)
        if (edge(v, u) && !vis[u]) {
          vis[u] = true;
          stack.push_back(u);
        }
    }
    std::vector<int> out;
    for (int u = 1; u < nodes(); ++u)
      if (vis[u]) out.push_back(u);
    return out;
  }

  void validate() const {
    if (object_count < 1) throw std::runtime_error("graph: no object nodes");
    for (int i = 0; i < nodes(); ++i)
      if (edge(i, i)) throw std::runtime_error("graph: self edge");
    for (int i = 1; i < nodes(); ++i)
      if (edge(i, 0)) throw std::runtime_error("graph: edge into the action node");
    int out0 = 0;
    for (int j = 1; j < nodes(); ++j)
      if (edge(0, j)) ++out0;
    if (out0 != 1) throw std::runtime_error("graph: action node must have exactly one edge");
    if (!edge(0, arm_index)) throw std::runtime_error("graph: arm index disagrees with edges");
  }
};

inline void save_graph(const std::string& path, const InteractionGraph& g) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("graph: cannot write " + path);
  os << "RELGOAL-GRAPH v1\n";
  os << "objects " << g.object_count << "\n";
  os << "arm " << g.arm_index << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", g.threshold);
  os << "threshold " << buf << "\n";
  if (g.avg_weights.size() > 0) {
    os << "avg_weights\n";
    for (Eigen::Index r = 0; r < g.avg_weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < g.avg_weights.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", g.avg_weights(r, c));
        os << (c ? " " : "") << buf;
      }
      os << "\n";
    }
  } else {
    os << "avg_weights none\n";
  }
  os << "adjacency\n";
  for (int i = 0; i < g.nodes(); ++i) {
    for (int j = 0; j < g.nodes(); ++j) os << (j ? " " : "") << (g.edge(i, j) ? 1 : 0);
    os << "\n";
  }
  if (!os) throw std::runtime_error("graph: write failed " + path);
}

inline InteractionGraph load_graph(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("graph: cannot open " + path);
  std::string line;
  std::getline(is, line);
  if (line != "RELGOAL-GRAPH v1") throw std::runtime_error("graph: bad header in " + path);
  std::string word;
  int k = 0;
  is >> word >> k;
  if (word != "objects") throw std::runtime_error("graph: expected 'objects'");
  InteractionGraph g(k);
  is >> word >> g.arm_index;
  if (word != "arm") throw std::runtime_error("graph: expected 'arm'");
  is >> word >> g.threshold;
  if (word != "threshold") throw std::runtime_error("graph: expected 'threshold'");
  is >> word;
  if (word != "avg_weights") throw std::runtime_error("graph: expected 'avg_weights'");
  std::string peek;
  is >> peek;
  if (peek == "none") {
    is >> word;
  } else {
    g.avg_weights.resize(k, k);
    g.avg_weights(0, 0) = std::stod(peek);
    for (Eigen::Index r = 0; r < k; ++r)
      for (Eigen::Index c = 0; c < k; ++c) {
        if (r == 0 && c == 0) continue;
        is >> g.avg_weights(r, c);
      }
    is >> word;
  }
  if (word != "adjacency") throw std::runtime_error("graph: expected 'adjacency'");
  for (int i = 0; i < g.nodes(); ++i)
    for (int j = 0; j < g.nodes(); ++j) {
      int v = 0;
      is >> v;
      g.set_edge(i, j, v != 0);
    }
  if (!is) throw std::runtime_error("graph: truncated file " + path);
  return g;
}

}  // namespace relgoal::graph
