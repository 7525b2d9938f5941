#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dyncwe {

// Social contexts as graph nodes with weighted, optionally directed edges.
// Self-loops are never stored; attention adds the self connection itself.
class SocialGraph {
 public:
  struct Edge {
    std::size_t src;
    std::size_t dst;
    double weight;
  };

  explicit SocialGraph(bool directed = false) : directed_(directed) {}

  bool directed() const { return directed_; }
  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<std::string>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }

  std::size_t add_node(const std::string& name) {
    auto it = index_.find(name);
    if (it != index_.end()) return it->second;
    index_[name] = nodes_.size();
    nodes_.push_back(name);
    return nodes_.size() - 1;
  }

  bool has_node(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t node_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("SocialGraph: unknown node '" + name + "'");
    return it->second;
  }

  // Returns false when the edge already exists (duplicates collapse).
  bool add_edge(const std::string& src, const std::string& dst, double weight) {
    if (!(weight > 0.0) || weight > 1.0)
      throw std::invalid_argument("SocialGraph: edge weight " + std::to_string(weight) +
                                  " outside (0,1]");
    if (src == dst) throw std::invalid_argument("SocialGraph: self-loop on '" + src + "'");
    const std::size_t s = add_node(src), d = add_node(dst);
    const auto key = edge_key(s, d);
    if (!edge_set_.insert(key).second) return false;
    edges_.push_back({s, d, weight});
    return true;
  }

  bool has_edge(std::size_t s, std::size_t d) const { return edge_set_.count(edge_key(s, d)); }

  // Attention neighborhood of each node: in-neighbors plus self, self weight
  // fixed at 1 so the log-weight bias is neutral. Sorted by node index.
  std::vector<std::vector<std::pair<std::size_t, double>>> attention_neighborhoods() const {
    std::vector<std::vector<std::pair<std::size_t, double>>> nbrs(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) nbrs[i].emplace_back(i, 1.0);
    for (const auto& e : edges_) {
      nbrs[e.dst].emplace_back(e.src, e.weight);
      if (!directed_) nbrs[e.src].emplace_back(e.dst, e.weight);
    }
    for (auto& n : nbrs) std::sort(n.begin(), n.end());
    return nbrs;
  }

  // Random-walk transitions: out-neighbors when directed, all when not.
  std::vector<std::vector<std::pair<std::size_t, double>>> walk_neighborhoods() const {
    std::vector<std::vector<std::pair<std::size_t, double>>> nbrs(nodes_.size());
    for (const auto& e : edges_) {
      nbrs[e.src].emplace_back(e.dst, e.weight);
      if (!directed_) nbrs[e.dst].emplace_back(e.src, e.weight);
    }
    for (auto& n : nbrs) std::sort(n.begin(), n.end());
    return nbrs;
  }

  // Format: "#directed"/"#undirected" header, one line per node, then
  // "src<TAB>dst<TAB>weight" per edge. Node lines keep isolated nodes alive.
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("SocialGraph: cannot write " + path.string());
    out << (directed_ ? "#directed" : "#undirected") << '\n';
    for (const auto& n : nodes_) out << n << '\n';
    out.precision(17);
    for (const auto& e : edges_)
      out << nodes_[e.src] << '\t' << nodes_[e.dst] << '\t' << e.weight << '\n';
    if (!out) throw std::runtime_error("SocialGraph: write failed for " + path.string());
  }

  static SocialGraph load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("SocialGraph: cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line))
      throw std::runtime_error("SocialGraph: empty file " + path.string());
    bool directed;
    if (line == "#directed")
      directed = true;
    else if (line == "#undirected")
      directed = false;
    else
      throw std::runtime_error("SocialGraph: missing #directed/#undirected header in " +
                               path.string());
    SocialGraph g(directed);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream fields(line);
      std::string src, dst, w;
      fields >> src;
      if (!(fields >> dst)) {
        g.add_node(src);
        continue;
      }
      if (!(fields >> w))
        throw std::runtime_error("SocialGraph: line " + std::to_string(lineno) +
                                 " lacks a weight");
      g.add_edge(src, dst, std::stod(w));
    }
    return g;
  }

 private:
  std::pair<std::size_t, std::size_t> edge_key(std::size_t s, std::size_t d) const {
    if (!directed_ && s > d) std::swap(s, d);
    return {s, d};
  }

  struct PairHash {
    std::size_t operator()(const std::pair<std::size_t, std::size_t>& p) const {
      return p.first * 0x9e3779b97f4a7c15ULL + p.second;
    }
  };

  bool directed_;
  std::vector<std::string> nodes_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Edge> edges_;
  std::unordered_set<std::pair<std::size_t, std::size_t>, PairHash> edge_set_;
};

}  // namespace dyncwe
