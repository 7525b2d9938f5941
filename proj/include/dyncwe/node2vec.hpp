#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dyncwe/graph.hpp"
#include "dyncwe/rng.hpp"

namespace dyncwe {

struct WalkCorpus {
  std::vector<std::vector<std::size_t>> walks;
  std::size_t walk_length = 80;
  std::size_t walks_per_node = 10;
};

// Weighted first-order random walks (return and in-out biases fixed at 1).
// Transition probability is proportional to edge weight; dead ends stop the
// walk early, so an isolated node yields length-1 walks.
inline WalkCorpus sample_walks(const SocialGraph& graph, std::size_t walks_per_node = 10,
                               std::size_t length = 80, std::uint64_t seed = 1) {
  if (graph.node_count() == 0) throw std::invalid_argument("sample_walks: empty graph");
  if (walks_per_node == 0 || length == 0)
    throw std::invalid_argument("sample_walks: counts must be >= 1");
  const auto nbrs = graph.walk_neighborhoods();
  WalkCorpus corpus;
  corpus.walk_length = length;
  corpus.walks_per_node = walks_per_node;
  corpus.walks.reserve(graph.node_count() * walks_per_node);
  for (std::size_t start = 0; start < graph.node_count(); ++start) {
    for (std::size_t w = 0; w < walks_per_node; ++w) {
      RandomStream rng(derive_seed(seed, "walk", start * walks_per_node + w));
      std::vector<std::size_t> walk = {start};
      while (walk.size() < length) {
        const auto& options = nbrs[walk.back()];
        if (options.empty()) break;
        double total = 0.0;
        for (const auto& [node, weight] : options) total += weight;
        double draw = rng.uniform01() * total;
        std::size_t chosen = options.back().first;
        for (const auto& [node, weight] : options) {
          draw -= weight;
          if (draw < 0.0) {
            chosen = node;
            break;
          }
        }
        walk.push_back(chosen);
      }
      corpus.walks.push_back(std::move(walk));
    }
  }
  return corpus;
}

// Skip-gram negative-sampling loss for one positive pair plus sampled
// negatives, on plain vectors. The trainer applies the matching gradients;
// tests check them against finite differences.
inline double sgns_loss(const std::vector<double>& center_in, const std::vector<double>& ctx_out,
                        const std::vector<std::vector<double>>& neg_outs) {
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  auto log_sigmoid = [](double z) {
    // -softplus(-z), stable
    return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
  };
  double loss = -log_sigmoid(dot(center_in, ctx_out));
  for (const auto& neg : neg_outs) loss -= log_sigmoid(-dot(center_in, neg));
  return loss;
}

// Accumulates d(loss)/d(center), d(loss)/d(ctx), d(loss)/d(neg_i).
inline void sgns_gradients(const std::vector<double>& center_in,
                           const std::vector<double>& ctx_out,
                           const std::vector<std::vector<double>>& neg_outs,
                           std::vector<double>& g_center, std::vector<double>& g_ctx,
                           std::vector<std::vector<double>>& g_negs) {
  const std::size_t d = center_in.size();
  g_center.assign(d, 0.0);
  g_ctx.assign(d, 0.0);
  g_negs.assign(neg_outs.size(), std::vector<double>(d, 0.0));
  auto sigmoid = [](double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  };
  double zdot = 0.0;
  for (std::size_t i = 0; i < d; ++i) zdot += center_in[i] * ctx_out[i];
  const double coeff = sigmoid(zdot) - 1.0;  // d(-log sigma(z))/dz
  for (std::size_t i = 0; i < d; ++i) {
    g_center[i] += coeff * ctx_out[i];
    g_ctx[i] += coeff * center_in[i];
  }
  for (std::size_t n = 0; n < neg_outs.size(); ++n) {
    double zneg = 0.0;
    for (std::size_t i = 0; i < d; ++i) zneg += center_in[i] * neg_outs[n][i];
    const double ncoeff = sigmoid(zneg);  // d(-log sigma(-z))/dz
    for (std::size_t i = 0; i < d; ++i) {
      g_center[i] += ncoeff * neg_outs[n][i];
      g_negs[n][i] += ncoeff * center_in[i];
    }
  }
}

struct SkipgramConfig {
  std::size_t window = 10;
  std::size_t dim = 50;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 1;
};

inline std::vector<std::vector<double>> init_skipgram_table(std::size_t n_nodes, std::size_t dim,
                                                            std::uint64_t seed) {
  RandomStream rng(derive_seed(seed, "sg.init"));
  std::vector<std::vector<double>> table(n_nodes, std::vector<double>(dim));
  const double half = 0.5 / static_cast<double>(dim);
  for (auto& row : table)
    for (double& v : row) v = rng.uniform(-half, half);
  return table;
}

// Trains input embeddings over the walk corpus with SGD, a per-center
// reduced window, and unigram^0.75 negative sampling. Returns one dim-width
// vector per node; epoch-mean losses land in epoch_losses when given.
inline std::vector<std::vector<double>> train_skipgram(const WalkCorpus& corpus,
                                                       std::size_t n_nodes,
                                                       const SkipgramConfig& cfg,
                                                       std::vector<double>* epoch_losses = nullptr) {
  if (cfg.dim < 1) throw std::invalid_argument("train_skipgram: dim must be >= 1");
  if (corpus.walks.empty()) throw std::invalid_argument("train_skipgram: no walks");
  if (cfg.window < 1) throw std::invalid_argument("train_skipgram: window must be >= 1");

  auto in_table = init_skipgram_table(n_nodes, cfg.dim, cfg.seed);
  std::vector<std::vector<double>> out_table(n_nodes, std::vector<double>(cfg.dim, 0.0));

  // unigram^0.75 sampling distribution over nodes seen in the corpus
  std::vector<double> node_mass(n_nodes, 0.0);
  std::size_t total_centers_per_epoch = 0;
  for (const auto& walk : corpus.walks) {
    total_centers_per_epoch += walk.size();
    for (std::size_t node : walk) {
      if (node >= n_nodes) throw std::invalid_argument("train_skipgram: node id out of range");
      node_mass[node] += 1.0;
    }
  }
  std::vector<double> cumulative(n_nodes, 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < n_nodes; ++i) {
    acc += std::pow(node_mass[i], 0.75);
    cumulative[i] = acc;
  }
  if (acc <= 0.0) throw std::invalid_argument("train_skipgram: empty walk corpus");
  RandomStream rng(derive_seed(cfg.seed, "sg.train"));
  auto sample_negative = [&]() {
    const double draw = rng.uniform01() * acc;
    return static_cast<std::size_t>(
        std::lower_bound(cumulative.begin(), cumulative.end(), draw) - cumulative.begin());
  };

  const double total_steps =
      static_cast<double>(total_centers_per_epoch) * static_cast<double>(std::max<std::size_t>(cfg.epochs, 1));
  std::size_t processed = 0;
  std::vector<double> g_center, g_ctx;
  std::vector<std::vector<double>> g_negs;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t epoch_pairs = 0;
    for (const auto& walk : corpus.walks) {
      for (std::size_t pos = 0; pos < walk.size(); ++pos) {
        const double lr = std::max(cfg.learning_rate * 1e-4,
                                   cfg.learning_rate * (1.0 - static_cast<double>(processed) / total_steps));
        ++processed;
        const std::size_t b = 1 + rng.next_below(cfg.window);
        const std::size_t lo = pos >= b ? pos - b : 0;
        const std::size_t hi = std::min(walk.size() - 1, pos + b);
        for (std::size_t c = lo; c <= hi; ++c) {
          if (c == pos) continue;
          const std::size_t center = walk[pos];
          const std::size_t context = walk[c];
          std::vector<std::vector<double>> negs;
          std::vector<std::size_t> neg_ids;
          for (std::size_t n = 0; n < cfg.negatives; ++n) {
            const std::size_t cand = sample_negative();
            if (cand == context || cand == center) continue;
            neg_ids.push_back(cand);
            negs.push_back(out_table[cand]);
          }
          epoch_loss += sgns_loss(in_table[center], out_table[context], negs);
          ++epoch_pairs;
          sgns_gradients(in_table[center], out_table[context], negs, g_center, g_ctx, g_negs);
          for (std::size_t i = 0; i < cfg.dim; ++i) {
            in_table[center][i] -= lr * g_center[i];
            out_table[context][i] -= lr * g_ctx[i];
          }
          for (std::size_t n = 0; n < neg_ids.size(); ++n)
            for (std::size_t i = 0; i < cfg.dim; ++i)
              out_table[neg_ids[n]][i] -= lr * g_negs[n][i];
        }
      }
    }
    if (epoch_losses)
      epoch_losses->push_back(epoch_pairs > 0 ? epoch_loss / static_cast<double>(epoch_pairs) : 0.0);
  }
  return in_table;
}

// "node-id<TAB>v1,...,vd" per line.
inline void save_embedding_table(const std::filesystem::path& path,
                                 const std::vector<std::string>& node_names,
                                 const std::vector<std::vector<double>>& table) {
  if (node_names.size() != table.size())
    throw std::invalid_argument("save_embedding_table: name/row count mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_embedding_table: cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << node_names[i] << '\t';
    for (std::size_t j = 0; j < table[i].size(); ++j) out << (j ? "," : "") << table[i][j];
    out << '\n';
  }
  if (!out) throw std::runtime_error("save_embedding_table: write failed for " + path.string());
}

inline std::unordered_map<std::string, std::vector<double>> load_embedding_table(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_embedding_table: cannot read " + path.string());
  std::unordered_map<std::string, std::vector<double>> table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("load_embedding_table: malformed line " + std::to_string(lineno));
    std::vector<double> row;
    std::stringstream values(line.substr(tab + 1));
    std::string field;
    while (std::getline(values, field, ',')) row.push_back(std::stod(field));
    table[line.substr(0, tab)] = std::move(row);
  }
  return table;
}

}  // namespace dyncwe
