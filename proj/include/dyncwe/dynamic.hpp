#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyncwe/graph.hpp"
#include "dyncwe/nn.hpp"
#include "dyncwe/tensor.hpp"
#include "dyncwe/vocab.hpp"

namespace dyncwe {

struct TimeBounds {
  std::int64_t t_min = 0;
  std::int64_t t_max = 0;
};

// Maps a timestamp to [0,1]; the first and last training timestamps land on
// 0 and 1. Values outside the bounds extrapolate linearly with a warning.
inline double rescale_time(std::int64_t t, const TimeBounds& bounds, bool* warned = nullptr) {
  if (bounds.t_min >= bounds.t_max)
    throw std::invalid_argument("rescale_time: degenerate time bounds");
  const double scaled = static_cast<double>(t - bounds.t_min) /
                        static_cast<double>(bounds.t_max - bounds.t_min);
  if (scaled < 0.0 || scaled > 1.0) {
    if (warned) *warned = true;
    std::fprintf(stderr, "warning: timestamp %lld outside training bounds, extrapolating\n",
                 static_cast<long long>(t));
  }
  return scaled;
}

// Trainable time features: elementwise tanh(w_t * t + b_t) followed by a
// one-layer tanh feed-forward map, both width d_t.
struct TimeCodec {
  Tensor w_t;  // [d_t]
  Tensor b_t;  // [d_t]
  Linear ffn_t;

  static TimeCodec create(std::size_t d_t, std::uint64_t root_seed,
                          const std::string& prefix = "time") {
    TimeCodec c;
    c.w_t = init_gaussian({d_t}, 1.0, root_seed, prefix + ".w_t");
    c.b_t = init_gaussian({d_t}, 1.0, root_seed, prefix + ".b_t");
    c.ffn_t = Linear::create(d_t, d_t, root_seed, prefix + ".ffn_t");
    return c;
  }

  std::size_t width() const { return w_t.size(); }

  Tensor embed(double t_rescaled) const {
    if (!std::isfinite(t_rescaled)) throw std::invalid_argument("TimeCodec: non-finite time");
    Tensor inner = tanh_t(add(scale(w_t, t_rescaled), b_t));
    return tanh_t(ffn_t.apply(inner));
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.add(prefix + ".w_t", w_t);
    out.add(prefix + ".b_t", b_t);
    ffn_t.collect(prefix + ".ffn_t", out);
  }
};

using Neighborhoods = std::vector<std::vector<std::pair<std::size_t, double>>>;

// Test hook: per-(layer, head, node) attention coefficient vectors.
struct GatProbe {
  std::vector<Tensor> coefficients;
};

// One graph-attention layer. Heads are averaged (the width need not divide
// by the head count) and the aggregate passes through tanh. Edge weights add
// ln(weight) to the pre-softmax logit, so weight 1 is neutral.
struct GatLayer {
  std::vector<Tensor> weight;  // per head [d, d]
  std::vector<Tensor> a_self;  // per head [d]
  std::vector<Tensor> a_nbr;   // per head [d]
  double leaky_slope = 0.2;

  static GatLayer create(std::size_t d, std::size_t heads, std::uint64_t root_seed,
                         const std::string& prefix) {
    GatLayer l;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::string hp = prefix + ".head" + std::to_string(h);
      l.weight.push_back(init_glorot(d, d, root_seed, hp + ".W"));
      l.a_self.push_back(init_gaussian({d}, 0.5, root_seed, hp + ".a_self"));
      l.a_nbr.push_back(init_gaussian({d}, 0.5, root_seed, hp + ".a_nbr"));
    }
    return l;
  }

  // x: [N, d] node features. Attention runs over each node's neighborhood
  // (in-neighbors plus self); nodes outside it never enter the computation.
  Tensor apply(const Tensor& x, const Neighborhoods& nbrs, GatProbe* probe = nullptr) const {
    const std::size_t n = x.shape()[0];
    const std::size_t d = x.shape()[1];
    const std::size_t heads = weight.size();
    std::vector<Tensor> per_head_z, per_head_u, per_head_v;
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor z = matmul(x, weight[h]);                          // [N, d]
      per_head_u.push_back(matmul(z, reshape(a_self[h], {d, 1})));  // [N, 1]
      per_head_v.push_back(matmul(z, reshape(a_nbr[h], {d, 1})));   // [N, 1]
      per_head_z.push_back(std::move(z));
    }
    std::vector<Tensor> out_rows;
    out_rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> nbr_ids;
      Tensor log_weights = Tensor::zeros({nbrs[i].size()});
      for (std::size_t k = 0; k < nbrs[i].size(); ++k) {
        nbr_ids.push_back(nbrs[i][k].first);
        log_weights.values()[k] = std::log(nbrs[i][k].second);
      }
      Tensor aggregated;
      for (std::size_t h = 0; h < heads; ++h) {
        Tensor u_i = reshape(slice_rows(per_head_u[h], i, 1), {1});
        Tensor v_n = reshape(lookup_rows(per_head_v[h], nbr_ids), {nbr_ids.size()});
        Tensor raw = add(reshape(broadcast_row(u_i, nbr_ids.size()), {nbr_ids.size()}), v_n);
        Tensor logits = add(leaky_relu(raw, leaky_slope), log_weights);
        Tensor alpha = softmax_rows(logits);  // [k]
        if (probe) probe->coefficients.push_back(alpha);
        Tensor mixed = matmul(reshape(alpha, {1, nbr_ids.size()}),
                              lookup_rows(per_head_z[h], nbr_ids));  // [1, d]
        aggregated = aggregated.valid() ? add(aggregated, mixed) : mixed;
      }
      out_rows.push_back(reshape(tanh_t(scale(aggregated, 1.0 / static_cast<double>(heads))), {d}));
    }
    return stack_rows(out_rows);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t h = 0; h < weight.size(); ++h) {
      const std::string hp = prefix + ".head" + std::to_string(h);
      out.add(hp + ".W", weight[h]);
      out.add(hp + ".a_self", a_self[h]);
      out.add(hp + ".a_nbr", a_nbr[h]);
    }
  }
};

// Social context encoder: an input embedding per node refined by two
// graph-attention layers.
class SocialEncoder {
 public:
  static SocialEncoder create(std::size_t d_s, std::size_t n_nodes, std::size_t heads,
                              std::uint64_t root_seed, const std::string& prefix = "social") {
    SocialEncoder e;
    e.table_ = init_gaussian({n_nodes, d_s}, 0.1, root_seed, prefix + ".table");
    e.layer1_ = GatLayer::create(d_s, heads, root_seed, prefix + ".gat1");
    e.layer2_ = GatLayer::create(d_s, heads, root_seed, prefix + ".gat2");
    return e;
  }

  Tensor& table() { return table_; }
  const Tensor& table() const { return table_; }

  std::size_t width() const { return table_.shape()[1]; }
  std::size_t node_count() const { return table_.shape()[0]; }

  // Overwrites the input embeddings (node2vec initialization).
  void set_table(const std::vector<std::vector<double>>& rows) {
    if (rows.size() != node_count())
      throw std::invalid_argument("SocialEncoder: table row count mismatch");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != width())
        throw std::invalid_argument("SocialEncoder: table width mismatch");
      for (std::size_t j = 0; j < width(); ++j) table_.values()[i * width() + j] = rows[i][j];
    }
  }

  Tensor forward_all(const Neighborhoods& nbrs, GatProbe* probe = nullptr) const {
    if (nbrs.size() != node_count())
      throw std::invalid_argument("SocialEncoder: neighborhood count mismatch");
    return layer2_.apply(layer1_.apply(table_, nbrs, probe), nbrs, probe);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.add(prefix + ".table", table_);
    layer1_.collect(prefix + ".gat1", out);
    layer2_.collect(prefix + ".gat2", out);
  }

 private:
  Tensor table_;
  GatLayer layer1_, layer2_;
};

// Social embedding of one node; rejects unknown nodes by name.
inline Tensor embed_social(const std::string& node, const SocialGraph& graph,
                           const SocialEncoder& encoder, GatProbe* probe = nullptr) {
  const std::size_t idx = graph.node_index(node);  // throws with the node id
  Tensor all = encoder.forward_all(graph.attention_neighborhoods(), probe);
  return reshape(slice_rows(all, idx, 1), {encoder.width()});
}

// Fusion and offset networks; both single-layer with tanh.
struct OffsetNetworks {
  std::size_t d_s = 0;
  std::size_t d_t = 0;
  Linear ffn_r;  // (d_s + d_t) -> d_r
  Linear ffn_o;  // (d_e + r_width) -> d_e

  static OffsetNetworks create(std::size_t d_e, std::size_t d_s, std::size_t d_t,
                               std::size_t d_r, std::size_t offset_context_width,
                               std::uint64_t root_seed, const std::string& prefix = "offset") {
    OffsetNetworks n;
    n.d_s = d_s;
    n.d_t = d_t;
    n.ffn_r = Linear::create(d_s + d_t, d_r, root_seed, prefix + ".ffn_r");
    n.ffn_o = Linear::create(d_e + offset_context_width, d_e, root_seed, prefix + ".ffn_o");
    return n;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    ffn_r.collect(prefix + ".ffn_r", out);
    ffn_o.collect(prefix + ".ffn_o", out);
  }
};

// r_ij = tanh(FFN_r([s_i || t_j]))
inline Tensor joint_context(const OffsetNetworks& nets, const Tensor& s, const Tensor& t) {
  if (s.ndim() != 1 || t.ndim() != 1 || s.size() != nets.d_s || t.size() != nets.d_t)
    throw std::invalid_argument("joint_context: widths " + std::to_string(s.size()) + "+" +
                                std::to_string(t.size()) + " do not match d_s " +
                                std::to_string(nets.d_s) + " + d_t " + std::to_string(nets.d_t));
  return tanh_t(nets.ffn_r.apply(concat({s, t})));
}

// o = tanh(FFN_o([anchor || context])) for ordinary tokens; reserved special
// tokens carry a structurally zero offset.
inline Tensor compute_offset(const OffsetNetworks& nets, std::size_t token_id,
                             const Tensor& anchor, const Tensor& context) {
  if (Vocabulary::is_special(token_id)) return Tensor::zeros({anchor.size()});
  if (anchor.size() + context.size() != nets.ffn_o.in_width())
    throw std::invalid_argument("compute_offset: widths " + std::to_string(anchor.size()) + "+" +
                                std::to_string(context.size()) +
                                " do not match offset input " +
                                std::to_string(nets.ffn_o.in_width()));
  return tanh_t(nets.ffn_o.apply(concat({anchor, context})));
}

// e = anchor + offset
inline Tensor dynamic_embed(const Tensor& anchor, const Tensor& offset) {
  return add(anchor, offset);
}

// (lambda / 2K) * sum_k ||o_k||^2 over the K non-special tokens.
inline Tensor prior_loss(const Tensor& offsets, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("prior_loss: lambda must be non-negative");
  if (offsets.ndim() != 2 || offsets.shape()[0] == 0)
    throw std::invalid_argument("prior_loss: needs a [K, d] offset matrix with K >= 1");
  const auto k = static_cast<double>(offsets.shape()[0]);
  return scale(sum_sq(offsets), lambda / (2.0 * k));
}

inline Tensor prior_loss(const std::vector<Tensor>& offsets, double lambda) {
  if (offsets.empty()) throw std::invalid_argument("prior_loss: K must be >= 1");
  return prior_loss(stack_rows(offsets), lambda);
}

}  // namespace dyncwe
