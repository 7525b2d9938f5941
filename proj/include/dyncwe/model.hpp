#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyncwe/data.hpp"
#include "dyncwe/dynamic.hpp"
#include "dyncwe/encoder.hpp"
#include "dyncwe/graph.hpp"
#include "dyncwe/nn.hpp"
#include "dyncwe/tensor.hpp"
#include "dyncwe/vocab.hpp"

namespace dyncwe {

enum class Task { mlm, sentiment };
enum class Variant { cwe, social_only, time_only, unfused, dcwe };

inline const char* task_name(Task t) { return t == Task::mlm ? "mlm" : "sentiment"; }

inline Task parse_task(const std::string& s) {
  if (s == "mlm") return Task::mlm;
  if (s == "sentiment") return Task::sentiment;
  throw std::invalid_argument("unknown task '" + s + "'");
}

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::cwe: return "cwe";
    case Variant::social_only: return "social_only";
    case Variant::time_only: return "time_only";
    case Variant::unfused: return "unfused";
    case Variant::dcwe: return "dcwe";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "cwe") return Variant::cwe;
  if (s == "social_only") return Variant::social_only;
  if (s == "time_only") return Variant::time_only;
  if (s == "unfused") return Variant::unfused;
  if (s == "dcwe") return Variant::dcwe;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

inline bool variant_uses_social(Variant v) {
  return v == Variant::social_only || v == Variant::unfused || v == Variant::dcwe;
}

inline bool variant_uses_time(Variant v) {
  return v == Variant::time_only || v == Variant::unfused || v == Variant::dcwe;
}

struct DynWidths {
  std::size_t d_s = 50;
  std::size_t d_t = 20;
  std::size_t d_r = 70;  // fused joint width; defaults to d_s + d_t

  void validate() const {
    if (d_s == 0 || d_t == 0 || d_r == 0)
      throw std::invalid_argument("DynWidths: widths must be >= 1");
  }
};

// The full trainable system: anchor embedding table, contextualizer, task
// heads, and the dynamic component. The offset context is the fused joint
// representation, except in the unfused variant where social and time
// features concatenate straight into the offset network.
class DynamicModel {
 public:
  static DynamicModel create(const Vocabulary& vocab, const EncoderConfig& enc_cfg,
                             const DynWidths& widths, Task task, Variant variant,
                             const std::vector<std::string>& social_nodes, TimeBounds bounds,
                             std::uint64_t seed) {
    enc_cfg.validate();
    widths.validate();
    if (social_nodes.empty())
      throw std::invalid_argument("DynamicModel: need at least one social context");
    DynamicModel m;
    m.task_ = task;
    m.variant_ = variant;
    m.widths_ = widths;
    m.bounds_ = bounds;
    m.vocab_ = vocab;
    m.social_nodes_ = social_nodes;
    m.seed_ = seed;
    m.token_table_ = init_gaussian({vocab.size(), enc_cfg.d_e}, 0.02, seed, "tokens.table");
    m.encoder_ = TransformerEncoder::create(enc_cfg, seed, "encoder");
    m.mlm_head_ = MlmHead::create(enc_cfg.d_e, vocab.size(), seed, "mlm_head");
    m.cls_head_ = ClsHead::create(enc_cfg.d_e, seed, "cls_head");
    m.time_codec_ = TimeCodec::create(widths.d_t, seed, "time");
    m.social_ = SocialEncoder::create(widths.d_s, social_nodes.size(), 4, seed, "social");
    const std::size_t ctx_width = m.offset_context_width();
    m.offset_nets_ =
        OffsetNetworks::create(enc_cfg.d_e, widths.d_s, widths.d_t, widths.d_r, ctx_width, seed,
                               "offset");
    return m;
  }

  Task task() const { return task_; }
  Variant variant() const { return variant_; }
  const Vocabulary& vocab() const { return vocab_; }
  const EncoderConfig& encoder_config() const { return encoder_.config(); }
  const DynWidths& widths() const { return widths_; }
  TimeBounds bounds() const { return bounds_; }
  void set_bounds(TimeBounds b) { bounds_ = b; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::string>& social_nodes() const { return social_nodes_; }

  Tensor& token_table() { return token_table_; }
  const Tensor& token_table() const { return token_table_; }
  SocialEncoder& social_encoder() { return social_; }
  const TimeCodec& time_codec() const { return time_codec_; }
  const OffsetNetworks& offset_networks() const { return offset_nets_; }
  const TransformerEncoder& encoder() const { return encoder_; }
  MlmHead& mlm_head() { return mlm_head_; }
  const MlmHead& mlm_head() const { return mlm_head_; }
  ClsHead& cls_head() { return cls_head_; }

  // The anchor table is trainable unless frozen; every use (encoder input,
  // offset input, anchor) accumulates gradient when unfrozen.
  void set_freeze_embeddings(bool freeze) {
    frozen_embeddings_ = freeze;
    token_table_.set_requires_grad(!freeze);
  }
  bool embeddings_frozen() const { return frozen_embeddings_; }

  std::size_t offset_context_width() const {
    return variant_ == Variant::unfused ? widths_.d_s + widths_.d_t : widths_.d_r;
  }

  ParamList parameters() const {
    ParamList out;
    out.add("tokens.table", token_table_);
    encoder_.collect("encoder", out);
    mlm_head_.collect("mlm_head", out);
    cls_head_.collect("cls_head", out);
    time_codec_.collect("time", out);
    social_.collect("social", out);
    offset_nets_.collect("offset", out);
    return out;
  }

  void check_graph(const SocialGraph& graph) const {
    if (graph.nodes() != social_nodes_)
      throw std::invalid_argument(
          "DynamicModel: graph nodes do not match the model's social contexts (" +
          std::to_string(graph.node_count()) + " vs " + std::to_string(social_nodes_.size()) +
          " nodes)");
  }

  std::size_t social_index(const std::string& id) const {
    for (std::size_t i = 0; i < social_nodes_.size(); ++i)
      if (social_nodes_[i] == id) return i;
    throw std::invalid_argument("DynamicModel: unknown social context '" + id + "'");
  }

  // GAT pass over every node; shared across the documents of a batch.
  Tensor social_forward_all(const Neighborhoods& nbrs) const { return social_.forward_all(nbrs); }

  // Joint extralinguistic context per variant. cwe never calls this.
  Tensor context_vector(const Tensor& social_all, std::size_t social_idx,
                        double t_rescaled) const {
    Tensor s = variant_uses_social(variant_)
                   ? reshape(slice_rows(social_all, social_idx, 1), {widths_.d_s})
                   : Tensor::zeros({widths_.d_s});
    Tensor t = variant_uses_time(variant_) ? time_codec_.embed(t_rescaled)
                                           : Tensor::zeros({widths_.d_t});
    if (variant_ == Variant::unfused) return concat({s, t});
    return joint_context(offset_nets_, s, t);
  }

  struct DocForward {
    Tensor embeddings;               // [T, d_e] dynamic input embeddings
    Tensor hidden;                   // [T, d_e] encoder output
    Tensor offsets;                  // [K, d_e] non-special offsets; invalid when none
    std::vector<std::size_t> offset_positions;
    Tensor prior;                    // scalar (lambda/2K) sum ||o||^2; zero when no offsets
  };

  // Runs the dynamic component and contextualizer over one token sequence.
  // social_all may be an empty tensor for variants that ignore it.
  DocForward forward_sequence(const std::vector<std::size_t>& ids, std::size_t social_idx,
                              double t_rescaled, const Tensor& social_all, double lambda,
                              bool force_zero_offsets = false,
                              RandomStream* drop_rng = nullptr) const {
    if (ids.size() < 2) throw std::invalid_argument("forward_sequence: degenerate sequence");
    DocForward out;
    Tensor anchors = lookup_rows(token_table_, ids);
    const std::size_t t_len = ids.size();
    std::vector<std::size_t> ordinary;
    for (std::size_t p = 0; p < t_len; ++p)
      if (!Vocabulary::is_special(ids[p])) ordinary.push_back(p);

    const bool structurally_zero =
        variant_ == Variant::cwe || force_zero_offsets || ordinary.empty();
    if (structurally_zero) {
      out.embeddings = add(anchors, Tensor::zeros({t_len, encoder_.config().d_e}));
      out.prior = Tensor::scalar(0.0);
    } else {
      std::vector<std::size_t> ordinary_ids;
      for (std::size_t p : ordinary) ordinary_ids.push_back(ids[p]);
      Tensor ctx = context_vector(social_all, social_idx, t_rescaled);
      Tensor anchor_rows = lookup_rows(token_table_, ordinary_ids);
      Tensor ctx_rows = broadcast_row(ctx, ordinary.size());
      Tensor offsets = tanh_t(offset_nets_.ffn_o.apply(concat_cols({anchor_rows, ctx_rows})));
      out.offsets = offsets;
      out.offset_positions = ordinary;
      out.embeddings = add(anchors, scatter_rows(offsets, ordinary, t_len));
      out.prior = prior_loss(offsets, lambda);
    }
    out.hidden = encoder_.encode(out.embeddings, {}, drop_rng);
    return out;
  }

  // Vocabulary logits at every position; the surface used for equivalence
  // checks between variants.
  Tensor all_position_logits(const std::vector<std::size_t>& ids, std::size_t social_idx,
                             double t_rescaled, const Tensor& social_all,
                             bool force_zero_offsets = false) const {
    DocForward f = forward_sequence(ids, social_idx, t_rescaled, social_all, 0.0,
                                    force_zero_offsets);
    return mlm_head_.proj.apply(f.hidden);
  }

  Tensor sentiment_logit(const std::vector<std::size_t>& ids, std::size_t social_idx,
                         double t_rescaled, const Tensor& social_all,
                         bool force_zero_offsets = false) const {
    DocForward f = forward_sequence(ids, social_idx, t_rescaled, social_all, 0.0,
                                    force_zero_offsets);
    return cls_head_.logit(f.hidden);
  }

 private:
  Task task_ = Task::mlm;
  Variant variant_ = Variant::dcwe;
  DynWidths widths_;
  TimeBounds bounds_;
  Vocabulary vocab_;
  std::vector<std::string> social_nodes_;
  std::uint64_t seed_ = 0;
  bool frozen_embeddings_ = false;

  Tensor token_table_;
  TransformerEncoder encoder_;
  MlmHead mlm_head_;
  ClsHead cls_head_;
  TimeCodec time_codec_;
  SocialEncoder social_;
  OffsetNetworks offset_nets_;
};

}  // namespace dyncwe
