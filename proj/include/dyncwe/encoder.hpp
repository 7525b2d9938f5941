#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyncwe/nn.hpp"
#include "dyncwe/rng.hpp"
#include "dyncwe/tensor.hpp"
#include "dyncwe/vocab.hpp"

namespace dyncwe {

struct EncoderConfig {
  std::size_t d_e = 768;
  std::size_t layers = 12;
  std::size_t heads = 12;
  std::size_t d_ff = 3072;
  std::size_t max_len = 512;
  double dropout = 0.0;

  void validate() const {
    if (d_e == 0 || layers == 0 || heads == 0 || d_ff == 0 || max_len < 2)
      throw std::invalid_argument("EncoderConfig: counts must be >= 1 and max_len >= 2");
    if (d_e % heads != 0)
      throw std::invalid_argument("EncoderConfig: d_e " + std::to_string(d_e) +
                                  " not divisible by heads " + std::to_string(heads));
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("EncoderConfig: dropout must be in [0,1)");
  }
};

// Optional probe into attention internals, used by tests.
struct AttentionProbe {
  std::vector<Tensor> probs;  // one [T,T] matrix per (layer, head)
};

// Post-norm transformer encoder over precomputed input embeddings. Position
// embeddings are learned and added inside encode().
class TransformerEncoder {
 public:
  static TransformerEncoder create(const EncoderConfig& cfg, std::uint64_t root_seed,
                                   const std::string& prefix = "encoder") {
    cfg.validate();
    TransformerEncoder enc;
    enc.cfg_ = cfg;
    enc.pos_table_ = init_gaussian({cfg.max_len, cfg.d_e}, 0.02, root_seed, prefix + ".pos");
    enc.emb_ln_g_ = ln_gain(cfg.d_e);
    enc.emb_ln_b_ = ln_bias(cfg.d_e);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string lp = prefix + ".layer" + std::to_string(l);
      Layer layer;
      layer.wq = Linear::create(cfg.d_e, cfg.d_e, root_seed, lp + ".wq");
      layer.wk = Linear::create(cfg.d_e, cfg.d_e, root_seed, lp + ".wk");
      layer.wv = Linear::create(cfg.d_e, cfg.d_e, root_seed, lp + ".wv");
      layer.wo = Linear::create(cfg.d_e, cfg.d_e, root_seed, lp + ".wo");
      layer.ff1 = Linear::create(cfg.d_e, cfg.d_ff, root_seed, lp + ".ff1");
      layer.ff2 = Linear::create(cfg.d_ff, cfg.d_e, root_seed, lp + ".ff2");
      layer.ln1_g = ln_gain(cfg.d_e);
      layer.ln1_b = ln_bias(cfg.d_e);
      layer.ln2_g = ln_gain(cfg.d_e);
      layer.ln2_b = ln_bias(cfg.d_e);
      enc.layers_.push_back(std::move(layer));
    }
    return enc;
  }

  const EncoderConfig& config() const { return cfg_; }

  // E: [T, d_e] input embeddings. attn_mask marks attendable positions; the
  // outputs at masked positions are meaningless and masked positions never
  // influence unmasked ones.
  Tensor encode(const Tensor& E, const std::vector<std::uint8_t>& attn_mask,
                RandomStream* drop_rng = nullptr, AttentionProbe* probe = nullptr) const {
    if (E.ndim() != 2 || E.shape()[1] != cfg_.d_e)
      throw std::invalid_argument("encode: input width " + std::to_string(E.ndim() == 2 ? E.shape()[1] : 0) +
                                  " does not match d_e " + std::to_string(cfg_.d_e));
    const std::size_t t = E.shape()[0];
    if (t > cfg_.max_len) throw std::invalid_argument("encode: sequence longer than max_len");
    if (!attn_mask.empty() && attn_mask.size() != t)
      throw std::invalid_argument("encode: attention mask length mismatch");

    Tensor x = add(E, slice_rows(pos_table_, 0, t));
    x = layer_norm(x, emb_ln_g_, emb_ln_b_);
    x = maybe_dropout(x, drop_rng);

    const std::size_t dh = cfg_.d_e / cfg_.heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (const Layer& layer : layers_) {
      Tensor q = layer.wq.apply(x);
      Tensor k = layer.wk.apply(x);
      Tensor v = layer.wv.apply(x);
      std::vector<Tensor> head_outs;
      head_outs.reserve(cfg_.heads);
      for (std::size_t h = 0; h < cfg_.heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
        Tensor probs = masked_softmax_rows(scores, attn_mask);
        if (probe) probe->probs.push_back(probs);
        probs = maybe_dropout(probs, drop_rng);
        head_outs.push_back(matmul(probs, vh));
      }
      Tensor attended = layer.wo.apply(concat_cols(head_outs));
      attended = maybe_dropout(attended, drop_rng);
      x = layer_norm(add(x, attended), layer.ln1_g, layer.ln1_b);
      Tensor ff = layer.ff2.apply(tanh_t(layer.ff1.apply(x)));
      ff = maybe_dropout(ff, drop_rng);
      x = layer_norm(add(x, ff), layer.ln2_g, layer.ln2_b);
    }
    return x;
  }

  // Convenience overload for a sequence of per-token embedding vectors.
  Tensor encode(const std::vector<Tensor>& embeddings, const std::vector<std::uint8_t>& attn_mask,
                RandomStream* drop_rng = nullptr, AttentionProbe* probe = nullptr) const {
    return encode(stack_rows(embeddings), attn_mask, drop_rng, probe);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.add(prefix + ".pos", pos_table_);
    out.add(prefix + ".emb_ln.g", emb_ln_g_);
    out.add(prefix + ".emb_ln.b", emb_ln_b_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::string lp = prefix + ".layer" + std::to_string(l);
      layers_[l].wq.collect(lp + ".wq", out);
      layers_[l].wk.collect(lp + ".wk", out);
      layers_[l].wv.collect(lp + ".wv", out);
      layers_[l].wo.collect(lp + ".wo", out);
      layers_[l].ff1.collect(lp + ".ff1", out);
      layers_[l].ff2.collect(lp + ".ff2", out);
      out.add(lp + ".ln1.g", layers_[l].ln1_g);
      out.add(lp + ".ln1.b", layers_[l].ln1_b);
      out.add(lp + ".ln2.g", layers_[l].ln2_g);
      out.add(lp + ".ln2.b", layers_[l].ln2_b);
    }
  }

 private:
  struct Layer {
    Linear wq, wk, wv, wo, ff1, ff2;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  };

  Tensor maybe_dropout(const Tensor& x, RandomStream* rng) const {
    if (cfg_.dropout == 0.0 || rng == nullptr) return x;
    return dropout(x, cfg_.dropout, *rng);
  }

  EncoderConfig cfg_;
  Tensor pos_table_;
  Tensor emb_ln_g_, emb_ln_b_;
  std::vector<Layer> layers_;
};

// Language-modeling head: one affine map from encoder output to vocabulary
// logits, one row per masked position.
struct MlmHead {
  Linear proj;

  static MlmHead create(std::size_t d_e, std::size_t vocab_size, std::uint64_t root_seed,
                        const std::string& prefix = "mlm_head") {
    return {Linear::create(d_e, vocab_size, root_seed, prefix)};
  }

  Tensor logits(const Tensor& H, const std::vector<std::size_t>& positions) const {
    if (positions.empty()) throw std::invalid_argument("MlmHead: no masked positions");
    for (std::size_t p : positions)
      if (p >= H.shape()[0])
        throw std::invalid_argument("MlmHead: position " + std::to_string(p) + " out of range");
    return proj.apply(lookup_rows(H, positions));
  }

  void collect(const std::string& prefix, ParamList& out) const { proj.collect(prefix, out); }
};

// Sentiment head: two affine layers with tanh between, fed the position-0
// (classification token) output; returns a single logit.
struct ClsHead {
  Linear l1;
  Linear l2;

  static ClsHead create(std::size_t d_e, std::uint64_t root_seed,
                        const std::string& prefix = "cls_head") {
    return {Linear::create(d_e, d_e, root_seed, prefix + ".l1"),
            Linear::create(d_e, 1, root_seed, prefix + ".l2")};
  }

  Tensor logit(const Tensor& H) const {
    Tensor first = slice_rows(H, 0, 1);
    Tensor hidden = tanh_t(l1.apply(first));
    return reshape(l2.apply(hidden), {1});
  }

  void collect(const std::string& prefix, ParamList& out) const {
    l1.collect(prefix + ".l1", out);
    l2.collect(prefix + ".l2", out);
  }
};

// Masking for the language-modeling objective.
struct MaskResult {
  std::vector<std::size_t> input_ids;  // sequence after replacement
  std::vector<std::size_t> positions;  // selected positions
  std::vector<std::size_t> targets;    // original ids at those positions
};

// Each non-special position is selected independently with the given rate;
// selected positions get [MASK] 80% of the time, a random ordinary token 10%,
// and stay unchanged 10%.
inline MaskResult mask_tokens(const std::vector<std::size_t>& ids, const Vocabulary& vocab,
                              double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("mask_tokens: rate outside [0,1]");
  MaskResult r;
  r.input_ids = ids;
  RandomStream rng(seed);
  for (std::size_t p = 0; p < ids.size(); ++p) {
    if (Vocabulary::is_special(ids[p])) continue;
    if (!(rng.uniform01() < rate)) continue;
    r.positions.push_back(p);
    r.targets.push_back(ids[p]);
    const double action = rng.uniform01();
    if (action < 0.8) {
      r.input_ids[p] = Vocabulary::kMask;
    } else if (action < 0.9) {
      const std::size_t ordinary = vocab.size() - Vocabulary::kReserved;
      r.input_ids[p] = Vocabulary::kReserved + rng.next_below(ordinary);
    }  // else unchanged
  }
  return r;
}

}  // namespace dyncwe
