#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dyncwe/checkpoint.hpp"
#include "dyncwe/data.hpp"
#include "dyncwe/model.hpp"
#include "dyncwe/node2vec.hpp"

namespace dyncwe {

struct TrainConfig {
  Task task = Task::mlm;
  Variant variant = Variant::dcwe;
  double lambda = 1.0;
  double learning_rate = 1e-6;
  std::size_t epochs = 3;
  std::size_t batch_size = 0;  // 0 -> task default: 4 for mlm, 8 for sentiment
  std::uint64_t seed = 42;
  bool freeze_embeddings = false;
  double mask_rate = 0.15;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  std::size_t effective_batch_size() const {
    if (batch_size > 0) return batch_size;
    return task == Task::mlm ? 4 : 8;
  }

  void validate() const {
    if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
    if (lambda < 0) throw std::invalid_argument("TrainConfig: lambda must be non-negative");
    if (mask_rate < 0 || mask_rate > 1) throw std::invalid_argument("TrainConfig: mask rate outside [0,1]");
  }
};

// Adam with bias correction; parameters that never received a gradient are
// left untouched.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const ParamList& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, p] : params.items) {
      if (!p.requires_grad() || !p.has_grad()) continue;
      auto& state = state_[name];
      if (state.m.empty()) {
        state.m.assign(p.size(), 0.0);
        state.v.assign(p.size(), 0.0);
      }
      auto& values = const_cast<Tensor&>(p).values();
      const auto& g = p.grad();
      for (std::size_t i = 0; i < values.size(); ++i) {
        state.m[i] = beta1_ * state.m[i] + (1.0 - beta1_) * g[i];
        state.v[i] = beta2_ * state.v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        values[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

// One prepared document: token ids plus extralinguistic coordinates.
struct PreparedDoc {
  std::vector<std::size_t> ids;
  std::size_t social_idx = 0;
  double t_rescaled = 0.0;
  std::optional<Label> label;
};

inline std::vector<PreparedDoc> prepare_docs(const DynamicModel& model, const Corpus& corpus,
                                             const std::vector<std::size_t>& indices) {
  std::vector<PreparedDoc> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const Document& d = corpus.docs[i];
    PreparedDoc p;
    p.ids = tokenize(model.vocab(), d.text, model.encoder_config().max_len).ids;
    p.social_idx = model.social_index(d.social_id);  // throws on unresolved ids
    p.t_rescaled = rescale_time(d.timestamp, model.bounds());
    p.label = d.label;
    out.push_back(std::move(p));
  }
  return out;
}

// L_total = L_task + mean-over-batch prior. For mlm the task term is the
// mean per-masked-token negative log-likelihood across the whole batch; for
// sentiment it is mean binary cross-entropy. Returns an invalid tensor for
// an mlm batch with no masked tokens.
struct BatchLoss {
  Tensor total;      // invalid when the batch carries no signal
  Tensor task;
  Tensor prior;      // batch-averaged
  std::size_t masked_tokens = 0;
};

inline BatchLoss total_loss(const DynamicModel& model, const std::vector<PreparedDoc>& batch,
                            const std::vector<MaskResult>& masks, double lambda,
                            const Tensor& social_all, RandomStream* drop_rng = nullptr) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  if (model.task() == Task::mlm && masks.size() != batch.size())
    throw std::invalid_argument("total_loss: one mask per document required");
  BatchLoss out;
  Tensor nll_sum, bce_sum, prior_sum;
  std::size_t masked_total = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const PreparedDoc& doc = batch[b];
    if (model.task() == Task::mlm) {
      const MaskResult& mask = masks[b];
      DynamicModel::DocForward f =
          model.forward_sequence(mask.input_ids, doc.social_idx, doc.t_rescaled, social_all,
                                 lambda, false, drop_rng);
      prior_sum = prior_sum.valid() ? add(prior_sum, f.prior) : f.prior;
      if (!mask.positions.empty()) {
        Tensor logits = model.mlm_head().logits(f.hidden, mask.positions);
        Tensor picked = gather_cols_per_row(log_softmax_rows(logits), mask.targets);
        Tensor doc_nll = neg(sum(picked));
        nll_sum = nll_sum.valid() ? add(nll_sum, doc_nll) : doc_nll;
        masked_total += mask.positions.size();
      }
    } else {
      if (!doc.label) throw std::invalid_argument("total_loss: sentiment document without label");
      DynamicModel::DocForward f = model.forward_sequence(doc.ids, doc.social_idx, doc.t_rescaled,
                                                          social_all, lambda, false, drop_rng);
      prior_sum = prior_sum.valid() ? add(prior_sum, f.prior) : f.prior;
      Tensor z = model.cls_head().logit(f.hidden);
      // binary cross-entropy via softplus: -log sigma(z) = softplus(-z)
      Tensor bce = *doc.label == Label::positive ? softplus(neg(z)) : softplus(z);
      bce_sum = bce_sum.valid() ? add(bce_sum, bce) : bce;
    }
  }
  out.prior = scale(prior_sum, 1.0 / static_cast<double>(batch.size()));
  out.masked_tokens = masked_total;
  if (model.task() == Task::mlm) {
    if (masked_total == 0) return out;  // no signal in this batch
    out.task = scale(nll_sum, 1.0 / static_cast<double>(masked_total));
  } else {
    out.task = scale(bce_sum, 1.0 / static_cast<double>(batch.size()));
  }
  out.total = add(out.task, out.prior);
  return out;
}

// exp(mean per-masked-token NLL) under a fixed evaluation masking seed.
inline double evaluate_perplexity(const DynamicModel& model, const Corpus& corpus,
                                  const std::vector<std::size_t>& indices,
                                  double mask_rate, std::uint64_t eval_seed,
                                  const SocialGraph& graph) {
  if (model.task() != Task::mlm) throw std::invalid_argument("evaluate_perplexity: mlm models only");
  auto docs = prepare_docs(model, corpus, indices);
  Tensor social_all;
  if (variant_uses_social(model.variant()))
    social_all = model.social_forward_all(graph.attention_neighborhoods());
  double nll_total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    MaskResult mask =
        mask_tokens(docs[i].ids, model.vocab(), mask_rate, derive_seed(eval_seed, "evaldoc", i));
    if (mask.positions.empty()) continue;
    DynamicModel::DocForward f = model.forward_sequence(mask.input_ids, docs[i].social_idx,
                                                        docs[i].t_rescaled, social_all, 0.0);
    Tensor logits = model.mlm_head().logits(f.hidden, mask.positions);
    Tensor picked = gather_cols_per_row(log_softmax_rows(logits), mask.targets);
    for (double lp : picked.values()) nll_total -= lp;
    count += mask.positions.size();
  }
  if (count == 0) throw std::runtime_error("evaluate_perplexity: no masked tokens in the split");
  return std::exp(nll_total / static_cast<double>(count));
}

// F1 of the positive class at decision threshold 0.5 (logit > 0).
inline double evaluate_f1(const DynamicModel& model, const Corpus& corpus,
                          const std::vector<std::size_t>& indices, const SocialGraph& graph) {
  if (model.task() != Task::sentiment) throw std::invalid_argument("evaluate_f1: sentiment models only");
  auto docs = prepare_docs(model, corpus, indices);
  Tensor social_all;
  if (variant_uses_social(model.variant()))
    social_all = model.social_forward_all(graph.attention_neighborhoods());
  std::size_t tp = 0, fp = 0, fn = 0, gold_pos = 0;
  for (const PreparedDoc& doc : docs) {
    if (!doc.label) continue;
    DynamicModel::DocForward f =
        model.forward_sequence(doc.ids, doc.social_idx, doc.t_rescaled, social_all, 0.0);
    const double z = model.cls_head().logit(f.hidden).value();
    const bool pred_pos = z > 0.0;
    const bool is_pos = *doc.label == Label::positive;
    gold_pos += is_pos;
    if (pred_pos && is_pos) ++tp;
    if (pred_pos && !is_pos) ++fp;
    if (!pred_pos && is_pos) ++fn;
  }
  if (gold_pos == 0) throw std::runtime_error("evaluate_f1: no positive examples in the split");
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

struct MetricPoint {
  std::size_t epoch;
  std::string split;
  std::string metric;
  double value;
};

struct FitResult {
  std::vector<MetricPoint> history;
  std::size_t best_epoch = 0;
  double best_dev_metric = 0.0;
  bool diverged = false;
  std::size_t steps = 0;
};

inline double dev_metric(const DynamicModel& model, const TrainConfig& cfg, const Corpus& corpus,
                         const SocialGraph& graph) {
  const auto dev = corpus.indices_of(Split::dev);
  if (cfg.task == Task::mlm)
    return evaluate_perplexity(model, corpus, dev, cfg.mask_rate, derive_seed(cfg.seed, "eval"),
                               graph);
  return evaluate_f1(model, corpus, dev, graph);
}

// Trains in place; on return the model holds the best-dev-epoch parameters.
// A non-finite loss aborts with the parameters of the last finite step.
inline FitResult fit(const TrainConfig& cfg, DynamicModel& model, const Corpus& corpus,
                     const SocialGraph& graph) {
  cfg.validate();
  model.check_graph(graph);
  model.set_freeze_embeddings(cfg.freeze_embeddings);
  FitResult result;
  if (cfg.epochs == 0) return result;

  std::vector<std::size_t> train_idx = corpus.indices_of(Split::train);
  if (cfg.task == Task::sentiment) {
    std::erase_if(train_idx, [&](std::size_t i) { return !corpus.docs[i].label.has_value(); });
  }
  if (train_idx.empty()) throw std::runtime_error("fit: no usable training documents");
  auto docs = prepare_docs(model, corpus, train_idx);
  // dev docs resolve too, before any training happens
  prepare_docs(model, corpus, corpus.indices_of(Split::dev));

  const auto nbrs = graph.attention_neighborhoods();
  const std::size_t batch_size = cfg.effective_batch_size();
  ParamList params = model.parameters();
  Adam adam(cfg.beta1, cfg.beta2, cfg.adam_eps);

  const bool maximize = cfg.task == Task::sentiment;
  double best = maximize ? -std::numeric_limits<double>::infinity()
                         : std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_values;
  const char* metric_name = cfg.task == Task::mlm ? "perplexity" : "f1";

  std::vector<std::size_t> order(docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs && !result.diverged; ++epoch) {
    RandomStream shuffle(derive_seed(cfg.seed, "shuffle", epoch));
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[shuffle.next_below(i + 1)]);

    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::vector<PreparedDoc> batch;
      std::vector<MaskResult> masks;
      for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) {
        batch.push_back(docs[order[k]]);
        if (cfg.task == Task::mlm)
          masks.push_back(mask_tokens(batch.back().ids, model.vocab(), cfg.mask_rate,
                                      derive_seed(cfg.seed, "mask",
                                                  epoch * 1000003 + order[k])));
      }
      try {
        Tape tape;
        TapeScope scope(tape);
        RandomStream drop_rng(derive_seed(cfg.seed, "dropout", epoch * 1000003 + start));
        RandomStream* drop = model.encoder_config().dropout > 0.0 ? &drop_rng : nullptr;
        Tensor social_all;
        if (variant_uses_social(model.variant())) social_all = model.social_forward_all(nbrs);
        BatchLoss loss = total_loss(model, batch, masks, cfg.lambda, social_all, drop);
        if (!loss.total.valid()) continue;  // batch without masked tokens
        if (!std::isfinite(loss.total.value())) {
          result.diverged = true;
          break;
        }
        backpropagate(tape, loss.total);
        adam.step(params, cfg.learning_rate);
        ++result.steps;
        epoch_loss += loss.total.value();
        ++epoch_batches;
      } catch (const NonFiniteError&) {
        result.diverged = true;  // a primitive rejected a non-finite intermediate
        break;
      }
    }
    if (epoch_batches > 0)
      result.history.push_back(
          {epoch, "train", "loss", epoch_loss / static_cast<double>(epoch_batches)});
    if (result.diverged) break;

    const double dev = dev_metric(model, cfg, corpus, graph);
    result.history.push_back({epoch, "dev", metric_name, dev});
    const bool improved = maximize ? dev > best : dev < best;
    if (improved) {
      best = dev;
      result.best_epoch = epoch;
      best_values.clear();
      for (const auto& [name, p] : params.items) best_values.push_back(p.values());
    }
  }

  if (!best_values.empty()) {
    std::size_t i = 0;
    for (const auto& [name, p] : params.items) const_cast<Tensor&>(p).values() = best_values[i++];
    result.best_dev_metric = best;
  }
  return result;
}

inline void write_history_csv(const std::filesystem::path& path,
                              const std::vector<MetricPoint>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_history_csv: cannot write " + path.string());
  out << "epoch,split,metric,value\n";
  out.precision(17);
  for (const auto& p : history)
    out << p.epoch << ',' << p.split << ',' << p.metric << ',' << p.value << '\n';
}

struct ModelBuildOptions {
  EncoderConfig encoder;
  DynWidths widths;
  std::size_t vocab_target = 1000;
  std::optional<std::filesystem::path> social_init;
};

// Assembles a model for a corpus + graph: vocabulary from the training
// split, time bounds from the whole corpus, social contexts from the graph,
// and optional node2vec initialization of the social input table.
inline DynamicModel build_model(const TrainConfig& cfg, const ModelBuildOptions& opts,
                                const Corpus& corpus, const SocialGraph& graph) {
  std::vector<std::size_t> train_idx = corpus.indices_of(Split::train);
  std::vector<std::string> texts;
  if (train_idx.empty()) {
    for (const auto& d : corpus.docs) texts.push_back(d.text);
  } else {
    for (std::size_t i : train_idx) texts.push_back(corpus.docs[i].text);
  }
  Vocabulary vocab = Vocabulary::build(texts, opts.vocab_target);
  TimeBounds bounds{corpus.time_bounds().first, corpus.time_bounds().second};
  DynamicModel model = DynamicModel::create(vocab, opts.encoder, opts.widths, cfg.task,
                                            cfg.variant, graph.nodes(), bounds, cfg.seed);
  model.set_freeze_embeddings(cfg.freeze_embeddings);
  if (opts.social_init) {
    auto table = load_embedding_table(*opts.social_init);
    std::vector<std::vector<double>> rows;
    for (const auto& name : graph.nodes()) {
      auto it = table.find(name);
      if (it == table.end())
        throw std::runtime_error("build_model: social init lacks node '" + name + "'");
      if (it->second.size() != opts.widths.d_s)
        throw std::runtime_error("build_model: social init width " +
                                 std::to_string(it->second.size()) + " != d_s " +
                                 std::to_string(opts.widths.d_s));
      rows.push_back(it->second);
    }
    model.social_encoder().set_table(rows);
  }
  return model;
}

struct GridCell {
  double learning_rate;
  std::size_t epochs;
  double dev_metric = 0.0;
  std::size_t best_epoch = 0;
  bool diverged = false;
};

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t best_index = 0;
};

// Trains one cell per (learning rate, epoch budget) with identical seeds.
// Winner: best dev metric; ties break toward lower learning rate, then
// fewer epochs — the iteration order below.
template <typename ModelFactory>
GridResult grid_search(const TrainConfig& base, const std::vector<double>& learning_rates,
                       const std::vector<std::size_t>& epoch_budgets, const Corpus& corpus,
                       const SocialGraph& graph, ModelFactory make_model) {
  if (learning_rates.empty() || epoch_budgets.empty())
    throw std::invalid_argument("grid_search: empty grid");
  std::vector<double> lrs = learning_rates;
  std::vector<std::size_t> budgets = epoch_budgets;
  std::sort(lrs.begin(), lrs.end());
  std::sort(budgets.begin(), budgets.end());

  GridResult result;
  const bool maximize = base.task == Task::sentiment;
  double best = maximize ? -std::numeric_limits<double>::infinity()
                         : std::numeric_limits<double>::infinity();
  for (double lr : lrs)
    for (std::size_t epochs : budgets) {
      TrainConfig cfg = base;
      cfg.learning_rate = lr;
      cfg.epochs = epochs;
      DynamicModel model = make_model();
      FitResult fitres = fit(cfg, model, corpus, graph);
      GridCell cell{lr, epochs, fitres.best_dev_metric, fitres.best_epoch, fitres.diverged};
      if (!cell.diverged) {
        const bool improved = maximize ? cell.dev_metric > best : cell.dev_metric < best;
        if (improved) {
          best = cell.dev_metric;
          result.best_index = result.cells.size();
        }
      }
      result.cells.push_back(cell);
    }
  return result;
}

}  // namespace dyncwe
