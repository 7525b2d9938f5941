#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "dyncwe/graph.hpp"
#include "dyncwe/rng.hpp"
#include "dyncwe/vocab.hpp"

namespace dyncwe {

enum class Label { positive, negative };
enum class Split { unassigned, train, dev, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
    default: return "unassigned";
  }
}

struct Document {
  std::string text;
  std::string social_id;
  std::int64_t timestamp = 0;
  std::optional<Label> label;
  std::optional<std::string> author_id;
  std::optional<bool> helpful;
};

struct Corpus {
  std::vector<Document> docs;
  std::vector<Split> split;  // parallel to docs

  std::size_t size() const { return docs.size(); }

  std::pair<std::int64_t, std::int64_t> time_bounds() const {
    if (docs.empty()) throw std::runtime_error("Corpus: time bounds of an empty corpus");
    std::int64_t lo = docs.front().timestamp, hi = lo;
    for (const auto& d : docs) {
      lo = std::min(lo, d.timestamp);
      hi = std::max(hi, d.timestamp);
    }
    return {lo, hi};
  }

  std::vector<std::size_t> indices_of(Split which) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < docs.size(); ++i)
      if (i < split.size() && split[i] == which) out.push_back(i);
    return out;
  }

  std::vector<std::string> social_ids() const {
    std::set<std::string> seen;
    for (const auto& d : docs) seen.insert(d.social_id);
    return {seen.begin(), seen.end()};
  }
};

// Star ratings to sentiment classes: 4/5 positive, 1/2 negative, 3 discarded.
enum class RatingClass { positive, negative, discard };

inline RatingClass convert_rating(int stars) {
  if (stars < 1 || stars > 5)
    throw std::invalid_argument("convert_rating: stars " + std::to_string(stars) +
                                " outside 1..5");
  if (stars >= 4) return RatingClass::positive;
  if (stars <= 2) return RatingClass::negative;
  return RatingClass::discard;
}

struct LoadReport {
  std::size_t valid = 0;
  std::size_t skipped = 0;
  std::map<std::string, std::size_t> reasons;
};

namespace detail {

inline const std::set<std::string>& known_doc_keys() {
  static const std::set<std::string> keys = {"text", "social", "time",
                                             "label", "author", "helpful", "split"};
  return keys;
}

// Parses one corpus line; returns the reason string on failure.
inline std::optional<std::string> parse_doc_line(const std::string& line, Document& doc,
                                                 Split& split) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return "invalid json";
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known_doc_keys().count(key)) return "unknown key '" + key + "'";
  }
  if (!j.contains("text") || !j["text"].is_string() || j["text"].get<std::string>().empty())
    return "missing or empty text";
  if (!j.contains("social") || !j["social"].is_string() ||
      j["social"].get<std::string>().empty())
    return "missing social id";
  if (!j.contains("time") || !j["time"].is_number_integer()) return "unparseable timestamp";
  doc.text = j["text"].get<std::string>();
  doc.social_id = j["social"].get<std::string>();
  doc.timestamp = j["time"].get<std::int64_t>();
  if (j.contains("label")) {
    const auto& l = j["label"];
    if (l.is_number_integer()) {
      const int stars = l.get<int>();
      if (stars < 1 || stars > 5) return "label out of range";
      switch (convert_rating(stars)) {
        case RatingClass::positive: doc.label = Label::positive; break;
        case RatingClass::negative: doc.label = Label::negative; break;
        case RatingClass::discard: doc.label.reset(); break;
      }
    } else if (l.is_string()) {
      const std::string s = l.get<std::string>();
      if (s == "pos")
        doc.label = Label::positive;
      else if (s == "neg")
        doc.label = Label::negative;
      else
        return "unrecognized label '" + s + "'";
    } else {
      return "label must be stars or pos/neg";
    }
  }
  if (j.contains("author")) {
    if (!j["author"].is_string()) return "author must be a string";
    doc.author_id = j["author"].get<std::string>();
  }
  if (j.contains("helpful")) {
    if (!j["helpful"].is_boolean()) return "helpful must be a boolean";
    doc.helpful = j["helpful"].get<bool>();
  }
  split = Split::unassigned;
  if (j.contains("split")) {
    const std::string s = j["split"].is_string() ? j["split"].get<std::string>() : "";
    if (s == "train")
      split = Split::train;
    else if (s == "dev")
      split = Split::dev;
    else if (s == "test")
      split = Split::test;
    else
      return "unrecognized split";
  }
  return std::nullopt;
}

}  // namespace detail

// Line-delimited JSON records. Invalid lines are skipped and counted; a file
// with no valid record is rejected.
inline Corpus load_corpus(const std::filesystem::path& path, LoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_corpus: cannot read " + path.string());
  Corpus corpus;
  LoadReport local;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Document doc;
    Split split;
    if (auto reason = detail::parse_doc_line(line, doc, split)) {
      ++local.skipped;
      ++local.reasons[*reason];
      continue;
    }
    corpus.docs.push_back(std::move(doc));
    corpus.split.push_back(split);
    ++local.valid;
  }
  if (report) *report = local;
  if (corpus.docs.empty()) {
    std::string msg = "load_corpus: no valid records in " + path.string();
    for (const auto& [reason, n] : local.reasons)
      msg += "; " + reason + ": " + std::to_string(n);
    throw std::runtime_error(msg);
  }
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_corpus: cannot write " + path.string());
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
    const Document& d = corpus.docs[i];
    nlohmann::json j;
    j["text"] = d.text;
    j["social"] = d.social_id;
    j["time"] = d.timestamp;
    if (d.label) j["label"] = *d.label == Label::positive ? "pos" : "neg";
    if (d.author_id) j["author"] = *d.author_id;
    if (d.helpful) j["helpful"] = *d.helpful;
    if (i < corpus.split.size() && corpus.split[i] != Split::unassigned)
      j["split"] = split_name(corpus.split[i]);
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("save_corpus: write failed for " + path.string());
}

struct FilterOptions {
  std::size_t min_words = 10;
  std::size_t min_community_docs = 100;
  bool dedupe = true;
  bool drop_unhelpful = false;
};

struct FilterReport {
  std::size_t removed_unhelpful = 0;
  std::size_t removed_short = 0;
  std::size_t removed_duplicate = 0;
  std::size_t removed_small_community = 0;

  std::string summary() const {
    std::ostringstream os;
    os << "unhelpful: " << removed_unhelpful << ", short: " << removed_short
       << ", duplicate: " << removed_duplicate
       << ", small community: " << removed_small_community;
    return os.str();
  }
};

// Removes unhelpful reviews (when enabled), short documents, exact duplicate
// texts, and whole communities below the document threshold — in that order,
// so community counts are taken over the already-cleaned set and the filter
// is idempotent.
inline Corpus filter_corpus(const Corpus& corpus, const FilterOptions& opts,
                            FilterReport* report = nullptr) {
  FilterReport local;
  std::vector<std::size_t> kept;
  std::unordered_set<std::string> seen_texts;
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
    const Document& d = corpus.docs[i];
    if (opts.drop_unhelpful && d.helpful && !*d.helpful) {
      ++local.removed_unhelpful;
      continue;
    }
    if (whitespace_words(d.text).size() < opts.min_words) {
      ++local.removed_short;
      continue;
    }
    if (opts.dedupe && !seen_texts.insert(d.text).second) {
      ++local.removed_duplicate;
      continue;
    }
    kept.push_back(i);
  }
  std::unordered_map<std::string, std::size_t> community_docs;
  for (std::size_t i : kept) ++community_docs[corpus.docs[i].social_id];
  Corpus out;
  for (std::size_t i : kept) {
    if (community_docs[corpus.docs[i].social_id] < opts.min_community_docs) {
      ++local.removed_small_community;
      continue;
    }
    out.docs.push_back(corpus.docs[i]);
    out.split.push_back(i < corpus.split.size() ? corpus.split[i] : Split::unassigned);
  }
  if (report) *report = local;
  if (out.docs.empty())
    throw std::runtime_error("filter_corpus: nothing survived (" + local.summary() + ")");
  return out;
}

// Frequency-based community subsampling: a document from a community with
// share f of the corpus is kept with probability min(1, sqrt(threshold/f)).
inline Corpus subsample_communities(const Corpus& corpus, double threshold, std::uint64_t seed) {
  if (!(threshold > 0)) throw std::invalid_argument("subsample_communities: threshold must be positive");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& d : corpus.docs) ++counts[d.social_id];
  const double n = static_cast<double>(corpus.docs.size());
  Corpus out;
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
    const double f = static_cast<double>(counts[corpus.docs[i].social_id]) / n;
    const double keep = std::min(1.0, std::sqrt(threshold / f));
    RandomStream rng(derive_seed(seed, "subsample", i));
    if (rng.uniform01() < keep) {
      out.docs.push_back(corpus.docs[i]);
      out.split.push_back(i < corpus.split.size() ? corpus.split[i] : Split::unassigned);
    }
  }
  return out;
}

// community -> author -> number of documents
using AuthorLog = std::map<std::string, std::map<std::string, std::size_t>>;

inline AuthorLog collect_author_logs(const Corpus& corpus) {
  AuthorLog log;
  for (const auto& d : corpus.docs) {
    log.try_emplace(d.social_id);  // every community becomes a node
    if (d.author_id) ++log[d.social_id][*d.author_id];
  }
  return log;
}

// Undirected graph over communities weighted by the Jaccard similarity of
// their qualifying-author sets; zero-weight edges are omitted.
inline SocialGraph build_overlap_graph(const AuthorLog& author_logs,
                                       std::size_t min_author_docs = 10) {
  std::vector<std::pair<std::string, std::set<std::string>>> qualified;
  for (const auto& [community, authors] : author_logs) {
    std::set<std::string> q;
    for (const auto& [author, n] : authors)
      if (n >= min_author_docs) q.insert(author);
    qualified.emplace_back(community, std::move(q));
  }
  SocialGraph g(false);
  for (const auto& [community, q] : qualified) g.add_node(community);
  for (std::size_t a = 0; a < qualified.size(); ++a)
    for (std::size_t b = a + 1; b < qualified.size(); ++b) {
      const auto& ua = qualified[a].second;
      const auto& ub = qualified[b].second;
      std::size_t inter = 0;
      for (const auto& u : ua) inter += ub.count(u);
      const std::size_t uni = ua.size() + ub.size() - inter;
      if (uni == 0 || inter == 0) continue;
      g.add_edge(qualified[a].first, qualified[b].first,
                 static_cast<double>(inter) / static_cast<double>(uni));
    }
  return g;
}

// Directed unit-weight trust edges over the corpus's social ids. Endpoints
// outside the id set are kept with a warning; duplicates collapse.
inline SocialGraph load_trust_graph(const std::filesystem::path& path,
                                    const std::vector<std::string>& social_ids,
                                    std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_trust_graph: cannot read " + path.string());
  SocialGraph g(true);
  std::unordered_set<std::string> known(social_ids.begin(), social_ids.end());
  for (const auto& id : social_ids) g.add_node(id);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "#directed") continue;
    std::istringstream fields(line);
    std::string src, dst;
    if (!(fields >> src >> dst))
      throw std::runtime_error("load_trust_graph: malformed line " + std::to_string(lineno));
    if (src == dst) {
      if (warnings) warnings->push_back("self-loop dropped: " + src);
      continue;
    }
    for (const auto& endpoint : {src, dst})
      if (!known.count(endpoint)) {
        if (warnings) warnings->push_back("unknown social id: " + endpoint);
        known.insert(endpoint);
      }
    g.add_edge(src, dst, 1.0);
  }
  return g;
}

struct SplitFractions {
  double train = 0.7;
  double dev = 0.1;
  double test = 0.2;
};

// Random disjoint partition recorded in corpus.split; sizes land within one
// document of fraction * N.
inline void split_corpus(Corpus& corpus, const SplitFractions& fractions, std::uint64_t seed) {
  if (!(fractions.train > 0) || !(fractions.dev > 0) || !(fractions.test > 0))
    throw std::invalid_argument("split_corpus: fractions must be positive");
  if (std::abs(fractions.train + fractions.dev + fractions.test - 1.0) > 1e-9)
    throw std::invalid_argument("split_corpus: fractions must sum to 1");
  const std::size_t n = corpus.docs.size();
  if (n < 3) throw std::invalid_argument("split_corpus: need at least 3 documents");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RandomStream rng(derive_seed(seed, "split"));
  for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[rng.next_below(i + 1)]);
  const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * n));
  const auto n_train_dev =
      static_cast<std::size_t>(std::llround((fractions.train + fractions.dev) * n));
  corpus.split.assign(n, Split::test);
  for (std::size_t r = 0; r < n; ++r) {
    if (r < n_train)
      corpus.split[order[r]] = Split::train;
    else if (r < n_train_dev)
      corpus.split[order[r]] = Split::dev;
  }
}

}  // namespace dyncwe
