#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dyncwe {

// Splits a UTF-8 string into code-point substrings. Invalid continuation
// bytes fall back to single-byte symbols.
inline std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if ((b & 0xE0) == 0xC0)
      len = 2;
    else if ((b & 0xF0) == 0xE0)
      len = 3;
    else if ((b & 0xF8) == 0xF0)
      len = 4;
    if (i + len > s.size()) len = 1;
    for (std::size_t j = 1; j < len; ++j)
      if ((static_cast<unsigned char>(s[i + j]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

inline std::vector<std::string> whitespace_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

// Subword vocabulary: five reserved tokens at fixed ids, base characters,
// and greedy frequency-based merges learned from a corpus.
class Vocabulary {
 public:
  static constexpr std::size_t kCls = 0;
  static constexpr std::size_t kSep = 1;
  static constexpr std::size_t kMask = 2;
  static constexpr std::size_t kPad = 3;
  static constexpr std::size_t kUnk = 4;
  static constexpr std::size_t kReserved = 5;

  static const std::vector<std::string>& reserved_pieces() {
    static const std::vector<std::string> r = {"[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]"};
    return r;
  }

  // Learns merges until the vocabulary reaches target_size or no adjacent
  // pair occurs at least twice. Base characters always stay, so any string
  // over seen characters remains tokenizable.
  static Vocabulary build(const std::vector<std::string>& corpus_texts, std::size_t target_size) {
    if (corpus_texts.empty()) throw std::invalid_argument("Vocabulary: empty corpus");
    if (target_size <= kReserved)
      throw std::invalid_argument("Vocabulary: target_size " + std::to_string(target_size) +
                                  " leaves no room beyond the reserved set");

    std::map<std::string, std::size_t> word_counts;
    for (const auto& text : corpus_texts)
      for (auto& w : whitespace_words(text)) ++word_counts[w];
    if (word_counts.empty()) throw std::invalid_argument("Vocabulary: corpus has no words");

    Vocabulary v;
    for (const auto& r : reserved_pieces()) v.add_piece(r);

    std::set<std::string> base;
    std::vector<std::pair<std::vector<std::string>, std::size_t>> seqs;
    for (const auto& [w, n] : word_counts) {
      auto chars = utf8_chars(w);
      for (const auto& c : chars) base.insert(c);
      seqs.emplace_back(std::move(chars), n);
    }
    for (const auto& c : base) v.add_piece(c);
    v.base_count_ = base.size();

    while (v.pieces_.size() < target_size) {
      std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
      for (const auto& [seq, n] : seqs)
        for (std::size_t i = 0; i + 1 < seq.size(); ++i)
          pair_counts[{seq[i], seq[i + 1]}] += n;
      std::pair<std::string, std::string> best;
      std::size_t best_count = 0;
      for (const auto& [p, n] : pair_counts)
        if (n > best_count) {  // ordered map: first max is lexicographically smallest
          best = p;
          best_count = n;
        }
      if (best_count < 2) break;
      const std::string merged = best.first + best.second;
      v.add_piece(merged);
      ++v.merge_count_;
      for (auto& [seq, n] : seqs) {
        std::vector<std::string> next;
        next.reserve(seq.size());
        std::size_t i = 0;
        while (i < seq.size()) {
          if (i + 1 < seq.size() && seq[i] == best.first && seq[i + 1] == best.second) {
            next.push_back(merged);
            i += 2;
          } else {
            next.push_back(seq[i]);
            ++i;
          }
        }
        seq = std::move(next);
      }
    }
    v.finish();
    return v;
  }

  std::size_t size() const { return pieces_.size(); }
  std::size_t base_count() const { return base_count_; }
  std::size_t merge_count() const { return merge_count_; }

  const std::string& piece(std::size_t id) const {
    if (id >= pieces_.size())
      throw std::invalid_argument("Vocabulary: id " + std::to_string(id) + " out of range");
    return pieces_[id];
  }

  std::optional<std::size_t> find(const std::string& piece) const {
    auto it = index_.find(piece);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  static bool is_special(std::size_t id) { return id < kReserved; }

  // Greedy longest-match segmentation of one word; unseen characters map to
  // the unknown id one character at a time. Reserved surfaces never match.
  std::vector<std::size_t> tokenize_word(const std::string& word) const {
    std::vector<std::size_t> out;
    const auto chars = utf8_chars(word);
    std::size_t i = 0;
    while (i < chars.size()) {
      std::size_t best_len = 0, best_id = kUnk;
      std::string candidate;
      const std::size_t upper = std::min(chars.size() - i, max_piece_chars_);
      for (std::size_t len = 1; len <= upper; ++len) candidate += chars[i + len - 1];
      for (std::size_t len = upper; len >= 1; --len) {
        candidate.resize(piece_byte_len(chars, i, len));
        auto it = match_index_.find(candidate);
        if (it != match_index_.end()) {
          best_len = len;
          best_id = it->second;
          break;
        }
      }
      if (best_len == 0) {
        out.push_back(kUnk);
        i += 1;
      } else {
        out.push_back(best_id);
        i += best_len;
      }
    }
    return out;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("Vocabulary: cannot write " + path.string());
    for (std::size_t id = 0; id < pieces_.size(); ++id) out << pieces_[id] << '\t' << id << '\n';
    if (!out) throw std::runtime_error("Vocabulary: write failed for " + path.string());
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("Vocabulary: cannot read " + path.string());
    return parse(in);
  }

  static Vocabulary from_blob(const std::string& blob) {
    std::istringstream in(blob);
    return parse(in);
  }

  std::string to_blob() const {
    std::ostringstream out;
    for (std::size_t id = 0; id < pieces_.size(); ++id) out << pieces_[id] << '\t' << id << '\n';
    return out.str();
  }

 private:
  static Vocabulary parse(std::istream& in) {
    Vocabulary v;
    std::string line;
    std::size_t expected = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw std::runtime_error("Vocabulary: malformed line '" + line + "'");
      const std::string piece = line.substr(0, tab);
      const std::size_t id = std::stoull(line.substr(tab + 1));
      if (id != expected)
        throw std::runtime_error("Vocabulary: non-contiguous id " + std::to_string(id));
      v.add_piece(piece);
      ++expected;
    }
    if (v.pieces_.size() < kReserved) throw std::runtime_error("Vocabulary: missing reserved ids");
    for (std::size_t i = 0; i < kReserved; ++i)
      if (v.pieces_[i] != reserved_pieces()[i])
        throw std::runtime_error("Vocabulary: reserved id " + std::to_string(i) +
                                 " holds '" + v.pieces_[i] + "'");
    v.finish();
    return v;
  }

  static std::size_t piece_byte_len(const std::vector<std::string>& chars, std::size_t start,
                                    std::size_t len) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < len; ++j) n += chars[start + j].size();
    return n;
  }

  void add_piece(const std::string& p) {
    if (index_.count(p)) throw std::invalid_argument("Vocabulary: duplicate piece '" + p + "'");
    index_[p] = pieces_.size();
    pieces_.push_back(p);
  }

  void finish() {
    match_index_.clear();
    max_piece_chars_ = 1;
    for (std::size_t id = kReserved; id < pieces_.size(); ++id) {
      match_index_[pieces_[id]] = id;
      max_piece_chars_ = std::max(max_piece_chars_, utf8_chars(pieces_[id]).size());
    }
  }

  std::vector<std::string> pieces_;
  std::unordered_map<std::string, std::size_t> index_;        // all pieces
  std::unordered_map<std::string, std::size_t> match_index_;  // reserved excluded
  std::size_t max_piece_chars_ = 1;
  std::size_t base_count_ = 0;
  std::size_t merge_count_ = 0;
};

// A tokenized text: ids bracketed by [CLS]/[SEP], plus the surface words and
// their subword spans. Spans partition the non-special positions.
struct TokenSequence {
  std::vector<std::size_t> ids;
  std::vector<std::string> words;
  std::vector<std::pair<std::size_t, std::size_t>> word_spans;  // (start, len) into ids
  std::vector<std::uint8_t> attention_mask;                     // 1 = attendable
};

// Deterministic segmentation of a whole text. Truncation is word-granular
// so that alignment spans stay whole; max_len 0 means unlimited.
inline TokenSequence tokenize(const Vocabulary& vocab, const std::string& text,
                              std::size_t max_len = 0) {
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kCls);
  const std::size_t body_limit =
      max_len == 0 ? std::numeric_limits<std::size_t>::max()
                   : (max_len < 2 ? 0 : max_len - 2);
  for (const auto& word : whitespace_words(text)) {
    auto pieces = vocab.tokenize_word(word);
    if (pieces.empty()) continue;
    if (seq.ids.size() - 1 + pieces.size() > body_limit) break;
    seq.word_spans.emplace_back(seq.ids.size(), pieces.size());
    seq.words.push_back(word);
    seq.ids.insert(seq.ids.end(), pieces.begin(), pieces.end());
  }
  seq.ids.push_back(Vocabulary::kSep);
  seq.attention_mask.assign(seq.ids.size(), 1);
  return seq;
}

}  // namespace dyncwe
