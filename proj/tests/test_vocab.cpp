#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "dyncwe/vocab.hpp"

using namespace dyncwe;

TEST_CASE("single-type corpus learns the full word") {
  Vocabulary v = Vocabulary::build({"aa aa"}, 8);
  REQUIRE(v.find("aa").has_value());
  REQUIRE(v.find("a").has_value());
}

TEST_CASE("reserved ids occupy fixed positions") {
  Vocabulary v = Vocabulary::build({"ab ab cd"}, 16);
  REQUIRE(v.piece(0) == "[CLS]");
  REQUIRE(v.piece(1) == "[SEP]");
  REQUIRE(v.piece(2) == "[MASK]");
  REQUIRE(v.piece(3) == "[PAD]");
  REQUIRE(v.piece(4) == "[UNK]");
  for (std::size_t id = 0; id < v.size(); ++id)
    REQUIRE(v.find(v.piece(id)) == id);  // every piece decodes back
}

TEST_CASE("target size at or below the reserved set is rejected") {
  REQUIRE_THROWS_AS(Vocabulary::build({"a b"}, 5), std::invalid_argument);
  REQUIRE_THROWS_AS(Vocabulary::build({}, 100), std::invalid_argument);
}

TEST_CASE("merge count accounting on a toy corpus") {
  // chars: a, b -> base 2. Plenty of repeats, so merges run to the target.
  Vocabulary v = Vocabulary::build({"abab abab abab ab ab aa bb"}, 12);
  REQUIRE(v.size() <= 12);
  REQUIRE(v.merge_count() == v.size() - v.base_count() - Vocabulary::kReserved);
  REQUIRE(v.merge_count() > 0);
}

TEST_CASE("unseen strings tokenize to unknown, never fail") {
  Vocabulary v = Vocabulary::build({"aa bb aa bb"}, 10);
  auto ids = v.tokenize_word("zq");
  REQUIRE(ids == std::vector<std::size_t>{Vocabulary::kUnk, Vocabulary::kUnk});
  auto mixed = v.tokenize_word("az");
  REQUIRE(mixed.size() == 2);
  REQUIRE(mixed[1] == Vocabulary::kUnk);
}

TEST_CASE("empty text tokenizes to [CLS][SEP]") {
  Vocabulary v = Vocabulary::build({"aa bb"}, 10);
  TokenSequence seq = tokenize(v, "");
  REQUIRE(seq.ids == std::vector<std::size_t>{Vocabulary::kCls, Vocabulary::kSep});
  REQUIRE(seq.word_spans.empty());
}

TEST_CASE("in-vocabulary word maps to a one-element span") {
  Vocabulary v = Vocabulary::build({"hello hello hello hello"}, 32);
  REQUIRE(v.find("hello").has_value());
  TokenSequence seq = tokenize(v, "hello");
  REQUIRE(seq.word_spans.size() == 1);
  REQUIRE(seq.word_spans[0] == std::pair<std::size_t, std::size_t>{1, 1});
  REQUIRE(seq.ids.size() == 3);
}

TEST_CASE("word forced into two pieces gets a two-element span") {
  // 'xy' never merges (appears once), so 'xyxy'... use chars only seen once.
  Vocabulary v = Vocabulary::build({"ab ab ab cd"}, 10);  // merges 'ab' only
  REQUIRE(v.find("ab").has_value());
  REQUIRE_FALSE(v.find("abc").has_value());
  TokenSequence seq = tokenize(v, "abc");
  REQUIRE(seq.word_spans.size() == 1);
  REQUIRE(seq.word_spans[0].second == 2);  // "ab" + "c"
  REQUIRE(seq.ids[1] == *v.find("ab"));
  REQUIRE(seq.ids[2] == *v.find("c"));
}

TEST_CASE("greedy longest match is deterministic and spans partition") {
  Vocabulary v = Vocabulary::build({"aaa aaa aa aa a"}, 12);
  TokenSequence s1 = tokenize(v, "aaa aa a");
  TokenSequence s2 = tokenize(v, "aaa aa a");
  REQUIRE(s1.ids == s2.ids);
  // spans cover exactly the non-special positions
  std::size_t covered = 0;
  for (auto [start, len] : s1.word_spans) {
    REQUIRE(start >= 1);
    covered += len;
  }
  REQUIRE(covered == s1.ids.size() - 2);
}

TEST_CASE("truncation drops whole words") {
  Vocabulary v = Vocabulary::build({"aa bb cc aa bb cc"}, 16);
  TokenSequence seq = tokenize(v, "aa bb cc", 4);
  REQUIRE(seq.ids.size() <= 4);
  REQUIRE(seq.word_spans.size() == 2);
  std::size_t covered = 0;
  for (auto [start, len] : seq.word_spans) covered += len;
  REQUIRE(covered == seq.ids.size() - 2);
}

TEST_CASE("vocabulary round-trips through the tab-separated format") {
  Vocabulary v = Vocabulary::build({"alpha beta gamma alpha beta alpha"}, 40);
  auto path = std::filesystem::temp_directory_path() / "dyncwe_vocab_test.tsv";
  v.save(path);
  Vocabulary u = Vocabulary::load(path);
  REQUIRE(u.size() == v.size());
  for (std::size_t id = 0; id < v.size(); ++id) REQUIRE(u.piece(id) == v.piece(id));
  TokenSequence a = tokenize(v, "alpha beta unseen");
  TokenSequence b = tokenize(u, "alpha beta unseen");
  REQUIRE(a.ids == b.ids);
  std::filesystem::remove(path);
}

TEST_CASE("build is deterministic given corpus and target") {
  std::vector<std::string> corpus = {"the cat sat", "the cat ran", "a cat sat"};
  Vocabulary a = Vocabulary::build(corpus, 30);
  Vocabulary b = Vocabulary::build(corpus, 30);
  REQUIRE(a.size() == b.size());
  for (std::size_t id = 0; id < a.size(); ++id) REQUIRE(a.piece(id) == b.piece(id));
}

TEST_CASE("utf8 characters stay whole") {
  Vocabulary v = Vocabulary::build({"héllo héllo wörld"}, 24);
  auto ids = v.tokenize_word("héllo");
  for (std::size_t id : ids) REQUIRE(id != Vocabulary::kUnk);
  std::string rebuilt;
  for (std::size_t id : ids) rebuilt += v.piece(id);
  REQUIRE(rebuilt == "héllo");
}
