#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "dyncwe/node2vec.hpp"

using namespace dyncwe;

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("isolated node yields length-1 walks") {
  SocialGraph g(false);
  g.add_node("alone");
  WalkCorpus corpus = sample_walks(g, 10, 80, 3);
  REQUIRE(corpus.walks.size() == 10);
  for (const auto& walk : corpus.walks) {
    REQUIRE(walk.size() == 1);
    REQUIRE(walk[0] == 0);
  }
}

TEST_CASE("two nodes with one edge alternate forever") {
  SocialGraph g(false);
  g.add_edge("a", "b", 0.4);
  WalkCorpus corpus = sample_walks(g, 4, 20, 9);
  REQUIRE(corpus.walks.size() == 8);
  for (const auto& walk : corpus.walks) {
    REQUIRE(walk.size() == 20);
    for (std::size_t i = 1; i < walk.size(); ++i) REQUIRE(walk[i] != walk[i - 1]);
  }
}

TEST_CASE("every walk starts at its designated node and follows edges") {
  SocialGraph g(false);
  g.add_edge("a", "b", 0.5);
  g.add_edge("b", "c", 0.5);
  WalkCorpus corpus = sample_walks(g, 3, 15, 21);
  const auto nbrs = g.walk_neighborhoods();
  for (std::size_t start = 0; start < 3; ++start)
    for (std::size_t w = 0; w < 3; ++w) {
      const auto& walk = corpus.walks[start * 3 + w];
      REQUIRE(walk.front() == start);
      for (std::size_t i = 1; i < walk.size(); ++i) {
        bool adjacent = false;
        for (const auto& [n, wt] : nbrs[walk[i - 1]]) adjacent |= n == walk[i];
        REQUIRE(adjacent);
      }
    }
}

TEST_CASE("transition frequencies follow edge weights on a weighted star") {
  SocialGraph g(false);
  g.add_edge("center", "heavy", 0.75);
  g.add_edge("center", "light", 0.25);
  WalkCorpus corpus = sample_walks(g, 700, 100, 17);
  const std::size_t center = g.node_index("center");
  const std::size_t heavy = g.node_index("heavy");
  std::size_t from_center = 0, to_heavy = 0;
  for (const auto& walk : corpus.walks)
    for (std::size_t i = 1; i < walk.size(); ++i)
      if (walk[i - 1] == center) {
        ++from_center;
        if (walk[i] == heavy) ++to_heavy;
      }
  REQUIRE(from_center > 100000);
  const double freq = static_cast<double>(to_heavy) / static_cast<double>(from_center);
  REQUIRE(freq == Catch::Approx(0.75).margin(0.03));
}

TEST_CASE("directed walks follow out-edges and stop at dead ends") {
  SocialGraph g(true);
  g.add_edge("a", "b", 1.0);
  WalkCorpus corpus = sample_walks(g, 2, 10, 5);
  const std::size_t a = g.node_index("a"), b = g.node_index("b");
  for (std::size_t w = 0; w < 2; ++w) {
    REQUIRE(corpus.walks[a * 2 + w] == std::vector<std::size_t>{a, b});
    REQUIRE(corpus.walks[b * 2 + w] == std::vector<std::size_t>{b});
  }
}

TEST_CASE("zero epochs returns the random initialization") {
  SocialGraph g(false);
  g.add_edge("a", "b", 1.0);
  WalkCorpus corpus = sample_walks(g, 5, 10, 7);
  SkipgramConfig cfg;
  cfg.dim = 6;
  cfg.epochs = 0;
  cfg.seed = 123;
  auto trained = train_skipgram(corpus, 2, cfg);
  auto init = init_skipgram_table(2, 6, 123);
  REQUIRE(trained == init);
}

TEST_CASE("skip-gram gradients match finite differences at dim 4") {
  RandomStream rng(42);
  const std::size_t d = 4;
  auto rand_vec = [&]() {
    std::vector<double> v(d);
    for (double& x : v) x = rng.gaussian(0.0, 0.8);
    return v;
  };
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> center = rand_vec(), ctx = rand_vec();
    std::vector<std::vector<double>> negs = {rand_vec(), rand_vec(), rand_vec()};
    std::vector<double> g_center, g_ctx;
    std::vector<std::vector<double>> g_negs;
    sgns_gradients(center, ctx, negs, g_center, g_ctx, g_negs);

    const double h = 1e-6;
    auto check_coord = [&](std::vector<double>& vec, std::size_t i, double analytic) {
      const double saved = vec[i];
      vec[i] = saved + h;
      const double up = sgns_loss(center, ctx, negs);
      vec[i] = saved - h;
      const double down = sgns_loss(center, ctx, negs);
      vec[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = std::abs(analytic - numeric) /
                         (std::abs(analytic) + std::abs(numeric) + 1e-4);
      REQUIRE(err < 1e-4);
    };
    for (std::size_t i = 0; i < d; ++i) check_coord(center, i, g_center[i]);
    for (std::size_t i = 0; i < d; ++i) check_coord(ctx, i, g_ctx[i]);
    for (std::size_t n = 0; n < negs.size(); ++n)
      for (std::size_t i = 0; i < d; ++i) check_coord(negs[n], i, g_negs[n][i]);
  }
}

TEST_CASE("structurally identical twin nodes end up more similar than others") {
  // classic barbell: two triangles joined by a bridge. a0/a1 and b1/b2 are
  // twins (identical neighborhoods), the strongest form of structural
  // equivalence a first-order skip-gram can see.
  double twin_total = 0.0, other_total = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SocialGraph g(false);
    g.add_edge("a0", "a1", 1.0);
    g.add_edge("a0", "a2", 1.0);
    g.add_edge("a1", "a2", 1.0);
    g.add_edge("b0", "b1", 1.0);
    g.add_edge("b0", "b2", 1.0);
    g.add_edge("b1", "b2", 1.0);
    g.add_edge("a2", "b0", 1.0);
    WalkCorpus corpus = sample_walks(g, 20, 40, derive_seed(seed, "walks"));
    SkipgramConfig cfg;
    cfg.window = 2;
    cfg.dim = 8;
    cfg.epochs = 5;
    cfg.seed = seed;
    auto table = train_skipgram(corpus, g.node_count(), cfg);
    auto at = [&](const char* name) { return table[g.node_index(name)]; };
    twin_total += (cosine(at("a0"), at("a1")) + cosine(at("b1"), at("b2"))) / 2.0;
    other_total += (cosine(at("a0"), at("b1")) + cosine(at("a0"), at("b2")) +
                    cosine(at("a1"), at("b1")) + cosine(at("a0"), at("a2")) +
                    cosine(at("a0"), at("b0"))) /
                   5.0;
  }
  REQUIRE(twin_total / 10.0 > other_total / 10.0);
}

TEST_CASE("epoch-averaged loss decreases over training") {
  SocialGraph g(false);
  g.add_edge("a", "b", 1.0);
  g.add_edge("b", "c", 1.0);
  g.add_edge("c", "d", 0.5);
  WalkCorpus corpus = sample_walks(g, 10, 30, 3);
  SkipgramConfig cfg;
  cfg.window = 3;
  cfg.dim = 8;
  cfg.epochs = 5;
  cfg.seed = 4;
  std::vector<double> losses;
  train_skipgram(corpus, g.node_count(), cfg, &losses);
  REQUIRE(losses.size() == 5);
  REQUIRE(losses.back() < losses.front());
}

TEST_CASE("training is deterministic given the seed") {
  SocialGraph g(false);
  g.add_edge("a", "b", 1.0);
  g.add_edge("b", "c", 0.3);
  WalkCorpus corpus = sample_walks(g, 5, 20, 8);
  SkipgramConfig cfg;
  cfg.dim = 5;
  cfg.epochs = 2;
  cfg.seed = 77;
  auto t1 = train_skipgram(corpus, g.node_count(), cfg);
  auto t2 = train_skipgram(corpus, g.node_count(), cfg);
  REQUIRE(t1 == t2);
}

TEST_CASE("invalid skip-gram configurations are rejected") {
  SocialGraph g(false);
  g.add_edge("a", "b", 1.0);
  WalkCorpus corpus = sample_walks(g, 2, 5, 1);
  SkipgramConfig cfg;
  cfg.dim = 0;
  REQUIRE_THROWS_AS(train_skipgram(corpus, 2, cfg), std::invalid_argument);
  REQUIRE_THROWS_AS(sample_walks(SocialGraph(false), 10, 80, 1), std::invalid_argument);
}

TEST_CASE("embedding table round-trips through the tab format") {
  std::vector<std::string> names = {"n0", "n1"};
  std::vector<std::vector<double>> table = {{0.25, -1.5, 3.0}, {1.0 / 3.0, 0.0, -0.125}};
  auto path = std::filesystem::temp_directory_path() / "dyncwe_emb.tsv";
  save_embedding_table(path, names, table);
  auto loaded = load_embedding_table(path);
  REQUIRE(loaded.size() == 2);
  REQUIRE(loaded.at("n0") == table[0]);
  REQUIRE(loaded.at("n1") == table[1]);
  std::filesystem::remove(path);
}
