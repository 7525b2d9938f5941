#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dyncwe/dynamic.hpp"

using namespace dyncwe;

TEST_CASE("time rescaling maps the bounds to the unit interval") {
  TimeBounds b{1000, 2000};
  REQUIRE(rescale_time(1000, b) == 0.0);
  REQUIRE(rescale_time(2000, b) == 1.0);
  REQUIRE(rescale_time(1500, b) == 0.5);
  REQUIRE_THROWS_AS(rescale_time(5, TimeBounds{7, 7}), std::invalid_argument);
}

TEST_CASE("out-of-bounds timestamps extrapolate with a warning") {
  TimeBounds b{0, 100};
  bool warned = false;
  REQUIRE(rescale_time(200, b, &warned) == 2.0);
  REQUIRE(warned);
  warned = false;
  REQUIRE(rescale_time(-50, b, &warned) == -0.5);
  REQUIRE(warned);
  warned = false;
  rescale_time(50, b, &warned);
  REQUIRE_FALSE(warned);
}

TEST_CASE("zero time weights collapse the inner feature to zero") {
  TimeCodec codec = TimeCodec::create(4, 1);
  std::fill(codec.w_t.values().begin(), codec.w_t.values().end(), 0.0);
  std::fill(codec.b_t.values().begin(), codec.b_t.values().end(), 0.0);
  Tensor a = codec.embed(0.2);
  Tensor b = codec.embed(0.9);
  REQUIRE(a.values() == b.values());  // inner vector is zero regardless of time
}

TEST_CASE("time embedding is deterministic and bounded by the inner tanh") {
  TimeCodec codec = TimeCodec::create(6, 2);
  Tensor a = codec.embed(0.37);
  Tensor b = codec.embed(0.37);
  REQUIRE(a.values() == b.values());
  Tensor inner = tanh_t(add(scale(codec.w_t, 0.37), codec.b_t));
  for (double v : inner.values()) {
    REQUIRE(v > -1.0);
    REQUIRE(v < 1.0);
  }
}

TEST_CASE("time codec gradient w.r.t. its weight vector passes finite differences") {
  TimeCodec codec = TimeCodec::create(4, 3);
  auto loss = [&](const Tensor& w) {
    TimeCodec probe = codec;
    probe.w_t = w;
    return sum_sq(probe.embed(0.61));
  };
  auto report = finite_difference_check(loss, codec.w_t, 1e-5);
  REQUIRE(report.non_finite_coords.empty());
  REQUIRE(report.max_rel_error < 1e-4);
}

TEST_CASE("isolated node attends only to itself") {
  SocialGraph g(false);
  g.add_node("alone");
  SocialEncoder enc = SocialEncoder::create(3, 1, 2, 5);
  GatProbe probe;
  Tensor s = embed_social("alone", g, enc, &probe);
  REQUIRE(s.size() == 3);
  for (const Tensor& alpha : probe.coefficients) {
    REQUIRE(alpha.size() == 1);
    REQUIRE(alpha.at(0) == Catch::Approx(1.0).margin(1e-12));
  }
  // one layer by hand: tanh of the head-averaged linear map of the input row
  GatLayer layer = GatLayer::create(3, 2, 99, "probe");
  Tensor x = Tensor::from_values({1, 3}, {0.3, -0.1, 0.7});
  Neighborhoods nbrs = {{{0, 1.0}}};
  Tensor out = layer.apply(x, nbrs);
  for (std::size_t j = 0; j < 3; ++j) {
    double acc = 0.0;
    for (std::size_t h = 0; h < 2; ++h) {
      double zj = 0.0;
      for (std::size_t i = 0; i < 3; ++i) zj += x.at(0, i) * layer.weight[h].at(i, j);
      acc += zj;
    }
    REQUIRE(out.at(0, j) == Catch::Approx(std::tanh(acc / 2.0)).margin(1e-12));
  }
}

TEST_CASE("two-node weighted attention matches the hand computation") {
  GatLayer layer;
  layer.weight = {Tensor::from_values({2, 2}, {1, 0, 0, 1}, true)};
  layer.a_self = {Tensor::from_values({2}, {1, 0}, true)};
  layer.a_nbr = {Tensor::from_values({2}, {0, 1}, true)};

  Tensor x = Tensor::from_values({2, 2}, {0.1, 0.2, -0.3, 0.4});
  const double w = 0.5;
  Neighborhoods nbrs = {{{0, 1.0}, {1, w}}, {{0, w}, {1, 1.0}}};
  Tensor out = layer.apply(x, nbrs);

  auto leaky = [](double v) { return v >= 0.0 ? v : 0.2 * v; };
  // node 0: u0 = 0.1, v = {0.2, 0.4}
  {
    const double l_self = leaky(0.1 + 0.2);
    const double l_nbr = leaky(0.1 + 0.4) + std::log(w);
    const double m = std::max(l_self, l_nbr);
    const double e0 = std::exp(l_self - m), e1 = std::exp(l_nbr - m);
    const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
    REQUIRE(out.at(0, 0) == Catch::Approx(std::tanh(a0 * 0.1 + a1 * -0.3)).margin(1e-12));
    REQUIRE(out.at(0, 1) == Catch::Approx(std::tanh(a0 * 0.2 + a1 * 0.4)).margin(1e-12));
  }
  // node 1: u1 = -0.3
  {
    const double l_nbr = leaky(-0.3 + 0.2) + std::log(w);
    const double l_self = leaky(-0.3 + 0.4);
    const double m = std::max(l_self, l_nbr);
    const double e_nbr = std::exp(l_nbr - m), e_self = std::exp(l_self - m);
    const double a_nbr0 = e_nbr / (e_nbr + e_self), a_self1 = e_self / (e_nbr + e_self);
    REQUIRE(out.at(1, 0) == Catch::Approx(std::tanh(a_nbr0 * 0.1 + a_self1 * -0.3)).margin(1e-12));
    REQUIRE(out.at(1, 1) == Catch::Approx(std::tanh(a_nbr0 * 0.2 + a_self1 * 0.4)).margin(1e-12));
  }
}

TEST_CASE("attention coefficients sum to one per node") {
  SocialGraph g(false);
  g.add_edge("a", "b", 0.7);
  g.add_edge("b", "c", 0.2);
  g.add_edge("a", "c", 1.0);
  SocialEncoder enc = SocialEncoder::create(4, 3, 4, 8);
  GatProbe probe;
  enc.forward_all(g.attention_neighborhoods(), &probe);
  REQUIRE_FALSE(probe.coefficients.empty());
  for (const Tensor& alpha : probe.coefficients) {
    double s = 0.0;
    for (double v : alpha.values()) {
      REQUIRE(v >= 0.0);
      s += v;
    }
    REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("unknown social node is rejected with its id") {
  SocialGraph g(false);
  g.add_node("known");
  SocialEncoder enc = SocialEncoder::create(4, 1, 2, 8);
  REQUIRE_THROWS_WITH(embed_social("mystery", g, enc),
                      Catch::Matchers::ContainsSubstring("mystery"));
}

TEST_CASE("two graph-attention layers see exactly the two-hop neighborhood") {
  SocialGraph g(false);
  g.add_edge("n0", "n1", 0.5);
  g.add_edge("n1", "n2", 0.5);
  g.add_edge("n2", "n3", 0.5);  // n3 is three hops from n0
  const auto nbrs = g.attention_neighborhoods();

  SocialEncoder enc = SocialEncoder::create(4, 4, 2, 21);
  Tensor base = enc.forward_all(nbrs);

  SocialEncoder poked = enc;
  poked.table() = enc.table().clone();
  for (std::size_t j = 0; j < 4; ++j) poked.table().values()[3 * 4 + j] += 1.5;
  Tensor moved = poked.forward_all(nbrs);

  for (std::size_t j = 0; j < 4; ++j) {
    REQUIRE(moved.at(0, j) == base.at(0, j));  // 3 hops away: untouched
    REQUIRE(moved.at(3, j) != base.at(3, j));
  }

  SocialEncoder poked2 = enc;
  poked2.table() = enc.table().clone();
  for (std::size_t j = 0; j < 4; ++j) poked2.table().values()[2 * 4 + j] += 1.5;
  Tensor moved2 = poked2.forward_all(nbrs);
  double diff = 0.0;
  for (std::size_t j = 0; j < 4; ++j)
    diff = std::max(diff, std::abs(moved2.at(0, j) - base.at(0, j)));
  REQUIRE(diff > 0.0);  // 2 hops away: visible
}

TEST_CASE("directed graphs attend over in-neighbors plus self") {
  SocialGraph g(true);
  g.add_edge("src", "dst", 1.0);
  auto nbrs = g.attention_neighborhoods();
  const std::size_t src = g.node_index("src"), dst = g.node_index("dst");
  REQUIRE(nbrs[src].size() == 1);  // self only
  REQUIRE(nbrs[dst].size() == 2);  // src + self
}

TEST_CASE("joint context widths and behavior") {
  OffsetNetworks nets = OffsetNetworks::create(16, 50, 20, 70, 70, 3);
  Tensor s = Tensor::zeros({50});
  Tensor t = Tensor::zeros({20});
  Tensor r = joint_context(nets, s, t);
  REQUIRE(r.size() == 70);  // d_r = d_s + d_t under defaults
  // zero inputs and zero bias give tanh(0) = 0
  for (double v : r.values()) REQUIRE(v == 0.0);
  REQUIRE_THROWS_AS(joint_context(nets, Tensor::zeros({20}), Tensor::zeros({50})),
                    std::invalid_argument);
}

TEST_CASE("concatenation order is part of the fusion contract") {
  OffsetNetworks nets = OffsetNetworks::create(8, 4, 4, 8, 8, 17);
  RandomStream rng(3);
  Tensor s = Tensor::zeros({4});
  Tensor t = Tensor::zeros({4});
  for (double& v : s.values()) v = rng.gaussian();
  for (double& v : t.values()) v = rng.gaussian();
  Tensor st = joint_context(nets, s, t);
  Tensor ts = joint_context(nets, t, s);
  bool any_diff = false;
  for (std::size_t i = 0; i < st.size(); ++i) any_diff |= st.at(i) != ts.at(i);
  REQUIRE(any_diff);
}

TEST_CASE("special tokens carry a structurally zero offset") {
  OffsetNetworks nets = OffsetNetworks::create(8, 4, 4, 8, 8, 23);
  Tensor anchor = Tensor::full({8}, 0.3);
  Tensor context = Tensor::full({8}, -0.2);
  for (std::size_t id = 0; id < Vocabulary::kReserved; ++id) {
    Tensor o = compute_offset(nets, id, anchor, context);
    for (double v : o.values()) REQUIRE(v == 0.0);
  }
  Tensor ordinary = compute_offset(nets, Vocabulary::kReserved, anchor, context);
  bool nonzero = false;
  for (double v : ordinary.values()) nonzero |= v != 0.0;
  REQUIRE(nonzero);
}

TEST_CASE("zero offset network weights give zero offsets for every word") {
  OffsetNetworks nets = OffsetNetworks::create(8, 4, 4, 8, 8, 29);
  std::fill(nets.ffn_o.W.values().begin(), nets.ffn_o.W.values().end(), 0.0);
  std::fill(nets.ffn_o.b.values().begin(), nets.ffn_o.b.values().end(), 0.0);
  RandomStream rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor anchor = Tensor::zeros({8});
    Tensor ctx = Tensor::zeros({8});
    for (double& v : anchor.values()) v = rng.gaussian();
    for (double& v : ctx.values()) v = rng.gaussian();
    Tensor o = compute_offset(nets, 7, anchor, ctx);
    for (double v : o.values()) REQUIRE(v == 0.0);
  }
}

TEST_CASE("offsets are deterministic and recoverable by subtraction") {
  OffsetNetworks nets = OffsetNetworks::create(8, 4, 4, 8, 8, 31);
  RandomStream rng(5);
  Tensor anchor = Tensor::zeros({8});
  Tensor ctx = Tensor::zeros({8});
  for (double& v : anchor.values()) v = rng.gaussian();
  for (double& v : ctx.values()) v = rng.gaussian();
  Tensor o1 = compute_offset(nets, 9, anchor, ctx);
  Tensor o2 = compute_offset(nets, 9, anchor, ctx);
  REQUIRE(o1.values() == o2.values());

  Tensor e = dynamic_embed(anchor, o1);
  Tensor recovered = sub(e, anchor);
  for (std::size_t i = 0; i < 8; ++i)
    REQUIRE(recovered.at(i) == Catch::Approx(o1.at(i)).margin(1e-15));

  Tensor zero = Tensor::zeros({8});
  Tensor same = dynamic_embed(anchor, zero);
  REQUIRE(same.values() == anchor.values());
}

TEST_CASE("different contexts generally produce different embeddings") {
  OffsetNetworks nets = OffsetNetworks::create(8, 4, 4, 8, 8, 37);
  RandomStream rng(6);
  Tensor anchor = Tensor::zeros({8});
  Tensor ctx_a = Tensor::zeros({8});
  Tensor ctx_b = Tensor::zeros({8});
  for (double& v : anchor.values()) v = rng.gaussian();
  for (double& v : ctx_a.values()) v = rng.gaussian();
  for (double& v : ctx_b.values()) v = rng.gaussian();
  Tensor ea = dynamic_embed(anchor, compute_offset(nets, 6, anchor, ctx_a));
  Tensor eb = dynamic_embed(anchor, compute_offset(nets, 6, anchor, ctx_b));
  bool any_diff = false;
  for (std::size_t i = 0; i < 8; ++i) any_diff |= ea.at(i) != eb.at(i);
  REQUIRE(any_diff);
}

TEST_CASE("prior loss formula") {
  Tensor zeros = Tensor::zeros({3, 8});
  REQUIRE(prior_loss(zeros, 1.0).value() == 0.0);

  // lambda = 2, K = 1, ||o|| = 1 -> exactly 1.0
  Tensor unit = Tensor::from_values({1, 4}, {1.0, 0.0, 0.0, 0.0});
  REQUIRE(prior_loss(unit, 2.0).value() == 1.0);

  RandomStream rng(7);
  Tensor o = Tensor::zeros({4, 6});
  for (double& v : o.values()) v = rng.gaussian();
  const double base = prior_loss(o, 1.3).value();
  REQUIRE(prior_loss(o, 2.6).value() == Catch::Approx(2.0 * base).epsilon(1e-15));

  REQUIRE_THROWS_AS(prior_loss(std::vector<Tensor>{}, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(prior_loss(o, -0.5), std::invalid_argument);
}

TEST_CASE("gradients flow through the whole dynamic path") {
  SocialGraph g(false);
  g.add_edge("c0", "c1", 0.5);
  g.add_edge("c1", "c2", 0.25);
  const auto nbrs = g.attention_neighborhoods();

  const std::size_t d_e = 8, d_s = 4, d_t = 3, d_r = 7;
  SocialEncoder social = SocialEncoder::create(d_s, 3, 2, 41);
  TimeCodec time = TimeCodec::create(d_t, 41);
  OffsetNetworks nets = OffsetNetworks::create(d_e, d_s, d_t, d_r, d_r, 41);
  Tensor anchor = init_gaussian({d_e}, 0.5, 41, "anchor");

  auto full_loss = [&]() {
    Tensor s_all = social.forward_all(nbrs);
    Tensor s = reshape(slice_rows(s_all, 1, 1), {d_s});
    Tensor t = time.embed(0.4);
    Tensor r = joint_context(nets, s, t);
    Tensor o = compute_offset(nets, 11, anchor, r);
    Tensor e = dynamic_embed(anchor, o);
    return add(sum_sq(e), prior_loss(reshape(o, {1, d_e}), 1.0));
  };

  ParamList params;
  social.collect("social", params);
  time.collect("time", params);
  nets.collect("offset", params);
  params.add("anchor", anchor);

  for (const auto& [name, p] : params.items) {
    auto report = finite_difference_check_param(full_loss, p, 1e-5);
    INFO("parameter " << name);
    REQUIRE(report.non_finite_coords.empty());
    REQUIRE(report.max_rel_error < 1e-4);
  }
}
