#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "groupmix/error.hpp"
#include "groupmix/mix.hpp"
#include "oracles.hpp"

using namespace groupmix;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::io;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

std::vector<double> alphas(const MixPolicy& p, std::size_t epoch, std::size_t total, std::size_t n) {
  Rng rng(77);
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_alpha(p, epoch, total, 3, rng).alpha);
  return out;
}

double ks_uniform(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  double d = 0.0;
  const double n = double(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    d = std::max({d, double(i + 1) / n - x[i], x[i] - double(i) / n});
  return d;
}

Dataset toy(std::size_t n, std::uint64_t seed, AnnotationLevel a = AnnotationLevel::fine_grained) {
  return gen_gaussian_groups(toy_group_specs(), n, Split::train, seed, a);
}

Mlp net(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t widths[] = {2, 6, 5, 2};
  return Mlp::make(widths, rng);
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST_CASE("policy validation and names") {
  MixPolicy p;
  p.alpha = AlphaDist::beta(0.0, 1.0);
  CHECK(kind_of([&] { p.validate(3); }) == ErrorKind::config);
  p.alpha = AlphaDist::uniform();
  p.layer = {LayerKind::hidden, 3};
  CHECK(kind_of([&] { p.validate(3); }) == ErrorKind::config);
  p.layer = {LayerKind::hidden, 0};
  CHECK(kind_of([&] { p.validate(3); }) == ErrorKind::config);
  p.layer = {LayerKind::hidden, 2};
  CHECK_NOTHROW(p.validate(3));
  p.alpha = AlphaDist::point(1.5);
  CHECK(kind_of([&] { p.validate(3); }) == ErrorKind::config);
  CHECK(to_string(AlphaKind::coupled) == "coupled");
  CHECK(describe(MixPolicy{}).find("pairing=cross_partition") != std::string::npos);
}

TEST_CASE("resolve_layer") {
  Rng rng(1);
  CHECK(resolve_layer({LayerKind::input, 1}, 3, rng) == 0);
  CHECK(resolve_layer({LayerKind::hidden, 2}, 3, rng) == 2);
  CHECK(resolve_layer({LayerKind::output, 1}, 3, rng) == 2);
  std::set<std::size_t> seen;
  for (int i = 0; i < 200; ++i) seen.insert(resolve_layer({LayerKind::random_per_batch, 1}, 3, rng));
  CHECK(seen == std::set<std::size_t>{0, 1, 2});
}

TEST_CASE("coupled schedule switches at half the epochs") {
  MixPolicy p;
  p.alpha = AlphaDist::coupled();
  const auto early = alphas(p, 0, 10, 20000);
  const auto late = alphas(p, 9, 10, 20000);
  CHECK(ks_uniform(early) < 0.02);
  CHECK(mean_of(late) == doctest::Approx(2.0 / 7.0).epsilon(0.03));
  CHECK(ks_uniform(alphas(p, 4, 10, 20000)) < 0.02);
  CHECK(mean_of(alphas(p, 5, 10, 20000)) == doctest::Approx(2.0 / 7.0).epsilon(0.03));
}

TEST_CASE("Beta(2,5) mean over 10^6 draws") {
  MixPolicy p;
  p.alpha = AlphaDist::beta(2.0, 5.0);
  CHECK(std::abs(mean_of(alphas(p, 0, 1, 1000000)) - 2.0 / 7.0) < 0.002);
}

TEST_CASE("Beta(1,1) is indistinguishable from U(0,1)") {
  MixPolicy p;
  p.alpha = AlphaDist::beta(1.0, 1.0);
  CHECK(ks_uniform(alphas(p, 0, 1, 100000)) < 0.01);
}

TEST_CASE("alpha role sets the minority weight") {
  MixPolicy p;
  p.alpha = AlphaDist::point(0.2);
  Rng rng(3);
  const auto on_min = sample_alpha(p, 0, 1, 3, rng);
  CHECK(on_min.alpha == 0.2);
  CHECK(on_min.minority_weight == 0.2);
  p.alpha_on = AlphaRole::majority;
  const auto on_maj = sample_alpha(p, 0, 1, 3, rng);
  CHECK(on_maj.minority_weight == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("mix_pair") {
  const std::vector<double> a{0.0, 0.0}, b{2.0, 4.0};
  auto [h, t] = mix_pair(a, b, 1, 2, MixDraw{0.5, 0.5, 0});
  CHECK(h == std::vector<double>{1.0, 2.0});
  CHECK(t == std::vector<double>{0.0, 1.0});
  const std::vector<double> c{0.3, -1.7};
  CHECK(mix_pair(c, b, 0, 2, MixDraw{1.0, 1.0, 0}).first == c);
  const std::vector<double> wide{1.0, 2.0, 3.0};
  CHECK(kind_of([&] { mix_pair(a, wide, 0, 2, MixDraw{}); }) == ErrorKind::shape);
}

TEST_CASE("mix_pair moments at 10^5 draws") {
  const double g[] = {0.0, 1.0}, gbar[] = {1.0, 1.0};
  const double sigma = 0.5;
  for (double alpha : {0.1, 0.3, 0.5, 0.9}) {
    Rng rng(11);
    const std::size_t n = 100000;
    std::vector<double> sum(2, 0.0), sq(2, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<double> h1{sample_normal(rng, g[0], sigma), sample_normal(rng, g[1], sigma)};
      const std::vector<double> h2{sample_normal(rng, gbar[0], sigma), sample_normal(rng, gbar[1], sigma)};
      const auto h = mix_pair(h1, h2, 1, 2, MixDraw{alpha, alpha, 0}).first;
      for (int d = 0; d < 2; ++d) {
        const double dev = h[d] - (alpha * g[d] + (1 - alpha) * gbar[d]);
        sum[d] += dev;
        sq[d] += dev * dev;
      }
    }
    const double var = (alpha * alpha + (1 - alpha) * (1 - alpha)) * sigma * sigma;
    for (int d = 0; d < 2; ++d) {
      CHECK(std::abs(sum[d] / n) < 3 * std::sqrt(var / n));
      const double v = sq[d] / n;
      CHECK(std::abs(v - var) < 3 * var * std::sqrt(2.0 / (n - 1)));
    }
  }
}

TEST_CASE("mixup_unconditional") {
  const std::vector<double> a{1.0, 2.0}, b{3.0, -2.0};
  auto [h1, t1] = mixup_unconditional(a, 0, b, 1, 1.0, 2);
  CHECK(h1 == a);
  CHECK(t1 == std::vector<double>{1.0, 0.0});
  auto [h2, t2] = mixup_unconditional(a, 1, b, 1, 0.37, 3);
  CHECK(t2 == std::vector<double>{0.0, 1.0, 0.0});
  auto [h3, t3] = mixup_unconditional(a, 0, b, 1, 0.3, 2);
  CHECK(t3[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(t3[1] == doctest::Approx(0.7).epsilon(1e-15));
  const std::vector<double> wide{1.0};
  CHECK(kind_of([&] { mixup_unconditional(a, 0, wide, 0, 0.5, 2); }) == ErrorKind::shape);
}

TEST_CASE("build_pools bookkeeping") {
  const Dataset ds = toy(2000, 1);
  const auto mask = oracle_partition(ds);
  const auto pools = build_pools(ds, buffer_from_oracle(mask));
  CHECK(pools.reservoirs[0][0].size() == 950);
  CHECK(pools.reservoirs[0][1].size() == 50);
  CHECK(pools.reservoirs[1][0].size() == 950);
  CHECK(pools.reservoirs[1][1].size() == 50);
  CHECK(pools.pairable == std::vector<bool>{true, true});
  std::vector<int> seen(ds.size(), 0);
  for (const auto& cls : pools.reservoirs)
    for (const auto& slot : cls)
      for (std::size_t i : slot) ++seen[i];
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));

  std::vector<bool> class0(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) class0[i] = ds.label(i) == 0;
  const auto flagged = build_pools(ds, buffer_from_oracle(class0));
  CHECK_FALSE(flagged.pairable[0]);
  CHECK_FALSE(flagged.pairable[1]);
  CHECK(flagged.reservoirs[1][1].empty());
}

TEST_CASE("group pools need visible groups") {
  const Dataset hidden = toy(200, 2, AnnotationLevel::validation_only);
  CHECK(kind_of([&] { build_group_pools(hidden); }) == ErrorKind::annotation);
  const auto pools = build_group_pools(toy(200, 2));
  CHECK(pools.reservoirs[0].size() == 2);
  CHECK(pools.pairable == std::vector<bool>{true, true});
}

TEST_CASE("forced pairing with one minority sample per class") {
  const Dataset ds = toy(2000, 3);
  const auto view = ds.privileged();
  std::vector<bool> mask(ds.size(), false);
  std::size_t chosen[2] = {ds.size(), ds.size()};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto y = std::size_t(ds.label(i));
    if (chosen[y] == ds.size() && view.is_minority(i)) {
      chosen[y] = i;
      mask[i] = true;
    }
  }
  const auto pools = build_pools(ds, buffer_from_oracle(mask));
  MixPolicy policy;
  Rng rng(5);
  const auto batch = iota_n(64);
  const auto mb = make_mixed_batch(net(1), ds, batch, &pools, policy, MixDraw{0.3, 0.3, 0}, rng);
  for (std::size_t r = 0; r < mb.anchors.size(); ++r) {
    const auto y = std::size_t(ds.label(mb.anchors[r]));
    CHECK((mb.anchors[r] == chosen[y] || mb.partners[r] == chosen[y]));
  }
}

TEST_CASE("property: class-conditional batches preserve class, convexity and metadata") {
  oracle::Gen gen(41);
  const Dataset ds = toy(400, 4);
  const auto mask = oracle_partition(ds);
  const PairingPools cross = build_pools(ds, buffer_from_oracle(mask));
  const PairingPools groups = build_group_pools(ds);
  const Mlp model = net(2);
  for (int trial = 0; trial < 60; ++trial) {
    MixPolicy policy;
    policy.pairing = trial % 2 ? Pairing::random_group : Pairing::cross_partition;
    policy.layer = {LayerKind::hidden, gen.index(0, 2)};
    const PairingPools& pools = trial % 2 ? groups : cross;
    const double w = gen.uniform(0.0, 1.0);
    const MixDraw draw{w, w, policy.layer.hidden_k};
    std::vector<std::size_t> batch(gen.index(1, 40));
    for (auto& i : batch) i = gen.index(0, ds.size() - 1);
    Rng rng{static_cast<std::uint64_t>(trial)};
    const auto mb = make_mixed_batch(model, ds, batch, &pools, policy, draw, rng);
    REQUIRE(mb.anchors.size() == batch.size());
    CHECK(mb.inputs.rows() == batch.size());
    std::map<std::string, std::size_t> recount;
    const Matrix ha = forward_range(model, ds.feature_matrix(mb.anchors), 0, draw.layer_k);
    const Matrix hp = forward_range(model, ds.feature_matrix(mb.partners), 0, draw.layer_k);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const int y = ds.label(mb.anchors[r]);
      CHECK(ds.label(mb.partners[r]) == y);
      for (std::size_t k = 0; k < 2; ++k) CHECK(mb.targets(r, k) == (int(k) == y ? 1.0 : 0.0));
      for (std::size_t c = 0; c < mb.inputs.cols(); ++c) {
        const double lo = std::min(ha(r, c), hp(r, c)), hi = std::max(ha(r, c), hp(r, c));
        CHECK(mb.inputs(r, c) >= lo - 1e-12);
        CHECK(mb.inputs(r, c) <= hi + 1e-12);
        const double expect = mb.anchor_weight[r] * ha(r, c) + (1 - mb.anchor_weight[r]) * hp(r, c);
        CHECK(mb.inputs(r, c) == doctest::Approx(expect).epsilon(1e-12));
      }
      const auto& names = pools.slot_names[std::size_t(y)];
      const std::string key = "y=" + std::to_string(y) + ":" +
                              names[std::size_t(pools.slot_of[mb.anchors[r]])] + "|" +
                              names[std::size_t(pools.slot_of[mb.partners[r]])];
      ++recount[key];
      CHECK(pools.slot_of[mb.anchors[r]] != pools.slot_of[mb.partners[r]]);
      if (policy.pairing == Pairing::cross_partition) {
        const bool anchor_min = mask[mb.anchors[r]];
        CHECK(mb.anchor_weight[r] == doctest::Approx(anchor_min ? w : 1 - w));
      }
    }
    CHECK(recount == mb.meta.pair_counts);
  }
}

TEST_CASE("unconditional pairing shuffles the batch against itself") {
  const Dataset ds = toy(200, 6);
  MixPolicy policy;
  policy.pairing = Pairing::unconditional;
  const auto batch = iota_n(32);
  Rng rng(9);
  const auto mb = make_mixed_batch(net(3), ds, batch, nullptr, policy, MixDraw{0.4, 0.4, 0}, rng);
  auto sorted = mb.partners;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == batch);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const int ya = ds.label(mb.anchors[r]), yp = ds.label(mb.partners[r]);
    CHECK(mb.targets(r, std::size_t(ya)) + (ya == yp ? 0.0 : mb.targets(r, std::size_t(yp))) ==
          doctest::Approx(1.0));
    CHECK(mb.targets(r, std::size_t(ya)) >= 0.4 - 1e-12);
  }
  CHECK(ds.audit().group_reads == 0);
  CHECK(ds.audit().partition_reads == 0);
}

TEST_CASE("unpairable classes fall back") {
  const Dataset ds = toy(400, 7);
  std::vector<bool> class0(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) class0[i] = ds.label(i) == 0;
  const auto pools = build_pools(ds, buffer_from_oracle(class0));
  const auto batch = iota_n(20);
  MixPolicy policy;
  Rng rng(1);
  const auto pass = make_mixed_batch(net(4), ds, batch, &pools, policy, MixDraw{0.3, 0.3, 0}, rng);
  CHECK(pass.meta.fallback == 20);
  CHECK(pass.anchors == pass.partners);
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 2; ++c) CHECK(pass.inputs(r, c) == ds.features(r)[c]);
  policy.fallback = Fallback::drop;
  const auto dropped = make_mixed_batch(net(4), ds, batch, &pools, policy, MixDraw{0.3, 0.3, 0}, rng);
  CHECK(dropped.meta.dropped == 20);
  CHECK(dropped.anchors.empty());
}

TEST_CASE("mismatched pools are a precondition error") {
  const Dataset ds = toy(200, 8);
  const auto pools = build_group_pools(ds);
  MixPolicy policy;
  Rng rng(1);
  const auto batch = iota_n(4);
  CHECK(kind_of([&] { make_mixed_batch(net(5), ds, batch, &pools, policy, MixDraw{}, rng); }) ==
        ErrorKind::precondition);
  CHECK(kind_of([&] { make_mixed_batch(net(5), ds, batch, nullptr, policy, MixDraw{}, rng); }) ==
        ErrorKind::precondition);
}

TEST_CASE("mixed-batch gradients flow through both endpoints") {
  const Dataset ds = toy(100, 9);
  Mlp model = net(6);
  for (std::size_t l = 0; l < model.num_layers(); ++l)
    for (double& b : model.bias(l)) b = 0.05 * double(l + 1);
  for (std::size_t k : {0, 1, 2}) {
    std::vector<std::size_t> a{0, 1, 2, 3}, p{4, 5, 6, 7};
    std::vector<double> w{0.2, 0.5, 0.7, 0.9};
    // Same class partners keep hard targets meaningful; soft targets otherwise.
    const auto mb = assemble_mixed_batch(model, ds, a, p, w, k, true);
    const std::vector<double> sw{1.0, 2.0, 1.0, 0.5};
    const auto res = mixed_loss_and_grads(model, ds, mb, sw, 4.5);

    auto loss_at = [&](const Mlp& m) {
      // Extended-precision recomputation: endpoints through layers [0, k),
      // mixed, then the remaining layers.
      long double total = 0;
      for (std::size_t r = 0; r < 4; ++r) {
        Matrix xa(1, 2), xp(1, 2);
        for (int c = 0; c < 2; ++c) {
          xa(0, c) = ds.features(a[r])[c];
          xp(0, c) = ds.features(p[r])[c];
        }
        oracle::Rows ha, hp;
        {
          // Run the first k layers with the oracle on a truncated copy.
          std::vector<LayerSpec> specs(m.layers().begin(), m.layers().begin() + long(k));
          if (k == 0) {
            ha = {{xa(0, 0), xa(0, 1)}};
            hp = {{xp(0, 0), xp(0, 1)}};
          } else {
            Mlp trunc(specs);
            for (std::size_t l = 0; l < k; ++l) {
              trunc.weights(l) = m.weights(l);
              trunc.bias(l) = m.bias(l);
            }
            ha = oracle::forward(trunc, xa, 0);
            hp = oracle::forward(trunc, xp, 0);
          }
        }
        Matrix h(1, ha[0].size());
        for (std::size_t c = 0; c < h.cols(); ++c)
          h(0, c) = double(w[r] * ha[0][c] + (1 - w[r]) * hp[0][c]);
        const auto logits = oracle::forward(m, h, k);
        total += sw[r] * oracle::cross_entropy(logits[0], mb.targets.row(r));
      }
      return total / 4.5L;
    };
    CHECK(res.loss == doctest::Approx(double(loss_at(model))).epsilon(1e-9));
    Mlp probe = model;
    double worst = 0.0;
    for (std::size_t l = 0; l < probe.num_layers(); ++l) {
      auto vals = probe.weights(l).values();
      const auto g = res.grads.weights[l].values();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double saved = vals[i];
        vals[i] = saved + 1e-6;
        const auto up = loss_at(probe);
        vals[i] = saved - 1e-6;
        const auto down = loss_at(probe);
        vals[i] = saved;
        worst = std::max(worst, oracle::rel_error(g[i], (up - down) / 2e-6L));
      }
    }
    CHECK(worst < 1e-5);
  }
}
