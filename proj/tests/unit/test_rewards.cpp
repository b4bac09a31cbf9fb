#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "rankalign/rewards.hpp"

namespace rankalign {
namespace {

RankedList hits(std::initializer_list<ItemId> ids, bool terminated = true) {
  RankedList l;
  for (ItemId v : ids) l.entries.emplace_back(CatalogHit{v});
  l.terminated = terminated;
  return l;
}

RankedList n_hits(int n, bool terminated = true) {
  RankedList l;
  for (int v = 0; v < n; ++v) l.entries.emplace_back(CatalogHit{v});
  l.terminated = terminated;
  return l;
}

TEST(Relevance, RepeatsAndOutOfCatalogScoreZero) {
  RankedList l = hits({0, 1, 0});
  l.entries.emplace_back(OutOfCatalog{{9}});
  const std::vector<ItemId> gt{0};
  EXPECT_EQ(relevance(l, gt), (RelevanceVector{1, 0, 0, 0}));
}

TEST(Relevance, AllPositives) {
  const std::vector<ItemId> gt{0, 1};
  EXPECT_EQ(relevance(hits({0, 1}), gt), (RelevanceVector{1, 1}));
}

TEST(Relevance, RandomListsBounded) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> item(0, 9), len(0, 15), coin(0, 4);
  for (int trial = 0; trial < 300; ++trial) {
    RankedList l;
    std::set<ItemId> distinct;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) {
      if (coin(rng) == 0) {
        l.entries.emplace_back(OutOfCatalog{{1, 2}});
      } else {
        const ItemId v = item(rng);
        distinct.insert(v);
        l.entries.emplace_back(CatalogHit{v});
      }
    }
    const std::vector<ItemId> gt{1, 3, 5};
    int s = 0;
    for (int r : relevance(l, gt)) s += r;
    EXPECT_LE(s, 3);
    EXPECT_LE(s, static_cast<int>(distinct.size()));
  }
}

TEST(Dcg, Examples) {
  const std::vector<int> rel{1, 0, 1, 0};
  EXPECT_EQ(dcg_at_n(rel, 4), 1.5);
  EXPECT_EQ(dcg_at_n(std::vector<int>{0, 0, 0}, 3), 0.0);
  EXPECT_EQ(dcg_k_to_n(rel, 3, 4), 0.5);
  EXPECT_EQ(dcg_k_to_n(rel, 1, 4), dcg_at_n(rel, 4));
  EXPECT_THROW(dcg_at_n(rel, 0), std::invalid_argument);
  EXPECT_THROW(dcg_k_to_n(rel, 0, 4), std::invalid_argument);
  EXPECT_THROW(dcg_k_to_n(rel, 5, 4), std::invalid_argument);
}

TEST(Dcg, ShortRelevancePadsWithZeros) {
  EXPECT_EQ(dcg_at_n(std::vector<int>{1}, 20), 1.0);
  EXPECT_EQ(dcg_k_to_n(std::vector<int>{1}, 2, 20), 0.0);
}

TEST(Dcg, Telescoping) {
  std::mt19937_64 rng(2);
  std::bernoulli_distribution b(0.4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> rel(20);
    for (int& r : rel) r = b(rng);
    for (int k = 1; k < 20; ++k)
      EXPECT_NEAR(dcg_k_to_n(rel, k, 20) - dcg_k_to_n(rel, k + 1, 20),
                  rel[static_cast<std::size_t>(k - 1)] / std::log2(k + 1.0), 1e-12);
  }
}

TEST(ExpDecay, Examples) {
  const std::vector<int> rel{1, 0, 1};
  EXPECT_EQ(exp_decay_return(rel, 1, 3, 2.0), 1.25);
  for (int k = 1; k <= 3; ++k)
    EXPECT_EQ(exp_decay_return(rel, k, 3, kInfiniteGamma), rel[static_cast<std::size_t>(k - 1)]);
  EXPECT_THROW(exp_decay_return(rel, 1, 3, 1.0), std::invalid_argument);
  EXPECT_THROW(exp_decay_return(rel, 1, 3, 0.5), std::invalid_argument);
}

TEST(ExpDecay, RecursionAndLimit) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution b(0.5);
  for (double gamma : {2.0, 4.0, 8.0}) {
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<int> rel(20);
      for (int& r : rel) r = b(rng);
      for (int k = 1; k < 20; ++k)
        EXPECT_NEAR(exp_decay_return(rel, k, 20, gamma),
                    rel[static_cast<std::size_t>(k - 1)] +
                        exp_decay_return(rel, k + 1, 20, gamma) / gamma,
                    1e-12);
      for (int k = 1; k <= 20; ++k)
        EXPECT_NEAR(exp_decay_return(rel, k, 20, 1e9),
                    exp_decay_return(rel, k, 20, kInfiniteGamma), 1e-8);
    }
  }
}

TEST(Returns, SchemesAndShapes) {
  const std::vector<int> rel{1, 0, 1};
  const ReturnTensor seq = compute_returns(rel, 4, {RewardScheme::kSeqDcg, 0});
  EXPECT_EQ(seq.slots(), 4);
  for (double r : seq.returns) EXPECT_EQ(r, 1.5);
  const ReturnTensor causal = compute_returns(rel, 4, {RewardScheme::kCausalDcg, 0});
  EXPECT_EQ(causal.returns, (std::vector<double>{1.5, 0.5, 0.5, 0.0}));
  const ReturnTensor inf = compute_returns(rel, 4, {});
  EXPECT_EQ(inf.returns, (std::vector<double>{1, 0, 1, 0}));
  EXPECT_TRUE(inf.present(3));
  EXPECT_FALSE(inf.present(4));
  const std::vector<int> longer{0, 1, 0, 0, 1};
  const ReturnTensor over = compute_returns(longer, 3, {});
  EXPECT_EQ(over.slots(), 5);
  EXPECT_TRUE(over.overflow(4));
  EXPECT_EQ(over.returns[4], 0.0);
}

TEST(Penalties, PrematureStop) {
  const RankedList l = n_hits(18);
  const RelevanceVector rel(18, 0);
  const ReturnTensor r = apply_penalties(compute_returns(rel, 20, {}), l, 20, -0.1, -0.1);
  ASSERT_EQ(r.slots(), 20);
  EXPECT_EQ(r.returns[17], -0.1);
  EXPECT_TRUE(r.penalized[17]);
  EXPECT_EQ(r.returns[18], 0.0);
  EXPECT_EQ(r.returns[19], 0.0);
  EXPECT_FALSE(r.present(19));
  for (int k = 0; k < 17; ++k) EXPECT_EQ(r.returns[static_cast<std::size_t>(k)], 0.0);
}

TEST(Penalties, Overflow) {
  const RankedList l = n_hits(22);
  RelevanceVector rel(22, 0);
  rel[20] = 1;
  const ReturnTensor r = apply_penalties(compute_returns(rel, 20, {}), l, 20, -0.1, -0.1);
  ASSERT_EQ(r.slots(), 22);
  EXPECT_EQ(r.returns[20], -0.1);
  EXPECT_EQ(r.returns[21], -0.1);
  for (int k = 0; k < 20; ++k) EXPECT_FALSE(r.penalized[static_cast<std::size_t>(k)]);
}

TEST(Penalties, ExactLengthUnchanged) {
  const RankedList l = n_hits(20);
  RelevanceVector rel(20, 0);
  rel[2] = rel[7] = 1;
  for (RewardScheme s : {RewardScheme::kSeqDcg, RewardScheme::kCausalDcg, RewardScheme::kExpDecay}) {
    const ReturnTensor base = compute_returns(rel, 20, {s, 2.0});
    const ReturnTensor r = apply_penalties(base, l, 20, -0.1, -0.1);
    EXPECT_EQ(r.returns, base.returns);
    EXPECT_EQ(r.sequence_reward, base.sequence_reward);
  }
}

TEST(Penalties, SequenceRewardCarriesPenalties) {
  RelevanceVector rel(22, 0);
  rel[0] = 1;
  const ReturnTensor r = apply_penalties(compute_returns(rel, 20, {RewardScheme::kSeqDcg, 0}),
                                         n_hits(22), 20, -0.1, -0.1);
  EXPECT_NEAR(r.sequence_reward, 1.0 - 0.2, 1e-15);
  for (double x : r.returns) EXPECT_EQ(x, r.sequence_reward);
}

TEST(Penalties, UnterminatedShortList) {
  const RankedList l = n_hits(5, false);
  const ReturnTensor r =
      apply_penalties(compute_returns(RelevanceVector(5, 0), 20, {}), l, 20, -0.1, -0.2);
  EXPECT_EQ(r.returns[4], -0.2);
}

TEST(Penalties, OverflowNeverIncreasesReturns) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution b(0.4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 6;
    RelevanceVector rel(n, 0);
    for (int& x : rel) x = b(rng);
    RelevanceVector more = rel;
    more.push_back(b(rng));
    for (RewardScheme s : {RewardScheme::kSeqDcg, RewardScheme::kCausalDcg, RewardScheme::kExpDecay}) {
      const ReturnTensor a = apply_penalties(compute_returns(rel, n, {s, 3.0}), n_hits(n), n, -0.1, -0.1);
      const ReturnTensor c = apply_penalties(compute_returns(more, n, {s, 3.0}), n_hits(n + 1), n, -0.1, -0.1);
      for (int k = 0; k < n; ++k)
        EXPECT_LE(c.returns[static_cast<std::size_t>(k)], a.returns[static_cast<std::size_t>(k)]);
      if (s != RewardScheme::kSeqDcg) EXPECT_LT(c.returns[static_cast<std::size_t>(n)], 0.0);
      else EXPECT_EQ(c.returns[static_cast<std::size_t>(n)], c.sequence_reward);
    }
  }
}

TEST(Penalties, PositivePenaltyRejected) {
  EXPECT_THROW(apply_penalties(compute_returns(RelevanceVector(3, 0), 3, {}), n_hits(3), 3, 0.1, -0.1),
               std::invalid_argument);
}

TEST(Metrics, Examples) {
  const std::vector<ItemId> gt4{0, 1, 50, 51};
  EXPECT_EQ(recall_at_k(hits({0, 7, 1, 8}), gt4, 4), 0.5);
  const std::vector<ItemId> gt2{0, 2};
  EXPECT_NEAR(ndcg_at_k(hits({0, 1, 2}), gt2, 3), 0.919721, 1e-6);
  EXPECT_NEAR(ndcg_at_k(hits({0, 1, 2}), gt2, 3), 1.5 / (1 + 1 / std::log2(3.0)), 1e-15);
  EXPECT_THROW(recall_at_k(hits({0}), std::vector<ItemId>{}, 3), std::invalid_argument);
  EXPECT_THROW(ndcg_at_k(hits({0}), std::vector<ItemId>{}, 3), std::invalid_argument);
  EXPECT_THROW(ndcg_at_k(hits({0}), gt2, 0), std::invalid_argument);
}

TEST(Metrics, OracleListIsIdeal) {
  const std::vector<ItemId> gt{4, 9, 13};
  RankedList l = hits({4, 9, 13});
  for (int v = 20; v < 37; ++v) l.entries.emplace_back(CatalogHit{v});
  for (int k = 1; k <= 20; ++k) EXPECT_NEAR(ndcg_at_k(l, gt, k), 1.0, 1e-15);
}

TEST(Metrics, BoundedOnRandomLists) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> item(0, 12), len(0, 25);
  for (int trial = 0; trial < 300; ++trial) {
    RankedList l;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) l.entries.emplace_back(CatalogHit{item(rng)});
    const std::vector<ItemId> gt{1, 2, 3, 4, 5};
    for (int k : {1, 5, 10, 20}) {
      const double r = recall_at_k(l, gt, k), g = ndcg_at_k(l, gt, k);
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
      EXPECT_GE(g, 0.0);
      EXPECT_LE(g, 1.0 + 1e-15);
    }
  }
}

TEST(Metrics, InCatalogRatioAndLength) {
  RankedList l = hits({0, 1, 2});
  l.entries.emplace_back(OutOfCatalog{{3}});
  EXPECT_EQ(in_catalog_ratio(l), 0.75);
  EXPECT_EQ(in_catalog_ratio(RankedList{}), 0.0);
  EXPECT_TRUE(well_formed_length(l, 4));
  EXPECT_FALSE(well_formed_length(l, 3));
  l.terminated = false;
  EXPECT_FALSE(well_formed_length(l, 4));
}

}  // namespace
}  // namespace rankalign
