#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "rankalign/align.hpp"
#include "rankalign/catalog.hpp"
#include "rankalign/policy.hpp"
#include "rankalign/rewards.hpp"

namespace rankalign::testing {

inline constexpr TokenId kDelim = 10;
inline constexpr TokenId kEos = 11;
inline constexpr int kVocab = 12;

/// A=[7] (id 0), B=[3,4] (id 1), C=[5] (id 2), D=[3,5] (id 3).
inline Catalog tiny_catalog() {
  return Catalog({{0, {7}}, {1, {3, 4}}, {2, {5}}, {3, {3, 5}}}, kVocab, kDelim,
                 kEos);
}

/// Random catalog over tokens [0, alphabet) with titles of 1..max_len tokens;
/// delim = alphabet, eos = alphabet + 1.
inline Catalog random_catalog(std::mt19937_64& rng, int items, int alphabet,
                              int max_len) {
  std::uniform_int_distribution<int> len(1, max_len);
  std::uniform_int_distribution<TokenId> tok(0, alphabet - 1);
  std::vector<Item> out;
  std::vector<TokenSeq> seen;
  while (static_cast<int>(out.size()) < items) {
    TokenSeq t(static_cast<std::size_t>(len(rng)));
    for (TokenId& x : t) x = tok(rng);
    if (std::find(seen.begin(), seen.end(), t) != seen.end()) continue;
    seen.push_back(t);
    out.push_back({static_cast<ItemId>(out.size()), t});
  }
  return Catalog(std::move(out), alphabet + 2, alphabet, alphabet + 1);
}

inline PolicyParams random_params(int states, int vocab, std::uint64_t hash_seed,
                                  double scale, std::mt19937_64& rng) {
  PolicyParams p(states, vocab, hash_seed);
  std::normal_distribution<double> n(0.0, scale);
  for (double& x : p.logits()) x = n(rng);
  return p;
}

/// Copy of `base` with every logit moved by N(0, scale).
inline PolicyParams perturbed(const PolicyParams& base, double scale,
                              std::mt19937_64& rng) {
  PolicyParams p = base;
  std::normal_distribution<double> n(0.0, scale);
  for (double& x : p.logits()) x += n(rng);
  return p;
}

struct GroupSetup {
  Catalog catalog;
  PolicyParams current;
  PolicyParams old;
  PolicyParams reference;
  RolloutGroup group;
};

/// A group sampled under `old`, with new log-probs under `current` and
/// reference log-probs under `reference`. Titles have up to three tokens so
/// rank spans are multi-token; short budgets produce overflow and phantom
/// ranks alike.
inline GroupSetup random_group(std::mt19937_64& rng, AlignMode mode, int g,
                               int n = 3, int max_tokens = 14) {
  Catalog catalog = random_catalog(rng, 8, 6, 3);
  const int vocab = catalog.vocab_size();
  PolicyParams current = random_params(97, vocab, rng(), 0.8, rng);
  // Bias the delimiter up so lists contain several ranks.
  for (int s = 0; s < current.num_states(); ++s)
    current.row(static_cast<std::size_t>(s))[static_cast<std::size_t>(catalog.delim())] += 1.0;
  PolicyParams old = perturbed(current, 0.05, rng);
  PolicyParams reference = perturbed(current, 0.3, rng);

  RewardShaping shaping;
  if (mode == AlignMode::kRankGrpo) {
    std::uniform_int_distribution<int> pick(0, 2);
    const int which = pick(rng);
    shaping = which == 0 ? RewardShaping{RewardScheme::kCausalDcg, 0}
              : which == 1
                  ? RewardShaping{RewardScheme::kExpDecay, kInfiniteGamma}
                  : RewardShaping{RewardScheme::kExpDecay, 2.0};
  } else {
    shaping = {RewardScheme::kSeqDcg, 0};
  }
  std::vector<ItemId> gt{0, 2, 5};

  RolloutGroup group;
  group.ctx = ContextKey{static_cast<std::int64_t>(rng() % 5)};
  group.list_length = n;
  group.eps_over = -0.1;
  const auto rollouts =
      sample_rollouts(PolicySnapshot(old), group.ctx, g,
                      SamplingOptions{max_tokens, 1.0, false}, catalog.delim(),
                      catalog.eos(), rng());
  for (const Rollout& r : rollouts) {
    RolloutRecord rec = make_record(r, catalog, gt, n, shaping, -0.1, -0.1);
    rec.new_logprobs = logprob_sequence(current, group.ctx, rec.tokens, catalog.delim());
    rec.ref_logprobs = logprob_sequence(reference, group.ctx, rec.tokens, catalog.delim());
    group.rollouts.push_back(std::move(rec));
  }
  return {std::move(catalog), std::move(current), std::move(old),
          std::move(reference), std::move(group)};
}

/// Clip range wide enough that no ratio of a test group is ever clipped.
inline ClipConfig unclipped(AlignMode mode, double kl_coeff = 0.05) {
  return {mode, 0.999, 1e6, kl_coeff};
}

/// Surrogate objective with new log-probs recomputed under `params`.
inline double objective_at(RolloutGroup group, const ClipConfig& clip,
                           const PolicyParams& params, TokenId delim) {
  for (RolloutRecord& r : group.rollouts)
    r.new_logprobs = logprob_sequence(params, group.ctx, r.tokens, delim);
  return surrogate_weights(group, clip).objective;
}

/// max |analytic - fd| / max |fd| over every coordinate the group touches,
/// with central differences of step h.
inline double surrogate_fd_error(const GroupSetup& s, const ClipConfig& clip,
                                 double h = 1e-5) {
  const TokenId delim = s.catalog.delim();
  const SurrogateResult res = surrogate(s.group, clip, s.current, delim);
  PolicyParams p = s.current;
  double max_diff = 0, max_ref = 0;
  std::vector<std::size_t> states;
  for (const RolloutRecord& r : s.group.rollouts)
    for (std::size_t st : sequence_states(p, s.group.ctx, r.tokens, delim))
      if (std::find(states.begin(), states.end(), st) == states.end())
        states.push_back(st);
  for (std::size_t st : states) {
    for (int v = 0; v < p.vocab_size(); ++v) {
      double& x = p.row(st)[static_cast<std::size_t>(v)];
      const double x0 = x;
      x = x0 + h;
      const double up = objective_at(s.group, clip, p, delim);
      x = x0 - h;
      const double down = objective_at(s.group, clip, p, delim);
      x = x0;
      const double fd = (up - down) / (2 * h);
      max_diff = std::max(max_diff, std::abs(fd - res.grad.at(st, v)));
      max_ref = std::max(max_ref, std::abs(fd));
    }
  }
  return max_ref > 0 ? max_diff / max_ref : max_diff;
}

}  // namespace rankalign::testing
