#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rankalign/catalog.hpp"

namespace rankalign {

/// rel[k-1] for generated ranks k = 1..n_gen; 1 only for the first hit of a
/// ground-truth item.
using RelevanceVector = std::vector<int>;

RelevanceVector relevance(const RankedList& parsed,
                          std::span<const ItemId> gt);

/// sum_{k=1..n} rel_k / log2(k+1); ranks past rel.size() contribute 0.
double dcg_at_n(std::span<const int> rel, int n);

/// Causal tail sum_{j=k..n} rel_j / log2(j+1), k is 1-based.
double dcg_k_to_n(std::span<const int> rel, int k, int n);

inline constexpr double kInfiniteGamma = std::numeric_limits<double>::infinity();

/// sum_{j=k..n} rel_j / gamma^(j-k); gamma = +inf credits rel_k alone.
double exp_decay_return(std::span<const int> rel, int k, int n, double gamma);

enum class RewardScheme { kSeqDcg, kCausalDcg, kExpDecay };

std::string to_string(RewardScheme scheme);
RewardScheme reward_scheme_from_string(const std::string& s);

struct RewardShaping {
  RewardScheme scheme = RewardScheme::kExpDecay;
  double gamma = kInfiniteGamma;  // only read for kExpDecay
};

/// Returns of one rollout, one slot per rank 1..max(N, n_gen).
///
/// Slots past n_gen (when the list stopped early) are phantom ranks: zero
/// return, no tokens. Slots past N are overflow ranks.
struct ReturnTensor {
  RewardScheme scheme = RewardScheme::kSeqDcg;
  int list_length = 0;  // N
  int generated = 0;    // n_gen
  double sequence_reward = 0.0;
  std::vector<double> returns;
  std::vector<bool> penalized;

  int slots() const { return static_cast<int>(returns.size()); }
  bool present(int k) const { return k >= 1 && k <= generated; }
  bool overflow(int k) const { return k > list_length; }
};

ReturnTensor compute_returns(std::span<const int> rel, int n,
                             const RewardShaping& shaping);

/// Instruction-following penalties. eps_under goes to the rank unit that holds
/// the premature stop token (or the last unit of an unterminated short list);
/// every rank unit past N takes eps_over. For kSeqDcg the penalties are added to
/// the sequence reward and re-broadcast. Both values must be <= 0; 0 disables.
ReturnTensor apply_penalties(ReturnTensor returns, const RankedList& parsed,
                             int n, double eps_over, double eps_under);

/// True when the list is terminated and has exactly n rank units.
bool well_formed_length(const RankedList& parsed, int n);

double recall_at_k(const RankedList& parsed, std::span<const ItemId> gt, int k);
double ndcg_at_k(const RankedList& parsed, std::span<const ItemId> gt, int k);

/// Ideal DCG with min(num_positive, k) hits at the top.
double ideal_dcg(int num_positive, int k);

/// Fraction of entries that are catalog hits; 0 for an empty list.
double in_catalog_ratio(const RankedList& parsed);

}  // namespace rankalign
