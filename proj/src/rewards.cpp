#include "rankalign/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace rankalign {

namespace {

double discount(int k) { return 1.0 / std::log2(static_cast<double>(k) + 1.0); }

int rel_at(std::span<const int> rel, int k) {
  return k >= 1 && static_cast<std::size_t>(k) <= rel.size()
             ? rel[static_cast<std::size_t>(k - 1)]
             : 0;
}

bool is_gt(std::span<const ItemId> gt, ItemId id) {
  return std::find(gt.begin(), gt.end(), id) != gt.end();
}

}  // namespace

RelevanceVector relevance(const RankedList& parsed,
                          std::span<const ItemId> gt) {
  RelevanceVector rel(parsed.size(), 0);
  std::unordered_set<ItemId> seen;
  for (std::size_t k = 0; k < parsed.size(); ++k) {
    const auto* hit = std::get_if<CatalogHit>(&parsed.entries[k]);
    if (hit == nullptr) continue;
    if (seen.insert(hit->item).second && is_gt(gt, hit->item)) rel[k] = 1;
  }
  return rel;
}

double dcg_at_n(std::span<const int> rel, int n) {
  if (n <= 0) throw std::invalid_argument("dcg_at_n: N must be positive");
  double s = 0;
  for (int k = 1; k <= n; ++k) s += rel_at(rel, k) * discount(k);
  return s;
}

double dcg_k_to_n(std::span<const int> rel, int k, int n) {
  if (k < 1 || k > n)
    throw std::invalid_argument("dcg_k_to_n: need 1 <= k <= N");
  double s = 0;
  for (int j = k; j <= n; ++j) s += rel_at(rel, j) * discount(j);
  return s;
}

double exp_decay_return(std::span<const int> rel, int k, int n, double gamma) {
  if (k < 1 || k > n)
    throw std::invalid_argument("exp_decay_return: need 1 <= k <= N");
  if (std::isinf(gamma) && gamma > 0) return rel_at(rel, k);
  if (!(gamma > 1.0))
    throw std::invalid_argument("exp_decay_return: gamma must exceed 1");
  // Backward recursion r(j) = rel_j + r(j+1) / gamma.
  double r = 0;
  for (int j = n; j >= k; --j) r = rel_at(rel, j) + r / gamma;
  return r;
}

std::string to_string(RewardScheme scheme) {
  switch (scheme) {
    case RewardScheme::kSeqDcg: return "seq_dcg";
    case RewardScheme::kCausalDcg: return "causal_dcg";
    case RewardScheme::kExpDecay: return "exp_decay";
  }
  return "seq_dcg";
}

RewardScheme reward_scheme_from_string(const std::string& s) {
  if (s == "seq_dcg") return RewardScheme::kSeqDcg;
  if (s == "causal_dcg") return RewardScheme::kCausalDcg;
  if (s == "exp_decay") return RewardScheme::kExpDecay;
  throw std::invalid_argument("unknown reward scheme '" + s + "'");
}

ReturnTensor compute_returns(std::span<const int> rel, int n,
                             const RewardShaping& shaping) {
  if (n <= 0) throw std::invalid_argument("compute_returns: N must be positive");
  ReturnTensor out;
  out.scheme = shaping.scheme;
  out.list_length = n;
  out.generated = static_cast<int>(rel.size());
  const int slots = std::max(n, out.generated);
  out.returns.assign(static_cast<std::size_t>(slots), 0.0);
  out.penalized.assign(static_cast<std::size_t>(slots), false);
  out.sequence_reward = dcg_at_n(rel, n);
  switch (shaping.scheme) {
    case RewardScheme::kSeqDcg:
      std::fill(out.returns.begin(), out.returns.end(), out.sequence_reward);
      break;
    case RewardScheme::kCausalDcg:
      for (int k = 1; k <= n; ++k)
        out.returns[static_cast<std::size_t>(k - 1)] = dcg_k_to_n(rel, k, n);
      break;
    case RewardScheme::kExpDecay:
      for (int k = 1; k <= n; ++k)
        out.returns[static_cast<std::size_t>(k - 1)] =
            exp_decay_return(rel, k, n, shaping.gamma);
      break;
  }
  return out;
}

ReturnTensor apply_penalties(ReturnTensor r, const RankedList& parsed, int n,
                             double eps_over, double eps_under) {
  if (eps_over > 0 || eps_under > 0)
    throw std::invalid_argument("apply_penalties: penalties must be <= 0");
  if (r.list_length != n || r.generated != static_cast<int>(parsed.size()))
    throw std::invalid_argument("apply_penalties: returns do not match list");
  const int n_gen = r.generated;
  const bool short_list = n_gen < n && n_gen > 0;
  const int overflow = std::max(0, n_gen - n);

  if (r.scheme == RewardScheme::kSeqDcg) {
    double delta = 0;
    if (short_list) delta += eps_under;
    delta += eps_over * overflow;
    r.sequence_reward += delta;
    std::fill(r.returns.begin(), r.returns.end(), r.sequence_reward);
    if (short_list) r.penalized[static_cast<std::size_t>(n_gen - 1)] = true;
    for (int k = n + 1; k <= n_gen; ++k)
      r.penalized[static_cast<std::size_t>(k - 1)] = true;
    return r;
  }

  if (short_list) {
    r.returns[static_cast<std::size_t>(n_gen - 1)] += eps_under;
    r.penalized[static_cast<std::size_t>(n_gen - 1)] = true;
  }
  for (int k = n + 1; k <= n_gen; ++k) {
    r.returns[static_cast<std::size_t>(k - 1)] = eps_over;
    r.penalized[static_cast<std::size_t>(k - 1)] = true;
  }
  return r;
}

bool well_formed_length(const RankedList& parsed, int n) {
  return parsed.terminated && static_cast<int>(parsed.size()) == n;
}

double ideal_dcg(int num_positive, int k) {
  double s = 0;
  for (int j = 1; j <= std::min(num_positive, k); ++j) s += discount(j);
  return s;
}

double recall_at_k(const RankedList& parsed, std::span<const ItemId> gt,
                   int k) {
  if (gt.empty()) throw std::invalid_argument("recall_at_k: empty ground truth");
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  const RelevanceVector rel = relevance(parsed, gt);
  int hits = 0;
  for (int j = 1; j <= k; ++j) hits += rel_at(rel, j);
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

double ndcg_at_k(const RankedList& parsed, std::span<const ItemId> gt, int k) {
  if (gt.empty()) throw std::invalid_argument("ndcg_at_k: empty ground truth");
  if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
  const RelevanceVector rel = relevance(parsed, gt);
  return dcg_at_n(rel, k) / ideal_dcg(static_cast<int>(gt.size()), k);
}

double in_catalog_ratio(const RankedList& parsed) {
  if (parsed.entries.empty()) return 0.0;
  std::size_t hits = 0;
  for (const ListEntry& e : parsed.entries)
    hits += std::holds_alternative<CatalogHit>(e) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(parsed.size());
}

}  // namespace rankalign
