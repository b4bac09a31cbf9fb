#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rankalign/catalog.hpp"
#include "rankalign/policy.hpp"
#include "rankalign/rewards.hpp"

namespace rankalign {

enum class AlignMode { kGrpo, kGspo, kRankGrpo };

std::string to_string(AlignMode mode);
AlignMode align_mode_from_string(const std::string& s);

/// Throws std::invalid_argument unless the scheme matches the mode:
/// GRPO/GSPO take seq_dcg, Rank-GRPO takes causal_dcg or exp_decay.
void check_mode_scheme(AlignMode mode, RewardScheme scheme);

struct ClipConfig {
  AlignMode mode = AlignMode::kRankGrpo;
  double eps_low = 0.06;
  double eps_high = 0.08;
  double kl_coeff = 0.001;

  /// Per-mode clip ranges: GRPO (0.2, 0.26), Rank-GRPO (0.06, 0.08),
  /// GSPO (3e-4, 4e-4); KL coefficient 0.001.
  static ClipConfig defaults(AlignMode mode);
  void validate() const;
};

/// Population-std standardization with delta = 1e-6; members within 1e-12 of
/// the mean get exactly 0.
std::vector<double> seq_advantages(std::span<const double> rewards);

inline constexpr double kStdDelta = 1e-6;

/// Column-wise standardization of a ragged G x slots return matrix.
///
/// For ranks k <= n the statistics run over entries with mask set; unmasked
/// entries get advantage 0. Ranks k > n (overflow) skip standardization and
/// take `eps_over` directly. Throws when a column k <= n has no masked entry.
std::vector<std::vector<double>> rank_advantages(
    const std::vector<std::vector<double>>& returns,
    const std::vector<std::vector<bool>>& mask, int n, double eps_over);

std::vector<double> token_ratio(std::span<const double> new_lp,
                                std::span<const double> old_lp);

/// Ratio of geometric-mean token probabilities per rank span.
std::vector<double> rank_ratio(std::span<const double> new_lp,
                               std::span<const double> old_lp,
                               std::span<const RankSpan> spans);

/// Length-normalized sequence ratio exp(mean_t(new_t - old_t)).
double seq_ratio(std::span<const double> new_lp,
                 std::span<const double> old_lp);

enum class KlGranularity { kToken, kRank };

/// Mean over units of exp(ref - new) - (ref - new) - 1. With kRank the
/// per-token values are first averaged within each span.
double kl_penalty(std::span<const double> new_lp, std::span<const double> ref_lp,
                  KlGranularity granularity,
                  std::span<const RankSpan> spans = {});

struct RolloutRecord {
  TokenSeq tokens;
  std::vector<RankSpan> spans;
  RankedList parsed;
  TokenLogProbs old_logprobs;
  TokenLogProbs new_logprobs;
  TokenLogProbs ref_logprobs;  // may be empty when kl_coeff == 0
  RelevanceVector rel;
  ReturnTensor returns;
};

struct RolloutGroup {
  ContextKey ctx;
  int list_length = 0;  // N
  double eps_over = -0.1;
  std::vector<RolloutRecord> rollouts;

  int size() const { return static_cast<int>(rollouts.size()); }
};

/// Builds a record from a sampled rollout: segments, scores and shapes it.
RolloutRecord make_record(const Rollout& rollout, const Catalog& catalog,
                          std::span<const ItemId> gt, int n,
                          const RewardShaping& shaping, double eps_over,
                          double eps_under);

/// Objective value and, per rollout, the coefficient multiplying
/// grad log pi(token_t). Clipped branches carry exactly zero weight.
struct SurrogateWeights {
  double objective = 0.0;
  double kl = 0.0;
  std::vector<std::vector<double>> token_weights;
  int clipped_units = 0;
  int total_units = 0;
};

SurrogateWeights grpo_weights(const RolloutGroup& group, const ClipConfig& clip);
SurrogateWeights gspo_weights(const RolloutGroup& group, const ClipConfig& clip);
SurrogateWeights rank_grpo_weights(const RolloutGroup& group,
                                   const ClipConfig& clip);

/// Dispatches on clip.mode.
SurrogateWeights surrogate_weights(const RolloutGroup& group,
                                   const ClipConfig& clip);

struct SurrogateResult {
  double objective = 0.0;
  double kl = 0.0;
  Gradient grad;
  int clipped_units = 0;
  int total_units = 0;
};

/// Objective and its analytic gradient with respect to `params`; the group's
/// new_logprobs must have been computed under `params`.
SurrogateResult grpo_surrogate(const RolloutGroup& group, const ClipConfig& clip,
                               const PolicyParams& params, TokenId delim);
SurrogateResult gspo_surrogate(const RolloutGroup& group, const ClipConfig& clip,
                               const PolicyParams& params, TokenId delim);
SurrogateResult rank_grpo_surrogate(const RolloutGroup& group,
                                    const ClipConfig& clip,
                                    const PolicyParams& params, TokenId delim);
SurrogateResult surrogate(const RolloutGroup& group, const ClipConfig& clip,
                          const PolicyParams& params, TokenId delim);

/// Piecewise-constant learning rate, halved at each milestone step.
struct LearningRateSchedule {
  double base = 1.0;
  std::vector<int> halving_milestones;

  double at(int step) const;
};

/// Produces a batch of groups with old log-probs and returns filled in,
/// sampled under `behavior`. `sample_index` counts sampling rounds.
using GroupSampler = std::function<std::vector<RolloutGroup>(
    const PolicySnapshot& behavior, std::int64_t sample_index)>;

struct UpdateStats {
  int step = 0;
  bool resampled = false;
  double lr = 0.0;
  double objective = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double max_abs_log_ratio = 0.0;
};

/// Gradient-ascent loop over a sampled stream. theta_old is re-captured every
/// `mu` updates and a fresh batch is sampled from it; each batch feeds exactly
/// `mu` updates.
class PolicyOptimizer {
 public:
  PolicyOptimizer(PolicyParams init, std::optional<PolicySnapshot> reference,
                  ClipConfig clip, int mu, LearningRateSchedule schedule,
                  TokenId delim, GroupSampler sampler);

  UpdateStats update_step();

  const PolicyParams& params() const { return params_; }
  PolicyParams& mutable_params() { return params_; }
  const std::vector<RolloutGroup>& batch() const { return batch_; }
  int steps() const { return steps_; }

 private:
  void refresh_logprobs();

  PolicyParams params_;
  std::optional<PolicySnapshot> reference_;
  ClipConfig clip_;
  int mu_;
  LearningRateSchedule schedule_;
  TokenId delim_;
  GroupSampler sampler_;
  std::vector<RolloutGroup> batch_;
  int steps_ = 0;
  std::int64_t sample_rounds_ = 0;
};

}  // namespace rankalign
