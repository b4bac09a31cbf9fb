#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rankalign/catalog.hpp"

namespace rankalign {

/// What the policy observes about a dialogue. The harness derives it from the
/// context id (identity or cluster); the policy only hashes it.
struct ContextKey {
  std::int64_t value = 0;
  bool operator==(const ContextKey&) const = default;
};

/// Per-token log pi(token_t | context, prefix) aligned with a token sequence.
using TokenLogProbs = std::vector<double>;

/// Tabular softmax policy: logits[state, token] with
/// state = hash(context key, rank index, position within rank, previous token)
/// mod num_states.
class PolicyParams {
 public:
  PolicyParams(int num_states, int vocab_size, std::uint64_t hash_seed);

  int num_states() const { return num_states_; }
  int vocab_size() const { return vocab_size_; }
  std::uint64_t hash_seed() const { return hash_seed_; }

  std::span<double> row(std::size_t state) {
    return {logits_.data() + state * static_cast<std::size_t>(vocab_size_),
            static_cast<std::size_t>(vocab_size_)};
  }
  std::span<const double> row(std::size_t state) const {
    return {logits_.data() + state * static_cast<std::size_t>(vocab_size_),
            static_cast<std::size_t>(vocab_size_)};
  }
  std::vector<double>& logits() { return logits_; }
  const std::vector<double>& logits() const { return logits_; }

  /// rank is 0-based (number of delimiters already emitted); prev < 0 marks
  /// the start of the generation.
  std::size_t state_index(ContextKey ctx, int rank, int position,
                          TokenId prev) const;

  bool operator==(const PolicyParams&) const = default;

 private:
  int num_states_;
  int vocab_size_;
  std::uint64_t hash_seed_;
  std::vector<double> logits_;
};

/// Frozen copy of a parameter table (theta_old or the reference policy).
class PolicySnapshot {
 public:
  explicit PolicySnapshot(const PolicyParams& params)
      : params_(std::make_shared<const PolicyParams>(params)) {}

  /// Non-owning view: `params` must outlive it and stay unchanged while it
  /// is read.
  static PolicySnapshot view(const PolicyParams& params) {
    return PolicySnapshot(
        std::shared_ptr<const PolicyParams>(std::shared_ptr<void>(), &params));
  }

  const PolicyParams& params() const { return *params_; }

 private:
  explicit PolicySnapshot(std::shared_ptr<const PolicyParams> params)
      : params_(std::move(params)) {}

  std::shared_ptr<const PolicyParams> params_;
};

/// Walks a token sequence and yields the state used for each token.
/// `delim` advances the rank index and resets the within-rank position.
std::vector<std::size_t> sequence_states(const PolicyParams& params,
                                         ContextKey ctx,
                                         std::span<const TokenId> tokens,
                                         TokenId delim);

/// log-softmax of one logits row.
void log_softmax(std::span<const double> logits, std::span<double> out);

TokenLogProbs logprob_sequence(const PolicyParams& params, ContextKey ctx,
                               std::span<const TokenId> tokens, TokenId delim);

struct SamplingOptions {
  int max_tokens = 96;
  double temperature = 1.0;
  bool greedy = false;  // argmax, lowest token id on ties
};

struct Rollout {
  TokenSeq tokens;
  TokenLogProbs logprobs;  // untempered, under the sampling parameters
};

/// Ancestral sampling until eos or the token budget. Requires group_size >= 2.
std::vector<Rollout> sample_rollouts(const PolicySnapshot& policy,
                                     ContextKey ctx, int group_size,
                                     const SamplingOptions& options,
                                     TokenId delim, TokenId eos,
                                     std::uint64_t seed);

/// Single deterministic argmax decode.
Rollout greedy_decode(const PolicyParams& params, ContextKey ctx,
                      int max_tokens, TokenId delim, TokenId eos);

/// Sparse gradient over the logits table, stored as touched rows in first-touch
/// order so reductions are reproducible.
class Gradient {
 public:
  Gradient(int num_states, int vocab_size)
      : num_states_(num_states), vocab_size_(vocab_size) {}

  int num_states() const { return num_states_; }
  int vocab_size() const { return vocab_size_; }

  /// Row for `state`, zero-initialized on first access.
  std::span<double> row(std::size_t state);
  double at(std::size_t state, TokenId token) const;

  const std::vector<std::size_t>& states() const { return states_; }
  std::span<const double> row_at_slot(std::size_t slot) const {
    return {values_.data() + slot * static_cast<std::size_t>(vocab_size_),
            static_cast<std::size_t>(vocab_size_)};
  }

  void add_scaled(const Gradient& other, double scale);
  void scale(double factor);
  double squared_norm() const;
  std::vector<double> to_dense() const;

  /// params += step * gradient.
  void apply_to(PolicyParams& params, double step) const;

 private:
  int num_states_;
  int vocab_size_;
  std::vector<std::size_t> states_;
  std::vector<double> values_;
  std::unordered_map<std::size_t, std::size_t> slot_;
};

/// out += sum_t weights[t] * grad log pi(token_t).
void accumulate_grad_logprob(const PolicyParams& params, ContextKey ctx,
                             std::span<const TokenId> tokens,
                             std::span<const double> weights, TokenId delim,
                             Gradient& out);

Gradient grad_logprob(const PolicyParams& params, ContextKey ctx,
                      std::span<const TokenId> tokens,
                      std::span<const double> weights, TokenId delim);

struct Demonstration {
  ContextKey ctx;
  TokenSeq tokens;
};

struct LossAndGrad {
  double loss;
  Gradient grad;
};

/// Mean over pairs of -sum_t log pi(token_t), and its gradient.
LossAndGrad sft_loss_and_grad(const PolicyParams& params,
                              std::span<const Demonstration> dataset,
                              TokenId delim);

double sft_loss(const PolicyParams& params,
                std::span<const Demonstration> dataset, TokenId delim);

/// Flat little-endian float64 table at `path`, sidecar JSON at path + ".json"
/// holding {S, V, hash_seed}.
void save_checkpoint(const PolicyParams& params,
                     const std::filesystem::path& path);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace rankalign
