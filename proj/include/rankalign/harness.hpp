#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankalign/align.hpp"
#include "rankalign/distill.hpp"
#include "rankalign/env.hpp"
#include "rankalign/policy.hpp"
#include "rankalign/rewards.hpp"

namespace rankalign {

/// Raised for malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ContextFeature { kCluster, kId };

struct PolicyConfig {
  int num_states = 65536;  // S
  std::uint64_t hash_seed = 1;
  ContextFeature context_feature = ContextFeature::kCluster;
  int max_tokens = 0;  // 0: (N + 4) * (longest title + 1)
};

struct SftConfig {
  int steps = 300;
  int batch_size = 32;
  double lr = 20.0;
  std::vector<int> lr_milestones;
  int eval_every = 50;
  std::string dataset;  // empty: <out>/sft_train.jsonl, else distilled in-process
};

struct RlConfig {
  AlignMode mode = AlignMode::kRankGrpo;
  RewardScheme scheme = RewardScheme::kExpDecay;
  double gamma = kInfiniteGamma;
  int group_size = 8;  // G
  int mu = 1;
  int steps = 2000;
  int batch_contexts = 8;
  double lr = 50.0;
  std::vector<int> lr_milestones;
  double eps_low = std::numeric_limits<double>::quiet_NaN();   // NaN: mode default
  double eps_high = std::numeric_limits<double>::quiet_NaN();  // NaN: mode default
  double kl_coeff = 0.001;
  double eps_over = -0.1;
  double eps_under = -0.1;
  double temperature = 1.0;
  int eval_every = 100;
  std::string init;  // empty: <out>/sft.bin

  ClipConfig clip() const;
  RewardShaping shaping() const { return {scheme, gamma}; }
};

struct EvalConfig {
  std::vector<int> ks{5, 10, 15, 20};
  Split split = Split::kVal;
  std::string checkpoint;  // empty: <out>/rl.bin if present, else <out>/sft.bin
  std::string tasks;       // empty: tasks of the generated world
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "runs/default";
  EnvConfig env;
  PolicyConfig policy;
  DistillConfig distill;
  SftConfig sft;
  RlConfig rl;
  EvalConfig eval;

  /// Parses `[section]` / `key = value` text over the defaults. Unknown keys
  /// and unparsable values raise ConfigError.
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::filesystem::path& path);

  /// Every field, in a form from_text reads back to an identical config.
  std::string to_text() const;

  /// Sets one dotted key ("rl.mode", "seed", ...) from its text form.
  void set(const std::string& key, const std::string& value);

  /// Throws ConfigError on inconsistent settings, including mode/scheme pairing.
  void validate() const;

  int max_tokens() const;
  ContextKey context_key(int context_id) const;
};

struct MetricRow {
  int step = 0;
  std::string split;
  std::string metric;
  int k = 0;  // 0 for metrics without a cutoff
  double value = 0.0;
  bool operator==(const MetricRow&) const = default;
};

class MetricLog {
 public:
  void add(int step, const std::string& split, const std::string& metric,
           int k, double value);
  void append(const std::vector<MetricRow>& rows);

  const std::vector<MetricRow>& rows() const { return rows_; }

  /// Last recorded value matching the key; throws std::out_of_range if none.
  double value(const std::string& split, const std::string& metric,
               int k = 0) const;
  /// All values of one metric in step order.
  std::vector<double> series(const std::string& split, const std::string& metric,
                             int k = 0) const;

  /// Header step,split,metric,k,value; values printed round-trip exact.
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<MetricRow> rows_;
};

/// Recall@k and NDCG@k per k, in-catalog ratio and well-formed fraction,
/// averaged over tasks, from already decoded generations.
std::vector<MetricRow> evaluate_generations(const Catalog& catalog,
                                            std::span<const Task> tasks,
                                            std::span<const TokenSeq> generations,
                                            std::span<const int> ks,
                                            int list_length, int step,
                                            const std::string& split);

/// Greedy decode per task, then evaluate_generations.
std::vector<MetricRow> evaluate(const PolicyParams& params,
                                const RunConfig& config, const Catalog& catalog,
                                std::span<const Task> tasks, int step,
                                const std::string& split);

PolicyParams initial_policy(const RunConfig& config, const Catalog& catalog);

std::vector<Demonstration> to_demonstrations(const RunConfig& config,
                                             std::span<const SftExample> data);

struct TrainResult {
  PolicyParams params;
  MetricLog log;
};

/// Mini-batch gradient descent on the demonstration NLL from `init`.
TrainResult train_sft(const RunConfig& config, const World& world,
                      PolicyParams init, std::span<const SftExample> train,
                      std::span<const SftExample> val);

/// Group-sampled RL from `init`, which also serves as the KL reference.
TrainResult train_rl(const RunConfig& config, const World& world,
                     PolicyParams init);

// CLI commands. Each writes <out>/<command>.config.toml before running.

void run_gen_env(const RunConfig& config);
void run_distill(const RunConfig& config);
void run_sft(const RunConfig& config);
void run_rl(const RunConfig& config);
void run_eval(const RunConfig& config);

}  // namespace rankalign
