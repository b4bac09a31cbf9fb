#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rankalign/catalog.hpp"
#include "rankalign/env.hpp"

namespace rankalign {

/// Teacher recommendations, rank order, as indices into the teacher's own
/// item universe (which may contain items outside the catalog).
struct TeacherList {
  std::vector<int> items;
};

enum class ScoreStage { kRemap, kReflect, kFinal };
std::string to_string(ScoreStage stage);

struct ScoreVector {
  ScoreStage stage = ScoreStage::kRemap;
  std::vector<double> scores;  // one per catalog item
};

/// Sparse positional vector: (teacher item, 1/sqrt(rank)) in rank order.
using PositionalScores = std::vector<std::pair<int, double>>;

class SimilarityProvider {
 public:
  virtual ~SimilarityProvider() = default;
  virtual int teacher_universe_size() const = 0;
  virtual int catalog_size() const = 0;
  /// Row u of the teacher-to-catalog similarity matrix, length catalog_size.
  virtual std::span<const double> item_item_row(int teacher_item) const = 0;
  /// Catalog item the teacher item names exactly, if any.
  virtual std::optional<ItemId> in_catalog(int teacher_item) const = 0;
  /// Context-to-catalog similarity, length catalog_size.
  virtual std::vector<double> conv_item(int context_id) const = 0;
};

class Judge {
 public:
  virtual ~Judge() = default;
  /// Integer ratings in [-L, L], one per candidate.
  virtual std::vector<int> rate(int context_id,
                                std::span<const ItemId> candidates) const = 0;
};

class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual TeacherList recommend(int context_id, int length) const = 0;
};

/// Explicit matrices; rows of `item_item` are teacher items.
class DenseSimilarity final : public SimilarityProvider {
 public:
  DenseSimilarity(std::vector<std::vector<double>> item_item,
                  std::vector<std::optional<ItemId>> in_catalog,
                  std::vector<std::vector<double>> conv_item_by_context);

  int teacher_universe_size() const override {
    return static_cast<int>(item_item_.size());
  }
  int catalog_size() const override { return catalog_size_; }
  std::span<const double> item_item_row(int teacher_item) const override;
  std::optional<ItemId> in_catalog(int teacher_item) const override;
  std::vector<double> conv_item(int context_id) const override;

 private:
  int catalog_size_;
  std::vector<std::vector<double>> item_item_;
  std::vector<std::optional<ItemId>> in_catalog_;
  std::vector<std::vector<double>> conv_item_;
};

/// p[item at rank k] = 1/sqrt(k). A repeated teacher item keeps its first
/// (best) rank; later repeats are dropped.
PositionalScores positional_scores(const TeacherList& list, int universe_size);

/// s = p (S + I_ic) + lambda * s_conv.
ScoreVector remap(const PositionalScores& p, const SimilarityProvider& sim,
                  int context_id, double lambda = 1.0);

/// Indices of the `count` highest scores, ties broken by ascending item id.
std::vector<ItemId> top_items(std::span<const double> scores, int count);

struct ReflectConfig {
  int num_candidates = 40;  // N_r, must exceed N
  double gamma = 0.5;
  int scale = 2;            // L
};

/// Judge the top-N_r candidates and add gamma * rating / L to each.
ScoreVector reflect(const ScoreVector& remapped, const Judge& judge,
                    int context_id, int list_length, const ReflectConfig& cfg);

struct BiasParams {
  std::vector<double> w;  // multiplicative, starts at 1
  std::vector<double> b;  // additive, starts at 0

  static BiasParams identity(std::size_t n);
};

struct AdjustConfig {
  double lambda_w = 0.01;
  double lambda_b = 0.01;
  int steps = 200;
  double lr = 0.05;
};

/// sum_tasks sum_{j in gt} log softmax(w*s + b)_j
///   - lambda_w |w - 1|^2 - lambda_b |b|^2
double adjust_objective(const BiasParams& bias,
                        std::span<const std::vector<double>> scores,
                        std::span<const std::vector<ItemId>> gt,
                        double lambda_w, double lambda_b);

/// Gradient of adjust_objective with respect to (w, b).
BiasParams adjust_gradient(const BiasParams& bias,
                           std::span<const std::vector<double>> scores,
                           std::span<const std::vector<ItemId>> gt,
                           double lambda_w, double lambda_b);

/// Full-batch gradient ascent from (1, 0). A step that would lower the
/// objective is retried with the step size halved.
BiasParams fit_adjust(std::span<const std::vector<double>> scores,
                      std::span<const std::vector<ItemId>> gt,
                      const AdjustConfig& cfg);

ScoreVector apply_adjust(const BiasParams& bias, const ScoreVector& reflected);

/// Mean multinomial log-likelihood of the positives under softmax(scores).
double multinomial_loglik(const BiasParams& bias,
                          std::span<const std::vector<double>> scores,
                          std::span<const std::vector<ItemId>> gt);

struct SftExample {
  int context_id = 0;
  TokenSeq tokens;
};

/// Top-N catalog items by final score (ties by ascending id), serialized.
std::vector<SftExample> build_demonstrations(
    std::span<const int> context_ids,
    std::span<const std::vector<double>> final_scores, int list_length,
    const Catalog& catalog);

void write_sft_dataset(const std::vector<SftExample>& data,
                       const std::filesystem::path& path);
std::vector<SftExample> read_sft_dataset(const std::filesystem::path& path);

// Deterministic stand-ins for the external teacher, embedding and judge
// services, derived from the generator's latent structure.

struct MockConfig {
  std::uint64_t seed = 7;
  int embedding_dim = 16;
  double similarity_threshold = 0.55;
  double similarity_scale = 0.5;
  double twin_noise = 0.25;          // near-miss teacher items
  double conv_scale = 0.6;
  double conv_noise = 0.15;
  double teacher_noise = 0.6;        // Gumbel scale on teacher log-scores
  double teacher_ooc_rate = 0.2;     // chance a pick is named as its twin
  double biased_fraction = 0.3;      // items the teacher systematically under-rates
  double bias_strength = 1.5;        // log-score penalty on those items
};

/// Teacher universe = catalog items [0, C) plus one near-miss twin per item at
/// [C, 2C) that does not match the catalog exactly.
class MockWorldProviders {
 public:
  MockWorldProviders(const World& world, const MockConfig& cfg,
                     int judge_scale = 2);

  const SimilarityProvider& similarity() const { return *similarity_; }
  const Judge& judge() const { return *judge_; }
  const Teacher& teacher() const { return *teacher_; }
  const std::vector<bool>& under_rated() const { return under_rated_; }

 private:
  std::vector<bool> under_rated_;
  std::unique_ptr<SimilarityProvider> similarity_;
  std::unique_ptr<Judge> judge_;
  std::unique_ptr<Teacher> teacher_;
};

struct DistillConfig {
  double lambda = 1.0;
  ReflectConfig reflect;
  AdjustConfig adjust;
  int teacher_length = 0;  // N_raw; 0 means N
  MockConfig mocks;
};

struct TaskScores {
  int context_id = 0;
  Split split = Split::kTrain;
  ScoreVector remap;
  ScoreVector reflect;
  ScoreVector final;
};

struct DistillOutput {
  BiasParams bias;
  std::vector<TaskScores> scores;
  std::vector<SftExample> train;
  std::vector<SftExample> val;
};

/// Remap and reflect every train/val task, fit the adjust biases on train
/// positives, then build demonstrations for both splits.
DistillOutput run_distillation(const World& world, const DistillConfig& cfg);

/// JSON-lines {"context","stage","topk":[[item,score],...]}.
void write_stage_dump(const std::vector<TaskScores>& scores, int topk,
                      const std::filesystem::path& path);

}  // namespace rankalign
