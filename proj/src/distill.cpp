#include "rankalign/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "rankalign/rng.hpp"

namespace rankalign {

std::string to_string(ScoreStage stage) {
  switch (stage) {
    case ScoreStage::kRemap: return "remap";
    case ScoreStage::kReflect: return "reflect";
    case ScoreStage::kFinal: return "final";
  }
  return "remap";
}

DenseSimilarity::DenseSimilarity(
    std::vector<std::vector<double>> item_item,
    std::vector<std::optional<ItemId>> in_catalog,
    std::vector<std::vector<double>> conv_item_by_context)
    : catalog_size_(item_item.empty()
                        ? 0
                        : static_cast<int>(item_item.front().size())),
      item_item_(std::move(item_item)),
      in_catalog_(std::move(in_catalog)),
      conv_item_(std::move(conv_item_by_context)) {
  if (in_catalog_.size() != item_item_.size())
    throw std::invalid_argument("similarity: indicator rows != teacher items");
  for (const auto& row : item_item_)
    if (static_cast<int>(row.size()) != catalog_size_)
      throw std::invalid_argument("similarity: ragged item-item matrix");
  for (const auto& m : in_catalog_)
    if (m && (*m < 0 || *m >= catalog_size_))
      throw std::invalid_argument("similarity: indicator outside catalog");
  for (const auto& row : conv_item_)
    if (static_cast<int>(row.size()) != catalog_size_)
      throw std::invalid_argument("similarity: conv-item length != catalog");
}

std::span<const double> DenseSimilarity::item_item_row(int teacher_item) const {
  return item_item_.at(static_cast<std::size_t>(teacher_item));
}

std::optional<ItemId> DenseSimilarity::in_catalog(int teacher_item) const {
  return in_catalog_.at(static_cast<std::size_t>(teacher_item));
}

std::vector<double> DenseSimilarity::conv_item(int context_id) const {
  return conv_item_.at(static_cast<std::size_t>(context_id));
}

PositionalScores positional_scores(const TeacherList& list, int universe_size) {
  if (list.items.empty())
    throw std::invalid_argument("positional_scores: empty teacher list");
  PositionalScores p;
  std::unordered_set<int> seen;
  for (std::size_t k = 0; k < list.items.size(); ++k) {
    const int u = list.items[k];
    if (u < 0 || u >= universe_size)
      throw std::invalid_argument("positional_scores: item outside universe");
    if (!seen.insert(u).second) continue;
    p.emplace_back(u, 1.0 / std::sqrt(static_cast<double>(k + 1)));
  }
  return p;
}

ScoreVector remap(const PositionalScores& p, const SimilarityProvider& sim,
                  int context_id, double lambda) {
  const auto n = static_cast<std::size_t>(sim.catalog_size());
  ScoreVector out{ScoreStage::kRemap, std::vector<double>(n, 0.0)};
  for (const auto& [u, pu] : p) {
    if (u < 0 || u >= sim.teacher_universe_size())
      throw std::invalid_argument("remap: teacher item outside universe");
    const auto row = sim.item_item_row(u);
    if (row.size() != n)
      throw std::invalid_argument("remap: similarity row length mismatch");
    for (std::size_t v = 0; v < n; ++v) out.scores[v] += pu * row[v];
    if (auto hit = sim.in_catalog(u)) out.scores[static_cast<std::size_t>(*hit)] += pu;
  }
  if (lambda != 0.0) {
    const auto conv = sim.conv_item(context_id);
    if (conv.size() != n)
      throw std::invalid_argument("remap: conv-item length mismatch");
    for (std::size_t v = 0; v < n; ++v) out.scores[v] += lambda * conv[v];
  }
  return out;
}

std::vector<ItemId> top_items(std::span<const double> scores, int count) {
  if (count < 0 || static_cast<std::size_t>(count) > scores.size())
    throw std::invalid_argument("top_items: count exceeds catalog size");
  std::vector<ItemId> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto better = [&](ItemId a, ItemId b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    return sa > sb || (sa == sb && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), better);
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

ScoreVector reflect(const ScoreVector& remapped, const Judge& judge,
                    int context_id, int list_length, const ReflectConfig& cfg) {
  if (cfg.num_candidates <= list_length)
    throw std::invalid_argument("reflect: N_r must exceed N");
  if (!(cfg.gamma > 0)) throw std::invalid_argument("reflect: gamma must be > 0");
  if (cfg.scale <= 0) throw std::invalid_argument("reflect: L must be positive");
  const int n_r =
      std::min<int>(cfg.num_candidates, static_cast<int>(remapped.scores.size()));
  const auto candidates = top_items(remapped.scores, n_r);
  const auto ratings = judge.rate(context_id, candidates);
  if (ratings.size() != candidates.size())
    throw std::runtime_error("reflect: judge returned wrong rating count");
  ScoreVector out{ScoreStage::kReflect, remapped.scores};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (std::abs(ratings[i]) > cfg.scale)
      throw std::runtime_error("reflect: rating outside [-L, L]");
    out.scores[static_cast<std::size_t>(candidates[i])] +=
        cfg.gamma * static_cast<double>(ratings[i]) / cfg.scale;
  }
  return out;
}

BiasParams BiasParams::identity(std::size_t n) {
  return {std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)};
}

namespace {

void check_adjust_inputs(const BiasParams& bias,
                         std::span<const std::vector<double>> scores,
                         std::span<const std::vector<ItemId>> gt) {
  if (scores.empty()) throw std::invalid_argument("adjust: no training tasks");
  if (scores.size() != gt.size())
    throw std::invalid_argument("adjust: scores/gt count mismatch");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != bias.w.size())
      throw std::invalid_argument("adjust: score length != catalog size");
    if (gt[i].empty()) throw std::invalid_argument("adjust: empty ground truth");
  }
}

// log-softmax of w*s + b into `out`.
void adjusted_log_softmax(const BiasParams& bias, std::span<const double> s,
                          std::vector<double>& out) {
  const std::size_t n = s.size();
  out.resize(n);
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < n; ++v) {
    out[v] = bias.w[v] * s[v] + bias.b[v];
    m = std::max(m, out[v]);
  }
  double z = 0;
  for (double x : out) z += std::exp(x - m);
  const double lse = m + std::log(z);
  for (double& x : out) x -= lse;
}

}  // namespace

double adjust_objective(const BiasParams& bias,
                        std::span<const std::vector<double>> scores,
                        std::span<const std::vector<ItemId>> gt,
                        double lambda_w, double lambda_b) {
  check_adjust_inputs(bias, scores, gt);
  double obj = 0;
  std::vector<double> logq;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    adjusted_log_softmax(bias, scores[i], logq);
    for (ItemId j : gt[i]) obj += logq[static_cast<std::size_t>(j)];
  }
  for (std::size_t v = 0; v < bias.w.size(); ++v) {
    obj -= lambda_w * (bias.w[v] - 1.0) * (bias.w[v] - 1.0);
    obj -= lambda_b * bias.b[v] * bias.b[v];
  }
  return obj;
}

BiasParams adjust_gradient(const BiasParams& bias,
                           std::span<const std::vector<double>> scores,
                           std::span<const std::vector<ItemId>> gt,
                           double lambda_w, double lambda_b) {
  check_adjust_inputs(bias, scores, gt);
  const std::size_t n = bias.w.size();
  BiasParams g{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  std::vector<double> logq;
  std::vector<double> dz(n);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    adjusted_log_softmax(bias, scores[i], logq);
    const double m = static_cast<double>(gt[i].size());
    for (std::size_t v = 0; v < n; ++v) dz[v] = -m * std::exp(logq[v]);
    for (ItemId j : gt[i]) dz[static_cast<std::size_t>(j)] += 1.0;
    for (std::size_t v = 0; v < n; ++v) {
      g.w[v] += dz[v] * scores[i][v];
      g.b[v] += dz[v];
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    g.w[v] -= 2.0 * lambda_w * (bias.w[v] - 1.0);
    g.b[v] -= 2.0 * lambda_b * bias.b[v];
  }
  return g;
}

BiasParams fit_adjust(std::span<const std::vector<double>> scores,
                      std::span<const std::vector<ItemId>> gt,
                      const AdjustConfig& cfg) {
  if (scores.empty()) throw std::invalid_argument("fit_adjust: no tasks");
  BiasParams bias = BiasParams::identity(scores.front().size());
  check_adjust_inputs(bias, scores, gt);
  double lr = cfg.lr;
  double current = adjust_objective(bias, scores, gt, cfg.lambda_w, cfg.lambda_b);
  for (int step = 0; step < cfg.steps; ++step) {
    const BiasParams g = adjust_gradient(bias, scores, gt, cfg.lambda_w, cfg.lambda_b);
    bool accepted = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      BiasParams next = bias;
      for (std::size_t v = 0; v < next.w.size(); ++v) {
        next.w[v] += lr * g.w[v];
        next.b[v] += lr * g.b[v];
      }
      const double obj =
          adjust_objective(next, scores, gt, cfg.lambda_w, cfg.lambda_b);
      if (obj >= current) {
        bias = std::move(next);
        current = obj;
        accepted = true;
      } else {
        lr *= 0.5;
      }
    }
    if (!accepted) break;  // at a stationary point to working precision
  }
  return bias;
}

ScoreVector apply_adjust(const BiasParams& bias, const ScoreVector& reflected) {
  if (reflected.scores.size() != bias.w.size())
    throw std::invalid_argument("apply_adjust: length mismatch");
  ScoreVector out{ScoreStage::kFinal, reflected.scores};
  for (std::size_t v = 0; v < out.scores.size(); ++v)
    out.scores[v] = bias.w[v] * reflected.scores[v] + bias.b[v];
  return out;
}

double multinomial_loglik(const BiasParams& bias,
                          std::span<const std::vector<double>> scores,
                          std::span<const std::vector<ItemId>> gt) {
  return adjust_objective(bias, scores, gt, 0.0, 0.0) /
         static_cast<double>(scores.size());
}

std::vector<SftExample> build_demonstrations(
    std::span<const int> context_ids,
    std::span<const std::vector<double>> final_scores, int list_length,
    const Catalog& catalog) {
  if (context_ids.size() != final_scores.size())
    throw std::invalid_argument("build_demonstrations: count mismatch");
  if (list_length <= 0 || static_cast<std::size_t>(list_length) > catalog.size())
    throw std::invalid_argument("build_demonstrations: N exceeds catalog size");
  std::vector<SftExample> out;
  out.reserve(context_ids.size());
  for (std::size_t i = 0; i < context_ids.size(); ++i) {
    if (final_scores[i].size() != catalog.size())
      throw std::invalid_argument("build_demonstrations: score length mismatch");
    const auto items = top_items(final_scores[i], list_length);
    out.push_back({context_ids[i], serialize_list(catalog, items, true)});
  }
  return out;
}

void write_sft_dataset(const std::vector<SftExample>& data,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const SftExample& ex : data)
    out << nlohmann::json{{"context", ex.context_id}, {"tokens", ex.tokens}}.dump()
        << '\n';
}

std::vector<SftExample> read_sft_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<SftExample> data;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    data.push_back({j.at("context").get<int>(), j.at("tokens").get<TokenSeq>()});
  }
  return data;
}

namespace {

std::vector<double> unit_gaussian(Rng& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm = 0;
  for (double& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> normalized_law(const World& world, int cluster) {
  std::vector<double> a = world.cluster_laws.at(static_cast<std::size_t>(cluster));
  const double m = *std::max_element(a.begin(), a.end());
  for (double& x : a) x /= m;
  return a;
}

class MockSimilarity final : public SimilarityProvider {
 public:
  MockSimilarity(const World& world, const MockConfig& cfg)
      : world_(world), cfg_(cfg) {
    const int c = static_cast<int>(world.catalog.size());
    Rng rng = make_rng(cfg.seed, "mock/embeddings");
    std::vector<std::vector<double>> emb;
    emb.reserve(static_cast<std::size_t>(2 * c));
    for (int v = 0; v < c; ++v) emb.push_back(unit_gaussian(rng, cfg.embedding_dim));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int v = 0; v < c; ++v) {
      std::vector<double> twin = emb[static_cast<std::size_t>(v)];
      double norm = 0;
      for (double& x : twin) {
        x += cfg.twin_noise * normal(rng) / std::sqrt(cfg.embedding_dim);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (double& x : twin) x /= norm;
      emb.push_back(std::move(twin));
    }
    rows_.assign(static_cast<std::size_t>(2 * c),
                 std::vector<double>(static_cast<std::size_t>(c), 0.0));
    for (int u = 0; u < 2 * c; ++u) {
      for (int v = 0; v < c; ++v) {
        const double cs = dot(emb[static_cast<std::size_t>(u)],
                              emb[static_cast<std::size_t>(v)]);
        if (cs > cfg.similarity_threshold) {
          rows_[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] =
              cfg.similarity_scale * (cs - cfg.similarity_threshold) /
              (1.0 - cfg.similarity_threshold);
        }
      }
    }
  }

  int teacher_universe_size() const override {
    return static_cast<int>(rows_.size());
  }
  int catalog_size() const override {
    return static_cast<int>(world_.catalog.size());
  }
  std::span<const double> item_item_row(int u) const override {
    return rows_.at(static_cast<std::size_t>(u));
  }
  std::optional<ItemId> in_catalog(int u) const override {
    if (u >= 0 && u < catalog_size()) return u;
    return std::nullopt;
  }
  std::vector<double> conv_item(int context_id) const override {
    const int cluster = context_cluster(context_id, world_.config.num_clusters);
    auto a = normalized_law(world_, cluster);
    Rng rng = make_rng(cfg_.seed, "mock/conv",
                       static_cast<std::uint64_t>(context_id));
    std::normal_distribution<double> normal(0.0, cfg_.conv_noise);
    for (double& x : a) x = cfg_.conv_scale * x + normal(rng);
    return a;
  }

 private:
  const World& world_;
  MockConfig cfg_;
  std::vector<std::vector<double>> rows_;
};

class MockJudge final : public Judge {
 public:
  MockJudge(const World& world, int scale) : world_(world), scale_(scale) {}

  std::vector<int> rate(int context_id,
                        std::span<const ItemId> candidates) const override {
    const int cluster = context_cluster(context_id, world_.config.num_clusters);
    const auto a = normalized_law(world_, cluster);
    std::vector<int> out;
    out.reserve(candidates.size());
    for (ItemId v : candidates) {
      const double x = a.at(static_cast<std::size_t>(v));
      int level = -scale_;
      if (x > 0) {
        level = -scale_ + 1 + static_cast<int>(std::floor(x * 2 * scale_));
        level = std::min(level, scale_);
      }
      out.push_back(level);
    }
    return out;
  }

 private:
  const World& world_;
  int scale_;
};

class MockTeacher final : public Teacher {
 public:
  MockTeacher(const World& world, const MockConfig& cfg,
              const std::vector<bool>& under_rated)
      : world_(world), cfg_(cfg), under_rated_(under_rated) {}

  TeacherList recommend(int context_id, int length) const override {
    const int cluster = context_cluster(context_id, world_.config.num_clusters);
    const auto& law = world_.cluster_laws.at(static_cast<std::size_t>(cluster));
    Rng rng = make_rng(cfg_.seed, "mock/teacher",
                       static_cast<std::uint64_t>(context_id));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> score(law.size());
    for (std::size_t v = 0; v < law.size(); ++v) {
      const double gumbel = -std::log(-std::log(unif(rng) + 1e-300) + 1e-300);
      score[v] = std::log(law[v] + 1e-4) + cfg_.teacher_noise * gumbel -
                 (under_rated_[v] ? cfg_.bias_strength : 0.0);
    }
    const auto picks = top_items(score, length);
    TeacherList out;
    const int c = static_cast<int>(law.size());
    for (ItemId v : picks)
      out.items.push_back(unif(rng) < cfg_.teacher_ooc_rate ? c + v : v);
    return out;
  }

 private:
  const World& world_;
  MockConfig cfg_;
  const std::vector<bool>& under_rated_;
};

}  // namespace

MockWorldProviders::MockWorldProviders(const World& world, const MockConfig& cfg,
                                       int judge_scale) {
  Rng rng = make_rng(cfg.seed, "mock/bias");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  under_rated_.resize(world.catalog.size());
  for (std::size_t v = 0; v < under_rated_.size(); ++v)
    under_rated_[v] = unif(rng) < cfg.biased_fraction;
  similarity_ = std::make_unique<MockSimilarity>(world, cfg);
  judge_ = std::make_unique<MockJudge>(world, judge_scale);
  teacher_ = std::make_unique<MockTeacher>(world, cfg, under_rated_);
}

DistillOutput run_distillation(const World& world, const DistillConfig& cfg) {
  const int n = world.config.list_length;
  const int n_raw = cfg.teacher_length > 0 ? cfg.teacher_length : n;
  MockWorldProviders mocks(world, cfg.mocks, cfg.reflect.scale);

  DistillOutput out;
  std::vector<std::vector<double>> train_scores;
  std::vector<std::vector<ItemId>> train_gt;
  for (const Task& task : world.tasks) {
    if (task.split == Split::kTest) continue;
    TaskScores ts;
    ts.context_id = task.context_id;
    ts.split = task.split;
    const TeacherList raw = mocks.teacher().recommend(task.context_id, n_raw);
    const auto p =
        positional_scores(raw, mocks.similarity().teacher_universe_size());
    ts.remap = remap(p, mocks.similarity(), task.context_id, cfg.lambda);
    ts.reflect = reflect(ts.remap, mocks.judge(), task.context_id, n, cfg.reflect);
    if (task.split == Split::kTrain) {
      train_scores.push_back(ts.reflect.scores);
      train_gt.push_back(task.gt);
    }
    out.scores.push_back(std::move(ts));
  }
  if (train_scores.empty())
    throw std::runtime_error("distill: no training tasks");
  out.bias = fit_adjust(train_scores, train_gt, cfg.adjust);

  std::vector<int> train_ids, val_ids;
  std::vector<std::vector<double>> train_final, val_final;
  for (TaskScores& ts : out.scores) {
    ts.final = apply_adjust(out.bias, ts.reflect);
    if (ts.split == Split::kTrain) {
      train_ids.push_back(ts.context_id);
      train_final.push_back(ts.final.scores);
    } else {
      val_ids.push_back(ts.context_id);
      val_final.push_back(ts.final.scores);
    }
  }
  out.train = build_demonstrations(train_ids, train_final, n, world.catalog);
  if (!val_ids.empty())
    out.val = build_demonstrations(val_ids, val_final, n, world.catalog);
  return out;
}

void write_stage_dump(const std::vector<TaskScores>& scores, int topk,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const TaskScores& ts : scores) {
    for (const ScoreVector* sv : {&ts.remap, &ts.reflect, &ts.final}) {
      nlohmann::json top = nlohmann::json::array();
      const int k = std::min<int>(topk, static_cast<int>(sv->scores.size()));
      for (ItemId v : top_items(sv->scores, k))
        top.push_back({v, sv->scores[static_cast<std::size_t>(v)]});
      out << nlohmann::json{{"context", ts.context_id},
                            {"stage", to_string(sv->stage)},
                            {"topk", top}}
                 .dump()
          << '\n';
    }
  }
}

}  // namespace rankalign
