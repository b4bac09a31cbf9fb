#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "rankalign/harness.hpp"

using namespace rankalign;
namespace fs = std::filesystem;

namespace {

constexpr double kFdTolerance = 1e-5;
constexpr double kFdBudgetSeconds = 60;
constexpr int kFdGroupsPerMode = 21;
constexpr double kRewardTolerance = 1e-12;
constexpr int kRewardVectors = 1000;
constexpr double kEquivalenceTolerance = 1e-12;
constexpr double kDistillTolerance = 1e-12;
constexpr double kAdjustFdTolerance = 1e-5;
constexpr double kSftInCatalog = 0.95;
constexpr double kSftNdcgFactor = 5.0;
constexpr double kSftBudgetSeconds = 600;
constexpr int kRlSeeds = 5;
constexpr int kRlWinsRequired = 4;
constexpr int kRlSteps = 2000;
constexpr double kRlBudgetSeconds = 1800;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

// 1. Surrogate gradients vs central finite differences.
Outcome gradient_fidelity() {
  Outcome o;
  std::mt19937_64 rng(2024);
  const auto t0 = Clock::now();
  for (AlignMode mode : {AlignMode::kGrpo, AlignMode::kGspo, AlignMode::kRankGrpo}) {
    double worst = 0;
    bool multi_token = false;
    for (int i = 0; i < kFdGroupsPerMode; ++i) {
      const int g = std::array{2, 4, 8}[static_cast<std::size_t>(i % 3)];
      const testing::GroupSetup s = testing::random_group(rng, mode, g);
      for (const RolloutRecord& r : s.group.rollouts)
        for (const RankSpan& sp : r.spans) multi_token |= sp.length() > 2;
      worst = std::max(worst, testing::surrogate_fd_error(s, testing::unclipped(mode)));
    }
    o.require(worst < kFdTolerance, to_string(mode) + " rel err " + fmt("%.2e", worst));
    o.require(multi_token, to_string(mode) + " saw no multi-token item");
    o.note(to_string(mode) + "=" + fmt("%.1e", worst));
  }
  const double secs = seconds_since(t0);
  o.require(secs < kFdBudgetSeconds, "runtime " + fmt("%.1fs", secs));
  o.note(fmt("%.1fs", secs));
  return o;
}

// 2. DCG decomposition, exp-decay recursion and limits.
Outcome reward_identities() {
  Outcome o;
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> len(1, 30);
  std::bernoulli_distribution b(0.4);
  double worst = 0;
  bool exact = true;
  for (int trial = 0; trial < kRewardVectors; ++trial) {
    std::vector<int> rel(static_cast<std::size_t>(len(rng)));
    for (int& r : rel) r = b(rng);
    const int n = static_cast<int>(rel.size());
    const double full = dcg_at_n(rel, n);
    exact &= dcg_k_to_n(rel, 1, n) == full;
    double prefix = 0;
    for (int k = 1; k <= n; ++k) {
      worst = std::max(worst, std::abs(prefix + dcg_k_to_n(rel, k, n) - full));
      prefix += rel[static_cast<std::size_t>(k - 1)] / std::log2(k + 1.0);
      exact &= exp_decay_return(rel, k, n, kInfiniteGamma) == rel[static_cast<std::size_t>(k - 1)];
      for (double gamma : {1.5, 2.0, 4.0}) {
        const double next = k < n ? exp_decay_return(rel, k + 1, n, gamma) : 0.0;
        worst = std::max(worst, std::abs(exp_decay_return(rel, k, n, gamma) -
                                         (rel[static_cast<std::size_t>(k - 1)] + next / gamma)));
      }
    }
    worst = std::max(worst, std::abs(prefix - full));
  }
  o.require(worst < kRewardTolerance, "max deviation " + fmt("%.2e", worst));
  o.require(exact, "exact identities violated");
  o.note("max dev " + fmt("%.1e", worst));
  return o;
}

// 3. Ratios after a fresh snapshot and GRPO/GSPO agreement on-policy.
Outcome on_policy_equivalences() {
  Outcome o;
  std::mt19937_64 rng(11);
  const Catalog c = testing::random_catalog(rng, 8, 6, 3);
  for (AlignMode mode : {AlignMode::kGrpo, AlignMode::kGspo, AlignMode::kRankGrpo}) {
    const PolicyParams init = testing::random_params(97, c.vocab_size(), 3, 0.8, rng);
    const RewardShaping shaping = mode == AlignMode::kRankGrpo
                                      ? RewardShaping{}
                                      : RewardShaping{RewardScheme::kSeqDcg, 0};
    GroupSampler sampler = [&c, shaping](const PolicySnapshot& behavior, std::int64_t round) {
      std::vector<RolloutGroup> out;
      for (int ctx = 0; ctx < 3; ++ctx) {
        RolloutGroup g{{ctx}, 3, -0.1, {}};
        for (const Rollout& r : sample_rollouts(behavior, g.ctx, 4, {14, 1.0, false}, c.delim(),
                                                c.eos(), static_cast<std::uint64_t>(round * 3 + ctx)))
          g.rollouts.push_back(make_record(r, c, std::vector<ItemId>{0, 2, 5}, 3, shaping, -0.1, -0.1));
        out.push_back(std::move(g));
      }
      return out;
    };
    PolicyOptimizer opt(init, PolicySnapshot(init), ClipConfig::defaults(mode), 2, {2.0, {}},
                        c.delim(), sampler);
    for (int step = 0; step < 10; ++step) {
      const UpdateStats s = opt.update_step();
      if (s.resampled)
        o.require(s.max_abs_log_ratio == 0.0, to_string(mode) + " ratio != 1 after snapshot");
      else
        o.require(s.max_abs_log_ratio > 0.0, to_string(mode) + " off-policy step saw ratio 1");
    }
  }

  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const PolicyParams p = testing::random_params(97, c.vocab_size(), 5, 0.8, rng);
    const PolicyParams ref = testing::perturbed(p, 0.3, rng);
    const ContextKey ctx{static_cast<std::int64_t>(trial)};
    auto roll = sample_rollouts(PolicySnapshot(p), ctx, 2 + trial % 7, {14, 1.0, false},
                                c.delim(), c.eos(), rng());
    std::size_t len = roll[0].tokens.size();
    for (const Rollout& r : roll) len = std::min(len, r.tokens.size());
    RolloutGroup g{ctx, 3, -0.1, {}};
    for (Rollout& r : roll) {
      r.tokens.resize(len);
      r.logprobs.resize(len);
      RolloutRecord rec = make_record(r, c, std::vector<ItemId>{0, 2, 5}, 3,
                                      {RewardScheme::kSeqDcg, 0}, -0.1, -0.1);
      rec.new_logprobs = logprob_sequence(p, ctx, rec.tokens, c.delim());
      rec.ref_logprobs = logprob_sequence(ref, ctx, rec.tokens, c.delim());
      for (double w : token_ratio(rec.new_logprobs, rec.old_logprobs))
        o.require(w == 1.0, "token ratio != 1");
      o.require(seq_ratio(rec.new_logprobs, rec.old_logprobs) == 1.0, "sequence ratio != 1");
      g.rollouts.push_back(std::move(rec));
    }
    const double a = grpo_weights(g, ClipConfig::defaults(AlignMode::kGrpo)).objective;
    const double b = gspo_weights(g, ClipConfig::defaults(AlignMode::kGspo)).objective;
    worst = std::max(worst, std::abs(a - b));
  }
  o.require(worst < kEquivalenceTolerance, "GRPO/GSPO gap " + fmt("%.2e", worst));
  o.note("objective gap " + fmt("%.1e", worst));
  return o;
}

// 4. Flipping rel_1 moves rank-N weights under GRPO only.
Outcome non_causal_witness() {
  Outcome o;
  const Catalog c = testing::tiny_catalog();
  std::mt19937_64 rng(5);
  const PolicyParams p = testing::random_params(256, testing::kVocab, 2, 0.5, rng);
  const ContextKey ctx{1};
  const TokenSeq r0{7, testing::kDelim, 3, 5, testing::kDelim, 5, testing::kEos};
  const TokenSeq r1{3, 5, testing::kDelim, 5, testing::kDelim, 3, 4, testing::kEos};
  auto rank_n_weights = [&](AlignMode mode, RewardShaping shaping, std::vector<ItemId> gt) {
    RolloutGroup g{ctx, 3, -0.1, {}};
    for (const TokenSeq& t : {r0, r1}) {
      RolloutRecord rec = make_record(Rollout{t, logprob_sequence(p, ctx, t, testing::kDelim)},
                                      c, gt, 3, shaping, -0.1, -0.1);
      rec.new_logprobs = rec.old_logprobs;
      g.rollouts.push_back(std::move(rec));
    }
    ClipConfig clip = ClipConfig::defaults(mode);
    clip.kl_coeff = 0;
    const auto w = surrogate_weights(g, clip).token_weights;
    std::vector<double> out;
    for (std::size_t i = 0; i < 2; ++i) {
      const RankSpan& last = g.rollouts[i].spans.back();
      for (std::size_t t = last.begin; t < last.end; ++t) out.push_back(w[i][t]);
    }
    return out;
  };
  const std::vector<ItemId> before{2}, after{0, 2};
  const auto g0 = rank_n_weights(AlignMode::kGrpo, {RewardScheme::kSeqDcg, 0}, before);
  const auto g1 = rank_n_weights(AlignMode::kGrpo, {RewardScheme::kSeqDcg, 0}, after);
  const auto r0w = rank_n_weights(AlignMode::kRankGrpo, {RewardScheme::kCausalDcg, 0}, before);
  const auto r1w = rank_n_weights(AlignMode::kRankGrpo, {RewardScheme::kCausalDcg, 0}, after);
  o.require(g0 != g1, "GRPO rank-N weights unchanged");
  o.require(r0w == r1w, "Rank-GRPO rank-N weights changed");
  o.require(std::any_of(r0w.begin(), r0w.end(), [](double x) { return x != 0; }),
            "Rank-GRPO rank-N weights trivially zero");
  return o;
}

// 5. Distillation stages vs a dense re-implementation.
Outcome distillation_oracle() {
  Outcome o;
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0, 1);
  double worst = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int t = 1 + static_cast<int>(rng() % 5), cs = 2 + static_cast<int>(rng() % 7);
    std::vector<std::vector<double>> s(static_cast<std::size_t>(t), std::vector<double>(static_cast<std::size_t>(cs)));
    for (auto& row : s)
      for (double& x : row) x = n(rng);
    std::vector<std::optional<ItemId>> ic;
    for (int u = 0; u < t; ++u)
      ic.push_back(rng() % 2 ? std::optional<ItemId>(static_cast<ItemId>(rng() % static_cast<unsigned>(cs)))
                             : std::nullopt);
    std::vector<double> conv(static_cast<std::size_t>(cs));
    for (double& x : conv) x = n(rng);
    const DenseSimilarity sim(s, ic, {conv});
    std::vector<int> list(1 + rng() % 6);
    for (int& u : list) u = static_cast<int>(rng() % static_cast<unsigned>(t));

    // Dense p, dense I, full matrix product.
    std::vector<double> p(static_cast<std::size_t>(t), 0);
    std::vector<bool> seen(static_cast<std::size_t>(t), false);
    for (std::size_t k = 0; k < list.size(); ++k) {
      const auto u = static_cast<std::size_t>(list[k]);
      if (!seen[u]) p[u] = 1 / std::sqrt(static_cast<double>(k + 1));
      seen[u] = true;
    }
    std::vector<double> want(static_cast<std::size_t>(cs));
    for (int v = 0; v < cs; ++v) {
      double acc = conv[static_cast<std::size_t>(v)];
      for (int u = 0; u < t; ++u) {
        const double ind = ic[static_cast<std::size_t>(u)] == std::optional<ItemId>(v) ? 1.0 : 0.0;
        acc += p[static_cast<std::size_t>(u)] * (s[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] + ind);
      }
      want[static_cast<std::size_t>(v)] = acc;
    }
    const ScoreVector rm = remap(positional_scores(TeacherList{list}, t), sim, 0);
    for (int v = 0; v < cs; ++v)
      worst = std::max(worst, std::abs(rm.scores[static_cast<std::size_t>(v)] - want[static_cast<std::size_t>(v)]));

    std::vector<int> rating(static_cast<std::size_t>(cs));
    for (int& r : rating) r = static_cast<int>(rng() % 5) - 2;
    struct VecJudge : Judge {
      const std::vector<int>* r;
      std::vector<int> rate(int, std::span<const ItemId> cand) const override {
        std::vector<int> out;
        for (ItemId v : cand) out.push_back((*r)[static_cast<std::size_t>(v)]);
        return out;
      }
    } judge;
    judge.r = &rating;
    const int nr = 1 + static_cast<int>(rng() % static_cast<unsigned>(cs));
    const ScoreVector rf = reflect(rm, judge, 0, nr - 1, ReflectConfig{nr, 0.5, 2});
    std::vector<ItemId> order(static_cast<std::size_t>(cs));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](ItemId a, ItemId b2) {
      return rm.scores[static_cast<std::size_t>(a)] > rm.scores[static_cast<std::size_t>(b2)];
    });
    std::vector<double> want_rf = rm.scores;
    for (int i = 0; i < nr; ++i) {
      const auto v = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
      want_rf[v] += 0.5 * rating[v] / 2.0;
    }
    for (int v = 0; v < cs; ++v)
      worst = std::max(worst, std::abs(rf.scores[static_cast<std::size_t>(v)] - want_rf[static_cast<std::size_t>(v)]));

    BiasParams bias = BiasParams::identity(static_cast<std::size_t>(cs));
    for (double& x : bias.w) x += 0.2 * n(rng);
    for (double& x : bias.b) x = 0.2 * n(rng);
    const ScoreVector fin = apply_adjust(bias, rf);
    for (int v = 0; v < cs; ++v) {
      const auto uv = static_cast<std::size_t>(v);
      worst = std::max(worst, std::abs(fin.scores[uv] - (bias.w[uv] * rf.scores[uv] + bias.b[uv])));
    }
    const std::vector<std::vector<double>> sc{rf.scores};
    const std::vector<std::vector<ItemId>> gt{{static_cast<ItemId>(rng() % static_cast<unsigned>(cs))}};
    double z_max = -1e300;
    for (double z : fin.scores) z_max = std::max(z_max, z);
    double norm = 0;
    for (double z : fin.scores) norm += std::exp(z - z_max);
    double want_obj = fin.scores[static_cast<std::size_t>(gt[0][0])] - z_max - std::log(norm);
    for (std::size_t v = 0; v < bias.w.size(); ++v)
      want_obj -= 0.01 * (bias.w[v] - 1) * (bias.w[v] - 1) + 0.01 * bias.b[v] * bias.b[v];
    worst = std::max(worst, std::abs(adjust_objective(bias, sc, gt, 0.01, 0.01) - want_obj));
  }
  o.require(worst < kDistillTolerance, "oracle deviation " + fmt("%.2e", worst));
  o.note("oracle dev " + fmt("%.1e", worst));

  // Adjust gradient on a 5-item catalog.
  std::vector<std::vector<double>> scores(8, std::vector<double>(5));
  std::vector<std::vector<ItemId>> gt(8);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (double& x : scores[i]) x = n(rng);
    gt[i] = {static_cast<ItemId>(i % 5), static_cast<ItemId>((i + 3) % 5)};
  }
  BiasParams bias = BiasParams::identity(5);
  for (double& x : bias.w) x += 0.3 * n(rng);
  for (double& x : bias.b) x = 0.3 * n(rng);
  const BiasParams grad = adjust_gradient(bias, scores, gt, 0.01, 0.01);
  double diff = 0, ref = 0;
  for (auto [param, g] : {std::pair{&bias.w, &grad.w}, std::pair{&bias.b, &grad.b}}) {
    for (std::size_t v = 0; v < param->size(); ++v) {
      const double x0 = (*param)[v], h = 1e-6;
      (*param)[v] = x0 + h;
      const double up = adjust_objective(bias, scores, gt, 0.01, 0.01);
      (*param)[v] = x0 - h;
      const double down = adjust_objective(bias, scores, gt, 0.01, 0.01);
      (*param)[v] = x0;
      const double fd = (up - down) / (2 * h);
      diff = std::max(diff, std::abs(fd - (*g)[v]));
      ref = std::max(ref, std::abs(fd));
    }
  }
  o.require(diff / ref < kAdjustFdTolerance, "adjust fd " + fmt("%.2e", diff / ref));
  o.note("adjust fd " + fmt("%.1e", diff / ref));

  // Held-out likelihood on the default (popularity-biased) env.
  const World world = generate(EnvConfig{});
  const DistillOutput out = run_distillation(world, DistillConfig{});
  std::vector<std::vector<double>> val_scores;
  std::vector<std::vector<ItemId>> val_gt;
  for (const TaskScores& t : out.scores) {
    if (t.split != Split::kVal) continue;
    val_scores.push_back(t.reflect.scores);
    val_gt.push_back(world.tasks[static_cast<std::size_t>(t.context_id)].gt);
  }
  const double before = multinomial_loglik(BiasParams::identity(world.catalog.size()), val_scores, val_gt);
  const double after = multinomial_loglik(out.bias, val_scores, val_gt);
  o.require(after > before, "held-out loglik did not improve");
  o.note("held-out loglik " + fmt("%.3f", before) + " -> " + fmt("%.3f", after));
  return o;
}

struct SftRun {
  RunConfig config;
  World world;
  PolicyParams params;
  MetricLog log;
};

SftRun default_sft() {
  RunConfig config;
  World world = generate(config.env);
  const DistillOutput d = run_distillation(world, config.distill);
  TrainResult r = train_sft(config, world, initial_policy(config, world.catalog), d.train, d.val);
  return {config, std::move(world), std::move(r.params), std::move(r.log)};
}

// 6. SFT warm start on the default env.
Outcome sft_warm_start(std::optional<SftRun>& sft) {
  Outcome o;
  const auto t0 = Clock::now();
  sft = default_sft();
  const double secs = seconds_since(t0);
  const int n = sft->config.env.list_length;
  MetricLog zero;
  zero.append(evaluate(initial_policy(sft->config, sft->world.catalog), sft->config,
                       sft->world.catalog, sft->world.split(Split::kVal), 0, "val"));
  const double zero_ndcg = zero.value("val", "ndcg", n);
  const double ndcg = sft->log.value("val", "ndcg", n);
  const double in_cat = sft->log.value("val", "in_catalog");
  o.require(in_cat >= kSftInCatalog, "in-catalog " + fmt("%.4f", in_cat));
  o.require(ndcg >= kSftNdcgFactor * zero_ndcg && ndcg > 0,
            "ndcg " + fmt("%.4f", ndcg) + " vs zero-init " + fmt("%.4f", zero_ndcg));
  o.require(secs < kSftBudgetSeconds, "runtime " + fmt("%.0fs", secs));
  o.note("in_catalog=" + fmt("%.4f", in_cat) + " ndcg@20=" + fmt("%.4f", ndcg) +
         " zero-init=" + fmt("%.4f", zero_ndcg) + " " + fmt("%.1fs", secs));
  return o;
}

struct RlRuns {
  std::map<std::pair<std::string, int>, MetricLog> logs;
};

// 7. RL from the SFT checkpoint, Rank-GRPO(exp_inf) vs GRPO.
Outcome rl_improvement(const SftRun& sft, RlRuns& runs) {
  Outcome o;
  const int n = sft.config.env.list_length;
  const double base = sft.log.value("val", "ndcg", n);
  std::map<std::string, double> secs;
  std::map<std::string, std::vector<double>> finals;
  for (int seed = 1; seed <= kRlSeeds; ++seed) {
    for (AlignMode mode : {AlignMode::kRankGrpo, AlignMode::kGrpo}) {
      RunConfig c = sft.config;
      c.seed = static_cast<std::uint64_t>(seed);
      c.rl.steps = kRlSteps;
      c.rl.mode = mode;
      c.rl.scheme = mode == AlignMode::kRankGrpo ? RewardScheme::kExpDecay : RewardScheme::kSeqDcg;
      c.rl.gamma = kInfiniteGamma;
      c.validate();
      const auto t0 = Clock::now();
      TrainResult r = train_rl(c, sft.world, sft.params);
      secs[to_string(mode)] += seconds_since(t0);
      finals[to_string(mode)].push_back(r.log.value("val", "ndcg", n));
      runs.logs[{to_string(mode), seed}] = std::move(r.log);
      std::printf("  rl seed=%d %s val ndcg@%d=%.4f\n", seed, to_string(mode).c_str(), n,
                  finals[to_string(mode)].back());
      std::fflush(stdout);
    }
  }
  int above_sft = 0, beats_grpo = 0;
  for (int i = 0; i < kRlSeeds; ++i) {
    const auto u = static_cast<std::size_t>(i);
    above_sft += finals["rank_grpo"][u] > base;
    beats_grpo += finals["rank_grpo"][u] >= finals["grpo"][u];
  }
  o.require(above_sft >= kRlWinsRequired, "above SFT in " + std::to_string(above_sft) + "/5");
  o.require(beats_grpo >= kRlWinsRequired, ">= GRPO in " + std::to_string(beats_grpo) + "/5");
  for (const auto& [mode, s] : secs)
    o.require(s / kRlSeeds < kRlBudgetSeconds, mode + " runtime " + fmt("%.0fs", s / kRlSeeds));
  o.note("sft=" + fmt("%.4f", base) + " above_sft=" + std::to_string(above_sft) +
         "/5 >=grpo=" + std::to_string(beats_grpo) + "/5 " +
         fmt("%.0fs/run", secs["rank_grpo"] / kRlSeeds));
  return o;
}

// 8. Wrong-length rate falls over the default run.
Outcome penalty_behavior(const RlRuns& runs) {
  Outcome o;
  const auto it = runs.logs.find({"rank_grpo", 1});
  if (it == runs.logs.end()) {
    o.require(false, "default run missing");
    return o;
  }
  const std::vector<double> w = it->second.series("train", "wrong_length");
  const std::size_t tenth = std::max<std::size_t>(1, w.size() / 10);
  const double first = std::accumulate(w.begin(), w.begin() + static_cast<long>(tenth), 0.0) / tenth;
  const double last = std::accumulate(w.end() - static_cast<long>(tenth), w.end(), 0.0) / tenth;
  o.require(last < first, "first " + fmt("%.4f", first) + " last " + fmt("%.4f", last));
  o.note("wrong_length " + fmt("%.4f", first) + " -> " + fmt("%.4f", last));
  return o;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[e.path().filename().string()] = ss.str();
  }
  return out;
}

// 9. Re-running every command gives identical bytes.
Outcome determinism(const SftRun& sft) {
  Outcome o;
  RunConfig c;
  c.env.catalog_size = 120;
  c.env.num_contexts = 80;
  c.env.list_length = 8;
  c.env.gt_size_max = 4;
  c.policy.num_states = 8192;
  c.sft.steps = 40;
  c.rl.steps = 12;
  c.rl.mu = 2;
  c.rl.eval_every = 4;
  c.out = (fs::path(RANKALIGN_TEST_TMP) / "determinism").string();
  const std::vector<std::pair<std::string, std::function<void(const RunConfig&)>>> commands{
      {"gen-env", run_gen_env}, {"distill", run_distill}, {"sft", run_sft},
      {"rl", run_rl}, {"eval", run_eval}};
  std::vector<std::map<std::string, std::string>> states;
  for (int round = 0; round < 2; ++round) {
    fs::remove_all(c.out);
    for (const auto& [name, fn] : commands) fn(c);
    states.push_back(snapshot(c.out));
  }
  o.require(states[0] == states[1], "run directory differs between runs");
  o.note(std::to_string(states[0].size()) + " files identical");

  const SftRun again = default_sft();
  o.require(again.params == sft.params && again.log.rows() == sft.log.rows(),
            "default SFT differs");
  RunConfig rc = sft.config;
  rc.rl.steps = 50;
  const TrainResult a = train_rl(rc, sft.world, sft.params);
  const TrainResult b = train_rl(rc, sft.world, sft.params);
  o.require(a.params == b.params && a.log.rows() == b.log.rows(), "default RL differs");
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };
  std::optional<SftRun> sft;
  RlRuns runs;
  report(1, "gradient fidelity", gradient_fidelity);
  report(2, "reward identities", reward_identities);
  report(3, "on-policy equivalences", on_policy_equivalences);
  report(4, "non-causal credit witness", non_causal_witness);
  report(5, "distillation oracle", distillation_oracle);
  report(6, "sft warm start", [&] { return sft_warm_start(sft); });
  report(7, "rl improvement", [&] {
    if (!sft) throw std::runtime_error("no SFT checkpoint");
    return rl_improvement(*sft, runs);
  });
  report(8, "penalty behavior", [&] { return penalty_behavior(runs); });
  report(9, "determinism", [&] {
    if (!sft) throw std::runtime_error("no SFT checkpoint");
    return determinism(*sft);
  });
  std::printf("%d/9 criteria passed\n", 9 - failures);
  return failures == 0 ? 0 : 1;
}
