#include "rankalign/align.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rankalign {

std::string to_string(AlignMode mode) {
  switch (mode) {
    case AlignMode::kGrpo: return "grpo";
    case AlignMode::kGspo: return "gspo";
    case AlignMode::kRankGrpo: return "rank_grpo";
  }
  return "grpo";
}

AlignMode align_mode_from_string(const std::string& s) {
  if (s == "grpo") return AlignMode::kGrpo;
  if (s == "gspo") return AlignMode::kGspo;
  if (s == "rank_grpo") return AlignMode::kRankGrpo;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

void check_mode_scheme(AlignMode mode, RewardScheme scheme) {
  const bool seq = scheme == RewardScheme::kSeqDcg;
  if (mode == AlignMode::kRankGrpo && seq)
    throw std::invalid_argument(
        "rank_grpo requires reward scheme causal_dcg or exp_decay");
  if (mode != AlignMode::kRankGrpo && !seq)
    throw std::invalid_argument(to_string(mode) +
                                " requires reward scheme seq_dcg");
}

ClipConfig ClipConfig::defaults(AlignMode mode) {
  switch (mode) {
    case AlignMode::kGrpo: return {mode, 0.2, 0.26, 0.001};
    case AlignMode::kGspo: return {mode, 3e-4, 4e-4, 0.001};
    case AlignMode::kRankGrpo: return {mode, 0.06, 0.08, 0.001};
  }
  return {};
}

void ClipConfig::validate() const {
  if (!(eps_low > 0 && eps_low <= eps_high))
    throw std::invalid_argument("clip: need 0 < eps_low <= eps_high");
  if (kl_coeff < 0) throw std::invalid_argument("clip: kl_coeff must be >= 0");
}

namespace {

// Standardizes `values` in place; zero-spread members become exactly 0.
void standardize(std::span<double> values) {
  const auto n = static_cast<double>(values.size());
  double mean = 0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : values) {
    const double centered = v - mean;
    v = std::abs(centered) < 1e-12 ? 0.0 : centered / (sd + kStdDelta);
  }
}

double clip_value(double w, const ClipConfig& clip) {
  return std::clamp(w, 1.0 - clip.eps_low, 1.0 + clip.eps_high);
}

// min(w*A, clip(w)*A) and whether the clipped constant wins.
std::pair<double, bool> clipped_term(double w, double adv,
                                     const ClipConfig& clip) {
  const double unclipped = w * adv;
  const double clipped = clip_value(w, clip) * adv;
  if (clipped < unclipped) return {clipped, true};
  return {unclipped, false};
}

void check_aligned(std::span<const double> a, std::span<const double> b,
                   const char* what) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": length mismatch");
}

}  // namespace

std::vector<double> seq_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2)
    throw std::invalid_argument("seq_advantages: group size must be >= 2");
  std::vector<double> adv(rewards.begin(), rewards.end());
  standardize(adv);
  return adv;
}

std::vector<std::vector<double>> rank_advantages(
    const std::vector<std::vector<double>>& returns,
    const std::vector<std::vector<bool>>& mask, int n, double eps_over) {
  if (returns.size() != mask.size())
    throw std::invalid_argument("rank_advantages: mask shape mismatch");
  std::vector<std::vector<double>> adv(returns.size());
  for (std::size_t i = 0; i < returns.size(); ++i) {
    if (returns[i].size() != mask[i].size())
      throw std::invalid_argument("rank_advantages: mask shape mismatch");
    if (static_cast<int>(returns[i].size()) < n)
      throw std::invalid_argument("rank_advantages: row shorter than N");
    adv[i].assign(returns[i].size(), 0.0);
    for (std::size_t k = static_cast<std::size_t>(n); k < returns[i].size(); ++k)
      adv[i][k] = eps_over;
  }
  std::vector<double> column;
  for (int k = 0; k < n; ++k) {
    column.clear();
    for (std::size_t i = 0; i < returns.size(); ++i)
      if (mask[i][static_cast<std::size_t>(k)])
        column.push_back(returns[i][static_cast<std::size_t>(k)]);
    if (column.empty())
      throw std::invalid_argument("rank_advantages: empty column at rank " +
                                  std::to_string(k + 1));
    standardize(column);
    std::size_t c = 0;
    for (std::size_t i = 0; i < returns.size(); ++i)
      if (mask[i][static_cast<std::size_t>(k)])
        adv[i][static_cast<std::size_t>(k)] = column[c++];
  }
  return adv;
}

std::vector<double> token_ratio(std::span<const double> new_lp,
                                std::span<const double> old_lp) {
  check_aligned(new_lp, old_lp, "token_ratio");
  std::vector<double> out(new_lp.size());
  for (std::size_t t = 0; t < new_lp.size(); ++t)
    out[t] = std::exp(new_lp[t] - old_lp[t]);
  return out;
}

std::vector<double> rank_ratio(std::span<const double> new_lp,
                               std::span<const double> old_lp,
                               std::span<const RankSpan> spans) {
  check_aligned(new_lp, old_lp, "rank_ratio");
  std::vector<double> out;
  out.reserve(spans.size());
  for (const RankSpan& s : spans) {
    if (s.length() == 0) throw std::invalid_argument("rank_ratio: empty span");
    if (s.end > new_lp.size())
      throw std::invalid_argument("rank_ratio: span outside sequence");
    double d = 0;
    for (std::size_t t = s.begin; t < s.end; ++t) d += new_lp[t] - old_lp[t];
    out.push_back(std::exp(d / static_cast<double>(s.length())));
  }
  return out;
}

double seq_ratio(std::span<const double> new_lp,
                 std::span<const double> old_lp) {
  check_aligned(new_lp, old_lp, "seq_ratio");
  if (new_lp.empty()) return 1.0;
  double d = 0;
  for (std::size_t t = 0; t < new_lp.size(); ++t) d += new_lp[t] - old_lp[t];
  return std::exp(d / static_cast<double>(new_lp.size()));
}

namespace {

double k3(double new_lp, double ref_lp) {
  const double d = ref_lp - new_lp;
  return std::exp(d) - d - 1.0;
}

// d k3 / d new_lp
double k3_grad(double new_lp, double ref_lp) {
  return 1.0 - std::exp(ref_lp - new_lp);
}

}  // namespace

double kl_penalty(std::span<const double> new_lp, std::span<const double> ref_lp,
                  KlGranularity granularity, std::span<const RankSpan> spans) {
  check_aligned(new_lp, ref_lp, "kl_penalty");
  if (new_lp.empty()) return 0.0;
  if (granularity == KlGranularity::kToken) {
    double s = 0;
    for (std::size_t t = 0; t < new_lp.size(); ++t) s += k3(new_lp[t], ref_lp[t]);
    return s / static_cast<double>(new_lp.size());
  }
  if (spans.empty())
    throw std::invalid_argument("kl_penalty: rank granularity needs spans");
  double s = 0;
  for (const RankSpan& sp : spans) {
    if (sp.length() == 0) throw std::invalid_argument("kl_penalty: empty span");
    double u = 0;
    for (std::size_t t = sp.begin; t < sp.end; ++t) u += k3(new_lp[t], ref_lp[t]);
    s += u / static_cast<double>(sp.length());
  }
  return s / static_cast<double>(spans.size());
}

RolloutRecord make_record(const Rollout& rollout, const Catalog& catalog,
                          std::span<const ItemId> gt, int n,
                          const RewardShaping& shaping, double eps_over,
                          double eps_under) {
  RolloutRecord rec;
  rec.tokens = rollout.tokens;
  Segmentation seg = segment_generation(rec.tokens, catalog);
  rec.parsed = std::move(seg.list);
  rec.spans = std::move(seg.spans);
  rec.old_logprobs = rollout.logprobs;
  rec.rel = relevance(rec.parsed, gt);
  rec.returns = apply_penalties(compute_returns(rec.rel, n, shaping), rec.parsed,
                                n, eps_over, eps_under);
  return rec;
}

namespace {

void check_group(const RolloutGroup& group, const ClipConfig& clip) {
  clip.validate();
  if (group.size() < 2)
    throw std::invalid_argument("surrogate: group size must be >= 2");
  if (group.list_length <= 0)
    throw std::invalid_argument("surrogate: list length must be positive");
  for (const RolloutRecord& r : group.rollouts) {
    check_mode_scheme(clip.mode, r.returns.scheme);
    if (r.new_logprobs.size() != r.tokens.size() ||
        r.old_logprobs.size() != r.tokens.size())
      throw std::invalid_argument("surrogate: log-probs not aligned to tokens");
    if (clip.kl_coeff > 0 && r.ref_logprobs.size() != r.tokens.size())
      throw std::invalid_argument("surrogate: reference log-probs missing");
  }
}

bool use_kl(const ClipConfig& clip, const RolloutRecord& r) {
  return clip.kl_coeff > 0 && r.ref_logprobs.size() == r.tokens.size();
}

// Token-granularity KL term shared by GRPO and GSPO.
void add_token_kl(const RolloutGroup& group, const ClipConfig& clip,
                  SurrogateWeights& out) {
  const double g = static_cast<double>(group.size());
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const RolloutRecord& r = group.rollouts[i];
    if (!use_kl(clip, r) || r.tokens.empty()) continue;
    const double c = 1.0 / (g * static_cast<double>(r.tokens.size()));
    const double kl = kl_penalty(r.new_logprobs, r.ref_logprobs,
                                 KlGranularity::kToken);
    out.kl += kl / g;
    for (std::size_t t = 0; t < r.tokens.size(); ++t)
      out.token_weights[i][t] -=
          clip.kl_coeff * c * k3_grad(r.new_logprobs[t], r.ref_logprobs[t]);
  }
  out.objective -= clip.kl_coeff * out.kl;
}

std::vector<double> sequence_rewards(const RolloutGroup& group) {
  std::vector<double> rewards;
  rewards.reserve(group.rollouts.size());
  for (const RolloutRecord& r : group.rollouts)
    rewards.push_back(r.returns.sequence_reward);
  return rewards;
}

}  // namespace

SurrogateWeights grpo_weights(const RolloutGroup& group, const ClipConfig& clip) {
  if (clip.mode != AlignMode::kGrpo)
    throw std::invalid_argument("grpo_weights: clip config is not grpo");
  check_group(group, clip);
  const auto adv = seq_advantages(sequence_rewards(group));
  const double g = static_cast<double>(group.size());
  SurrogateWeights out;
  out.token_weights.resize(group.rollouts.size());
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const RolloutRecord& r = group.rollouts[i];
    out.token_weights[i].assign(r.tokens.size(), 0.0);
    if (r.tokens.empty()) continue;
    const double c = 1.0 / (g * static_cast<double>(r.tokens.size()));
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      const double w = std::exp(r.new_logprobs[t] - r.old_logprobs[t]);
      const auto [term, clipped] = clipped_term(w, adv[i], clip);
      out.objective += c * term;
      ++out.total_units;
      if (clipped) {
        ++out.clipped_units;
      } else {
        out.token_weights[i][t] = c * w * adv[i];
      }
    }
  }
  add_token_kl(group, clip, out);
  return out;
}

SurrogateWeights gspo_weights(const RolloutGroup& group, const ClipConfig& clip) {
  if (clip.mode != AlignMode::kGspo)
    throw std::invalid_argument("gspo_weights: clip config is not gspo");
  check_group(group, clip);
  const auto adv = seq_advantages(sequence_rewards(group));
  const double g = static_cast<double>(group.size());
  SurrogateWeights out;
  out.token_weights.resize(group.rollouts.size());
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const RolloutRecord& r = group.rollouts[i];
    out.token_weights[i].assign(r.tokens.size(), 0.0);
    if (r.tokens.empty()) continue;
    const double s = seq_ratio(r.new_logprobs, r.old_logprobs);
    const auto [term, clipped] = clipped_term(s, adv[i], clip);
    out.objective += term / g;
    ++out.total_units;
    if (clipped) {
      ++out.clipped_units;
      continue;
    }
    const double wt = s * adv[i] / (g * static_cast<double>(r.tokens.size()));
    std::fill(out.token_weights[i].begin(), out.token_weights[i].end(), wt);
  }
  add_token_kl(group, clip, out);
  return out;
}

SurrogateWeights rank_grpo_weights(const RolloutGroup& group,
                                   const ClipConfig& clip) {
  if (clip.mode != AlignMode::kRankGrpo)
    throw std::invalid_argument("rank_grpo_weights: clip config is not rank_grpo");
  check_group(group, clip);
  const int n = group.list_length;

  // Phantom ranks keep their zero return in the column statistics.
  std::vector<std::vector<double>> returns;
  std::vector<std::vector<bool>> mask;
  for (const RolloutRecord& r : group.rollouts) {
    if (r.returns.list_length != n || r.spans.size() != r.rel.size())
      throw std::invalid_argument("rank_grpo: returns do not match the group");
    returns.push_back(r.returns.returns);
    mask.emplace_back(r.returns.returns.size(), true);
  }
  const auto adv = rank_advantages(returns, mask, n, group.eps_over);

  const double g = static_cast<double>(group.size());
  const double c = 1.0 / (g * static_cast<double>(n));
  SurrogateWeights out;
  out.token_weights.resize(group.rollouts.size());
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const RolloutRecord& r = group.rollouts[i];
    out.token_weights[i].assign(r.tokens.size(), 0.0);
    const auto ratios = rank_ratio(r.new_logprobs, r.old_logprobs, r.spans);
    for (std::size_t k = 0; k < r.spans.size(); ++k) {
      const RankSpan& sp = r.spans[k];
      const double a = adv[i][k];
      const auto [term, clipped] = clipped_term(ratios[k], a, clip);
      out.objective += c * term;
      ++out.total_units;
      if (clipped) {
        ++out.clipped_units;
        continue;
      }
      const double wt = c * ratios[k] * a / static_cast<double>(sp.length());
      for (std::size_t t = sp.begin; t < sp.end; ++t) out.token_weights[i][t] = wt;
    }

    if (use_kl(clip, r) && !r.spans.empty()) {
      const double kl = kl_penalty(r.new_logprobs, r.ref_logprobs,
                                   KlGranularity::kRank, r.spans);
      out.kl += kl / g;
      const double units = static_cast<double>(r.spans.size());
      for (const RankSpan& sp : r.spans) {
        const double kc = 1.0 / (g * units * static_cast<double>(sp.length()));
        for (std::size_t t = sp.begin; t < sp.end; ++t)
          out.token_weights[i][t] -=
              clip.kl_coeff * kc * k3_grad(r.new_logprobs[t], r.ref_logprobs[t]);
      }
    }
  }
  out.objective -= clip.kl_coeff * out.kl;
  return out;
}

SurrogateWeights surrogate_weights(const RolloutGroup& group,
                                   const ClipConfig& clip) {
  switch (clip.mode) {
    case AlignMode::kGrpo: return grpo_weights(group, clip);
    case AlignMode::kGspo: return gspo_weights(group, clip);
    case AlignMode::kRankGrpo: return rank_grpo_weights(group, clip);
  }
  throw std::invalid_argument("unknown mode");
}

namespace {

SurrogateResult assemble(const RolloutGroup& group, SurrogateWeights weights,
                         const PolicyParams& params, TokenId delim) {
  SurrogateResult res{weights.objective, weights.kl,
                      Gradient(params.num_states(), params.vocab_size()),
                      weights.clipped_units, weights.total_units};
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    accumulate_grad_logprob(params, group.ctx, group.rollouts[i].tokens,
                            weights.token_weights[i], delim, res.grad);
  }
  return res;
}

}  // namespace

SurrogateResult grpo_surrogate(const RolloutGroup& group, const ClipConfig& clip,
                               const PolicyParams& params, TokenId delim) {
  return assemble(group, grpo_weights(group, clip), params, delim);
}

SurrogateResult gspo_surrogate(const RolloutGroup& group, const ClipConfig& clip,
                               const PolicyParams& params, TokenId delim) {
  return assemble(group, gspo_weights(group, clip), params, delim);
}

SurrogateResult rank_grpo_surrogate(const RolloutGroup& group,
                                    const ClipConfig& clip,
                                    const PolicyParams& params, TokenId delim) {
  return assemble(group, rank_grpo_weights(group, clip), params, delim);
}

SurrogateResult surrogate(const RolloutGroup& group, const ClipConfig& clip,
                          const PolicyParams& params, TokenId delim) {
  return assemble(group, surrogate_weights(group, clip), params, delim);
}

double LearningRateSchedule::at(int step) const {
  double lr = base;
  for (int m : halving_milestones)
    if (step >= m) lr *= 0.5;
  return lr;
}

PolicyOptimizer::PolicyOptimizer(PolicyParams init,
                                 std::optional<PolicySnapshot> reference,
                                 ClipConfig clip, int mu,
                                 LearningRateSchedule schedule, TokenId delim,
                                 GroupSampler sampler)
    : params_(std::move(init)),
      reference_(std::move(reference)),
      clip_(clip),
      mu_(mu),
      schedule_(std::move(schedule)),
      delim_(delim),
      sampler_(std::move(sampler)) {
  if (mu_ < 1) throw std::invalid_argument("mu must be >= 1");
  clip_.validate();
  if (!sampler_) throw std::invalid_argument("optimizer needs a sampler");
}

void PolicyOptimizer::refresh_logprobs() {
  for (RolloutGroup& g : batch_) {
    for (RolloutRecord& r : g.rollouts)
      r.new_logprobs = logprob_sequence(params_, g.ctx, r.tokens, delim_);
  }
}

UpdateStats PolicyOptimizer::update_step() {
  UpdateStats stats;
  stats.step = steps_;
  if (steps_ % mu_ == 0) {
    batch_ = sampler_(PolicySnapshot::view(params_), sample_rounds_++);
    if (batch_.empty()) throw std::runtime_error("sampler returned no groups");
    for (RolloutGroup& g : batch_) {
      for (RolloutRecord& r : g.rollouts) {
        if (reference_ && clip_.kl_coeff > 0)
          r.ref_logprobs =
              logprob_sequence(reference_->params(), g.ctx, r.tokens, delim_);
      }
    }
    stats.resampled = true;
  }
  refresh_logprobs();

  Gradient total(params_.num_states(), params_.vocab_size());
  const double inv_b = 1.0 / static_cast<double>(batch_.size());
  int clipped = 0;
  int units = 0;
  for (const RolloutGroup& g : batch_) {
    SurrogateResult res = surrogate(g, clip_, params_, delim_);
    stats.objective += inv_b * res.objective;
    stats.kl += inv_b * res.kl;
    clipped += res.clipped_units;
    units += res.total_units;
    total.add_scaled(res.grad, inv_b);
    for (const RolloutRecord& r : g.rollouts)
      for (std::size_t t = 0; t < r.tokens.size(); ++t)
        stats.max_abs_log_ratio =
            std::max(stats.max_abs_log_ratio,
                     std::abs(r.new_logprobs[t] - r.old_logprobs[t]));
  }
  stats.clip_fraction =
      units > 0 ? static_cast<double>(clipped) / static_cast<double>(units) : 0;
  stats.lr = schedule_.at(steps_);
  total.apply_to(params_, stats.lr);
  ++steps_;
  return stats;
}

}  // namespace rankalign
