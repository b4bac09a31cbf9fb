#include "rankalign/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "rankalign/rng.hpp"

namespace rankalign {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

void check_tokens(std::span<const TokenId> tokens, int vocab_size) {
  for (TokenId t : tokens) {
    if (t < 0 || t >= vocab_size)
      throw std::out_of_range("token id " + std::to_string(t) +
                              " outside vocabulary of size " +
                              std::to_string(vocab_size));
  }
}

// Tracks (rank, position, prev) while walking a sequence.
struct Cursor {
  int rank = 0;
  int position = 0;
  TokenId prev = -1;

  void advance(TokenId token, TokenId delim) {
    if (token == delim) {
      ++rank;
      position = 0;
    } else {
      ++position;
    }
    prev = token;
  }
};

}  // namespace

PolicyParams::PolicyParams(int num_states, int vocab_size,
                           std::uint64_t hash_seed)
    : num_states_(num_states), vocab_size_(vocab_size), hash_seed_(hash_seed) {
  if (num_states <= 0 || vocab_size <= 1)
    throw std::invalid_argument("policy needs num_states > 0, vocab_size > 1");
  logits_.assign(static_cast<std::size_t>(num_states) *
                     static_cast<std::size_t>(vocab_size),
                 0.0);
}

std::size_t PolicyParams::state_index(ContextKey ctx, int rank, int position,
                                      TokenId prev) const {
  std::uint64_t h = mix64(hash_seed_ ^ 0x9e3779b97f4a7c15ULL);
  h = mix64(h ^ static_cast<std::uint64_t>(ctx.value));
  h = mix64(h ^ (static_cast<std::uint64_t>(static_cast<std::uint32_t>(rank)) |
                 (static_cast<std::uint64_t>(static_cast<std::uint32_t>(position))
                  << 32)));
  h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(prev)));
  return static_cast<std::size_t>(h % static_cast<std::uint64_t>(num_states_));
}

std::vector<std::size_t> sequence_states(const PolicyParams& params,
                                         ContextKey ctx,
                                         std::span<const TokenId> tokens,
                                         TokenId delim) {
  std::vector<std::size_t> states;
  states.reserve(tokens.size());
  Cursor cur;
  for (TokenId t : tokens) {
    states.push_back(params.state_index(ctx, cur.rank, cur.position, cur.prev));
    cur.advance(t, delim);
  }
  return states;
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double l : logits) z += std::exp(l - m);
  const double lse = m + std::log(z);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

namespace {

double token_logprob(std::span<const double> logits, TokenId token) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double l : logits) z += std::exp(l - m);
  const double lse = m + std::log(z);
  return logits[static_cast<std::size_t>(token)] - lse;
}

}  // namespace

TokenLogProbs logprob_sequence(const PolicyParams& params, ContextKey ctx,
                               std::span<const TokenId> tokens, TokenId delim) {
  check_tokens(tokens, params.vocab_size());
  TokenLogProbs out;
  out.reserve(tokens.size());
  Cursor cur;
  for (TokenId t : tokens) {
    const auto s = params.state_index(ctx, cur.rank, cur.position, cur.prev);
    out.push_back(token_logprob(params.row(s), t));
    cur.advance(t, delim);
  }
  return out;
}

namespace {

Rollout decode_one(const PolicyParams& params, ContextKey ctx,
                   const SamplingOptions& opt, TokenId delim, TokenId eos,
                   Rng* rng) {
  const auto v = static_cast<std::size_t>(params.vocab_size());
  std::vector<double> logp(v);
  std::vector<double> cdf(v);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Rollout r;
  Cursor cur;
  for (int step = 0; step < opt.max_tokens; ++step) {
    const auto s = params.state_index(ctx, cur.rank, cur.position, cur.prev);
    const auto row = params.row(s);
    log_softmax(row, logp);
    TokenId tok = 0;
    if (opt.greedy || rng == nullptr) {
      tok = static_cast<TokenId>(std::max_element(logp.begin(), logp.end()) -
                                 logp.begin());
    } else {
      const double inv_t = 1.0 / opt.temperature;
      const double m = *std::max_element(row.begin(), row.end());
      double acc = 0;
      for (std::size_t i = 0; i < v; ++i) {
        acc += std::exp((row[i] - m) * inv_t);
        cdf[i] = acc;
      }
      const double u = unif(*rng) * acc;
      tok = static_cast<TokenId>(std::upper_bound(cdf.begin(), cdf.end(), u) -
                                 cdf.begin());
      if (tok >= static_cast<TokenId>(v)) tok = static_cast<TokenId>(v) - 1;
    }
    r.tokens.push_back(tok);
    r.logprobs.push_back(logp[static_cast<std::size_t>(tok)]);
    if (tok == eos) break;
    cur.advance(tok, delim);
  }
  return r;
}

}  // namespace

std::vector<Rollout> sample_rollouts(const PolicySnapshot& policy,
                                     ContextKey ctx, int group_size,
                                     const SamplingOptions& options,
                                     TokenId delim, TokenId eos,
                                     std::uint64_t seed) {
  if (group_size < 2)
    throw std::invalid_argument("sample_rollouts: group size must be >= 2");
  if (!(options.temperature > 0.0))
    throw std::invalid_argument("sample_rollouts: temperature must be > 0");
  if (options.max_tokens <= 0)
    throw std::invalid_argument("sample_rollouts: max_tokens must be > 0");
  Rng rng = make_rng(seed, "policy/sample",
                     static_cast<std::uint64_t>(ctx.value));
  std::vector<Rollout> out;
  out.reserve(static_cast<std::size_t>(group_size));
  for (int g = 0; g < group_size; ++g)
    out.push_back(decode_one(policy.params(), ctx, options, delim, eos, &rng));
  return out;
}

Rollout greedy_decode(const PolicyParams& params, ContextKey ctx,
                      int max_tokens, TokenId delim, TokenId eos) {
  SamplingOptions opt;
  opt.max_tokens = max_tokens;
  opt.greedy = true;
  return decode_one(params, ctx, opt, delim, eos, nullptr);
}

std::span<double> Gradient::row(std::size_t state) {
  auto [it, inserted] = slot_.try_emplace(state, states_.size());
  if (inserted) {
    states_.push_back(state);
    values_.resize(values_.size() + static_cast<std::size_t>(vocab_size_), 0.0);
  }
  return {values_.data() + it->second * static_cast<std::size_t>(vocab_size_),
          static_cast<std::size_t>(vocab_size_)};
}

double Gradient::at(std::size_t state, TokenId token) const {
  auto it = slot_.find(state);
  if (it == slot_.end()) return 0.0;
  return values_[it->second * static_cast<std::size_t>(vocab_size_) +
                 static_cast<std::size_t>(token)];
}

void Gradient::add_scaled(const Gradient& other, double scale) {
  if (other.vocab_size_ != vocab_size_ || other.num_states_ != num_states_)
    throw std::invalid_argument("gradient shape mismatch");
  for (std::size_t slot = 0; slot < other.states_.size(); ++slot) {
    auto dst = row(other.states_[slot]);
    auto src = other.row_at_slot(slot);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  }
}

void Gradient::scale(double factor) {
  for (double& x : values_) x *= factor;
}

double Gradient::squared_norm() const {
  double s = 0;
  for (double x : values_) s += x * x;
  return s;
}

std::vector<double> Gradient::to_dense() const {
  std::vector<double> dense(static_cast<std::size_t>(num_states_) *
                                static_cast<std::size_t>(vocab_size_),
                            0.0);
  for (std::size_t slot = 0; slot < states_.size(); ++slot) {
    auto src = row_at_slot(slot);
    std::copy(src.begin(), src.end(),
              dense.begin() + static_cast<std::ptrdiff_t>(
                                  states_[slot] *
                                  static_cast<std::size_t>(vocab_size_)));
  }
  return dense;
}

void Gradient::apply_to(PolicyParams& params, double step) const {
  if (params.vocab_size() != vocab_size_ || params.num_states() != num_states_)
    throw std::invalid_argument("gradient shape mismatch");
  for (std::size_t slot = 0; slot < states_.size(); ++slot) {
    auto dst = params.row(states_[slot]);
    auto src = row_at_slot(slot);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += step * src[i];
  }
}

void accumulate_grad_logprob(const PolicyParams& params, ContextKey ctx,
                             std::span<const TokenId> tokens,
                             std::span<const double> weights, TokenId delim,
                             Gradient& out) {
  if (weights.size() != tokens.size())
    throw std::invalid_argument("grad_logprob: weights/tokens length mismatch");
  check_tokens(tokens, params.vocab_size());
  std::vector<double> logp(static_cast<std::size_t>(params.vocab_size()));
  Cursor cur;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const double w = weights[t];
    const auto s = params.state_index(ctx, cur.rank, cur.position, cur.prev);
    cur.advance(tokens[t], delim);
    if (w == 0.0) continue;
    log_softmax(params.row(s), logp);
    auto g = out.row(s);
    // d log softmax(z)[y] / dz_j = 1[j = y] - softmax(z)_j
    for (std::size_t j = 0; j < g.size(); ++j) g[j] -= w * std::exp(logp[j]);
    g[static_cast<std::size_t>(tokens[t])] += w;
  }
}

Gradient grad_logprob(const PolicyParams& params, ContextKey ctx,
                      std::span<const TokenId> tokens,
                      std::span<const double> weights, TokenId delim) {
  Gradient g(params.num_states(), params.vocab_size());
  accumulate_grad_logprob(params, ctx, tokens, weights, delim, g);
  return g;
}

double sft_loss(const PolicyParams& params,
                std::span<const Demonstration> dataset, TokenId delim) {
  if (dataset.empty()) throw std::invalid_argument("sft_loss: empty dataset");
  double total = 0;
  for (const Demonstration& d : dataset) {
    for (double lp : logprob_sequence(params, d.ctx, d.tokens, delim))
      total -= lp;
  }
  return total / static_cast<double>(dataset.size());
}

LossAndGrad sft_loss_and_grad(const PolicyParams& params,
                              std::span<const Demonstration> dataset,
                              TokenId delim) {
  if (dataset.empty())
    throw std::invalid_argument("sft_loss_and_grad: empty dataset");
  LossAndGrad out{0.0, Gradient(params.num_states(), params.vocab_size())};
  const double inv_n = 1.0 / static_cast<double>(dataset.size());
  std::vector<double> weights;
  for (const Demonstration& d : dataset) {
    for (double lp : logprob_sequence(params, d.ctx, d.tokens, delim))
      out.loss -= lp;
    weights.assign(d.tokens.size(), -inv_n);
    accumulate_grad_logprob(params, d.ctx, d.tokens, weights, delim, out.grad);
  }
  out.loss *= inv_n;
  return out;
}

void save_checkpoint(const PolicyParams& params,
                     const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint format is little-endian");
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(params.logits().data()),
              static_cast<std::streamsize>(params.logits().size() *
                                           sizeof(double)));
  }
  std::ofstream side(path.string() + ".json");
  if (!side) throw std::runtime_error("cannot write sidecar for " + path.string());
  side << nlohmann::json{{"S", params.num_states()},
                         {"V", params.vocab_size()},
                         {"hash_seed", params.hash_seed()}}
              .dump()
       << '\n';
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream side(path.string() + ".json");
  if (!side) throw std::runtime_error("missing sidecar for " + path.string());
  nlohmann::json meta;
  side >> meta;
  PolicyParams params(meta.at("S").get<int>(), meta.at("V").get<int>(),
                      meta.at("hash_seed").get<std::uint64_t>());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  auto& data = params.logits();
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (in.gcount() !=
      static_cast<std::streamsize>(data.size() * sizeof(double)))
    throw std::runtime_error("truncated checkpoint " + path.string());
  if (in.peek() != std::char_traits<char>::eof())
    throw std::runtime_error("checkpoint larger than S*V: " + path.string());
  return params;
}

}  // namespace rankalign
