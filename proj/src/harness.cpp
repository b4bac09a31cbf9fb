#include "rankalign/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "rankalign/rng.hpp"

namespace rankalign {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') &&
      s.back() == s.front())
    return s.substr(1, s.size() - 2);
  return s;
}

template <class Int>
void parse_int(const std::string& text, Int& out) {
  const std::string t = unquote(text);
  const char* end = t.data() + t.size();
  auto [p, ec] = std::from_chars(t.data(), end, out);
  if (ec != std::errc() || p != end || t.empty())
    throw ConfigError("not an integer: '" + text + "'");
}

void parse_value(const std::string& text, int& out) { parse_int(text, out); }
void parse_value(const std::string& text, std::uint64_t& out) {
  parse_int(text, out);
}

void parse_value(const std::string& text, double& out) {
  const std::string t = unquote(text);
  if (t == "auto") {
    out = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  if (t == "inf" || t == "+inf") {
    out = kInfiniteGamma;
    return;
  }
  const char* end = t.data() + t.size();
  auto [p, ec] = std::from_chars(t.data(), end, out);
  if (ec != std::errc() || p != end || t.empty())
    throw ConfigError("not a number: '" + text + "'");
}

void parse_value(const std::string& text, std::string& out) {
  out = unquote(text);
}

void parse_value(const std::string& text, std::vector<int>& out) {
  std::string t = trim(text);
  if (t.size() < 2 || t.front() != '[' || t.back() != ']')
    throw ConfigError("expected a list like [1, 2]: '" + text + "'");
  out.clear();
  std::stringstream ss(t.substr(1, t.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    int v = 0;
    parse_int(item, v);
    out.push_back(v);
  }
}

template <class Enum, class Fn>
void parse_enum(const std::string& text, Enum& out, Fn from_string) {
  try {
    out = from_string(unquote(text));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void parse_value(const std::string& text, AlignMode& out) {
  parse_enum(text, out, align_mode_from_string);
}
void parse_value(const std::string& text, RewardScheme& out) {
  parse_enum(text, out, reward_scheme_from_string);
}
void parse_value(const std::string& text, Split& out) {
  parse_enum(text, out, split_from_string);
}
void parse_value(const std::string& text, ContextFeature& out) {
  const std::string t = unquote(text);
  if (t == "cluster") out = ContextFeature::kCluster;
  else if (t == "id") out = ContextFeature::kId;
  else throw ConfigError("context_feature must be cluster or id: '" + t + "'");
}

std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }

std::string format_double(double v) {
  if (std::isnan(v)) return "auto";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string format_value(double v) {
  const std::string s = format_double(v);
  return (s == "auto" || s == "inf" || s == "-inf") ? "\"" + s + "\"" : s;
}

std::string format_value(const std::string& v) { return "\"" + v + "\""; }
std::string format_value(const std::vector<int>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i)
    s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}
std::string format_value(AlignMode v) { return format_value(to_string(v)); }
std::string format_value(RewardScheme v) { return format_value(to_string(v)); }
std::string format_value(Split v) { return format_value(to_string(v)); }
std::string format_value(ContextFeature v) {
  return format_value(std::string(v == ContextFeature::kId ? "id" : "cluster"));
}

template <class F>
void for_each_field(RunConfig& c, F&& f) {
  f("seed", c.seed);
  f("out", c.out);

  EnvConfig& e = c.env;
  f("env.catalog_size", e.catalog_size);
  f("env.num_contexts", e.num_contexts);
  f("env.num_clusters", e.num_clusters);
  f("env.pool_size", e.pool_size);
  f("env.zipf_exponent", e.zipf_exponent);
  f("env.gt_size_min", e.gt_size_min);
  f("env.gt_size_max", e.gt_size_max);
  f("env.list_length", e.list_length);
  f("env.seed", e.seed);
  f("env.title_length_min", e.title_length_min);
  f("env.title_length_max", e.title_length_max);
  f("env.title_alphabet", e.title_alphabet);
  f("env.val_fraction", e.val_fraction);
  f("env.test_fraction", e.test_fraction);

  PolicyConfig& p = c.policy;
  f("policy.num_states", p.num_states);
  f("policy.hash_seed", p.hash_seed);
  f("policy.context_feature", p.context_feature);
  f("policy.max_tokens", p.max_tokens);

  DistillConfig& d = c.distill;
  f("distill.lambda", d.lambda);
  f("distill.teacher_length", d.teacher_length);
  f("distill.reflect_candidates", d.reflect.num_candidates);
  f("distill.reflect_gamma", d.reflect.gamma);
  f("distill.judge_scale", d.reflect.scale);
  f("distill.adjust_lambda_w", d.adjust.lambda_w);
  f("distill.adjust_lambda_b", d.adjust.lambda_b);
  f("distill.adjust_steps", d.adjust.steps);
  f("distill.adjust_lr", d.adjust.lr);
  f("distill.mock_seed", d.mocks.seed);
  f("distill.mock_embedding_dim", d.mocks.embedding_dim);
  f("distill.mock_similarity_threshold", d.mocks.similarity_threshold);
  f("distill.mock_similarity_scale", d.mocks.similarity_scale);
  f("distill.mock_twin_noise", d.mocks.twin_noise);
  f("distill.mock_conv_scale", d.mocks.conv_scale);
  f("distill.mock_conv_noise", d.mocks.conv_noise);
  f("distill.mock_teacher_noise", d.mocks.teacher_noise);
  f("distill.mock_teacher_ooc_rate", d.mocks.teacher_ooc_rate);
  f("distill.mock_biased_fraction", d.mocks.biased_fraction);
  f("distill.mock_bias_strength", d.mocks.bias_strength);

  SftConfig& s = c.sft;
  f("sft.steps", s.steps);
  f("sft.batch_size", s.batch_size);
  f("sft.lr", s.lr);
  f("sft.lr_milestones", s.lr_milestones);
  f("sft.eval_every", s.eval_every);
  f("sft.dataset", s.dataset);

  RlConfig& r = c.rl;
  f("rl.mode", r.mode);
  f("rl.scheme", r.scheme);
  f("rl.gamma", r.gamma);
  f("rl.group_size", r.group_size);
  f("rl.mu", r.mu);
  f("rl.steps", r.steps);
  f("rl.batch_contexts", r.batch_contexts);
  f("rl.lr", r.lr);
  f("rl.lr_milestones", r.lr_milestones);
  f("rl.eps_low", r.eps_low);
  f("rl.eps_high", r.eps_high);
  f("rl.kl_coeff", r.kl_coeff);
  f("rl.eps_over", r.eps_over);
  f("rl.eps_under", r.eps_under);
  f("rl.temperature", r.temperature);
  f("rl.eval_every", r.eval_every);
  f("rl.init", r.init);

  EvalConfig& v = c.eval;
  f("eval.ks", v.ks);
  f("eval.split", v.split);
  f("eval.checkpoint", v.checkpoint);
  f("eval.tasks", v.tasks);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

ClipConfig RlConfig::clip() const {
  ClipConfig c = ClipConfig::defaults(mode);
  if (!std::isnan(eps_low)) c.eps_low = eps_low;
  if (!std::isnan(eps_high)) c.eps_high = eps_high;
  c.kl_coeff = kl_coeff;
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  bool found = false;
  for_each_field(*this, [&](const char* name, auto& field) {
    if (found || key != name) return;
    found = true;
    parse_value(trim(value), field);
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']' &&
        line.find('=') == std::string::npos) {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    try {
      cfg.set(section.empty() ? key : section + "." + key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

std::string RunConfig::to_text() const {
  RunConfig copy = *this;
  std::string out, section;
  for_each_field(copy, [&](const char* name, auto& field) {
    const std::string full = name;
    const auto dot = full.find('.');
    const std::string sec = dot == std::string::npos ? "" : full.substr(0, dot);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += full.substr(dot == std::string::npos ? 0 : dot + 1) + " = " +
           format_value(field) + "\n";
  });
  return out;
}

void RunConfig::validate() const {
  try {
    env.validate();
    check_mode_scheme(rl.mode, rl.scheme);
    rl.clip().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(policy.num_states >= 1, "policy.num_states must be >= 1");
  require(policy.max_tokens >= 0, "policy.max_tokens must be >= 0");
  require(distill.reflect.num_candidates > env.list_length,
          "distill.reflect_candidates must exceed env.list_length");
  require(distill.reflect.gamma > 0, "distill.reflect_gamma must be > 0");
  require(distill.reflect.scale >= 1, "distill.judge_scale must be >= 1");
  require(distill.adjust.steps >= 0 && distill.adjust.lr > 0,
          "distill.adjust_steps >= 0 and distill.adjust_lr > 0 required");
  require(distill.teacher_length >= 0, "distill.teacher_length must be >= 0");
  require(sft.steps >= 0, "sft.steps must be >= 0");
  require(sft.batch_size >= 1, "sft.batch_size must be >= 1");
  require(sft.lr > 0, "sft.lr must be > 0");
  require(sft.eval_every >= 1, "sft.eval_every must be >= 1");
  if (rl.scheme == RewardScheme::kExpDecay)
    require(rl.gamma > 1, "rl.gamma must be > 1");
  require(rl.group_size >= 2, "rl.group_size must be >= 2");
  require(rl.mu >= 1, "rl.mu must be >= 1");
  require(rl.steps >= 0, "rl.steps must be >= 0");
  require(rl.batch_contexts >= 1, "rl.batch_contexts must be >= 1");
  require(rl.lr > 0, "rl.lr must be > 0");
  require(rl.eps_over <= 0 && rl.eps_under <= 0,
          "rl.eps_over and rl.eps_under must be <= 0");
  require(rl.temperature > 0, "rl.temperature must be > 0");
  require(rl.eval_every >= 1, "rl.eval_every must be >= 1");
  require(!eval.ks.empty(), "eval.ks must not be empty");
  for (int k : eval.ks) require(k >= 1, "eval.ks entries must be >= 1");
}

int RunConfig::max_tokens() const {
  if (policy.max_tokens > 0) return policy.max_tokens;
  return (env.list_length + 4) * (env.title_length_max + 1);
}

ContextKey RunConfig::context_key(int context_id) const {
  if (policy.context_feature == ContextFeature::kId) return {context_id};
  return {context_cluster(context_id, env.num_clusters)};
}

void MetricLog::add(int step, const std::string& split,
                    const std::string& metric, int k, double value) {
  rows_.push_back({step, split, metric, k, value});
}

void MetricLog::append(const std::vector<MetricRow>& rows) {
  rows_.insert(rows_.end(), rows.begin(), rows.end());
}

double MetricLog::value(const std::string& split, const std::string& metric,
                        int k) const {
  for (auto it = rows_.rbegin(); it != rows_.rend(); ++it)
    if (it->split == split && it->metric == metric && it->k == k)
      return it->value;
  throw std::out_of_range("no metric " + split + "/" + metric + "@" +
                          std::to_string(k));
}

std::vector<double> MetricLog::series(const std::string& split,
                                      const std::string& metric, int k) const {
  std::vector<double> out;
  for (const MetricRow& r : rows_)
    if (r.split == split && r.metric == metric && r.k == k)
      out.push_back(r.value);
  return out;
}

void MetricLog::write_csv(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,split,metric,k,value\n";
  for (const MetricRow& r : rows_)
    out << r.step << ',' << r.split << ',' << r.metric << ',' << r.k << ','
        << format_double(r.value) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<MetricRow> evaluate_generations(const Catalog& catalog,
                                            std::span<const Task> tasks,
                                            std::span<const TokenSeq> generations,
                                            std::span<const int> ks,
                                            int list_length, int step,
                                            const std::string& split) {
  if (tasks.empty()) throw std::invalid_argument("evaluate: empty task set");
  if (generations.size() != tasks.size())
    throw std::invalid_argument("evaluate: one generation per task required");
  std::vector<double> recall(ks.size(), 0.0), ndcg(ks.size(), 0.0);
  double in_cat = 0, well_formed = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const RankedList list = parse_generation(generations[i], catalog);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      recall[j] += recall_at_k(list, tasks[i].gt, ks[j]);
      ndcg[j] += ndcg_at_k(list, tasks[i].gt, ks[j]);
    }
    in_cat += in_catalog_ratio(list);
    well_formed += well_formed_length(list, list_length) ? 1.0 : 0.0;
  }
  const double inv = 1.0 / static_cast<double>(tasks.size());
  std::vector<MetricRow> rows;
  for (std::size_t j = 0; j < ks.size(); ++j) {
    rows.push_back({step, split, "recall", ks[j], recall[j] * inv});
    rows.push_back({step, split, "ndcg", ks[j], ndcg[j] * inv});
  }
  rows.push_back({step, split, "in_catalog", 0, in_cat * inv});
  rows.push_back({step, split, "well_formed", 0, well_formed * inv});
  return rows;
}

std::vector<MetricRow> evaluate(const PolicyParams& params,
                                const RunConfig& config, const Catalog& catalog,
                                std::span<const Task> tasks, int step,
                                const std::string& split) {
  std::vector<TokenSeq> gens;
  gens.reserve(tasks.size());
  for (const Task& t : tasks)
    gens.push_back(greedy_decode(params, config.context_key(t.context_id),
                                 config.max_tokens(), catalog.delim(),
                                 catalog.eos())
                       .tokens);
  return evaluate_generations(catalog, tasks, gens, config.eval.ks,
                              config.env.list_length, step, split);
}

PolicyParams initial_policy(const RunConfig& config, const Catalog& catalog) {
  return PolicyParams(config.policy.num_states, catalog.vocab_size(),
                      config.policy.hash_seed);
}

std::vector<Demonstration> to_demonstrations(const RunConfig& config,
                                             std::span<const SftExample> data) {
  std::vector<Demonstration> out;
  out.reserve(data.size());
  for (const SftExample& ex : data)
    out.push_back({config.context_key(ex.context_id), ex.tokens});
  return out;
}

TrainResult train_sft(const RunConfig& config, const World& world,
                      PolicyParams init, std::span<const SftExample> train,
                      std::span<const SftExample> val) {
  if (train.empty()) throw std::runtime_error("sft: empty training dataset");
  const TokenId delim = world.catalog.delim();
  const auto train_demos = to_demonstrations(config, train);
  const auto val_demos = to_demonstrations(config, val);
  const auto val_tasks = world.split(Split::kVal);
  const LearningRateSchedule schedule{config.sft.lr, config.sft.lr_milestones};

  TrainResult res{std::move(init), {}};
  auto log_eval = [&](int step) {
    res.log.add(step, "train", "nll", 0, sft_loss(res.params, train_demos, delim));
    if (!val_demos.empty())
      res.log.add(step, "val", "nll", 0, sft_loss(res.params, val_demos, delim));
    if (!val_tasks.empty())
      res.log.append(evaluate(res.params, config, world.catalog, val_tasks, step, "val"));
  };

  Rng rng = make_rng(config.seed, "sft/batch");
  std::uniform_int_distribution<std::size_t> pick(0, train_demos.size() - 1);
  std::vector<Demonstration> batch;
  log_eval(0);
  for (int step = 1; step <= config.sft.steps; ++step) {
    batch.clear();
    for (int i = 0; i < config.sft.batch_size; ++i)
      batch.push_back(train_demos[pick(rng)]);
    const LossAndGrad lg = sft_loss_and_grad(res.params, batch, delim);
    lg.grad.apply_to(res.params, -schedule.at(step - 1));
    res.log.add(step, "train", "batch_nll", 0, lg.loss);
    if (step % config.sft.eval_every == 0 || step == config.sft.steps)
      log_eval(step);
  }
  return res;
}

TrainResult train_rl(const RunConfig& config, const World& world,
                     PolicyParams init) {
  const RlConfig& rc = config.rl;
  const Catalog& catalog = world.catalog;
  const int n = config.env.list_length;
  const auto train_tasks = world.split(Split::kTrain);
  const auto val_tasks = world.split(Split::kVal);
  if (train_tasks.empty()) throw std::runtime_error("rl: no training tasks");

  const SamplingOptions opts{config.max_tokens(), rc.temperature, false};
  const RewardShaping shaping = rc.shaping();
  const std::uint64_t seed = config.seed;
  GroupSampler sampler = [&, shaping, opts, seed](const PolicySnapshot& behavior,
                                                  std::int64_t round) {
    Rng rng = make_rng(seed, "rl/batch", static_cast<std::uint64_t>(round));
    std::vector<std::size_t> order(train_tasks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<RolloutGroup> groups;
    for (int b = 0; b < rc.batch_contexts; ++b) {
      const std::size_t slot = static_cast<std::size_t>(b) % order.size();
      if (slot == 0 && b > 0) std::iota(order.begin(), order.end(), std::size_t{0});
      std::uniform_int_distribution<std::size_t> pick(slot, order.size() - 1);
      std::swap(order[slot], order[pick(rng)]);
      const Task& task = train_tasks[order[slot]];
      RolloutGroup g;
      g.ctx = config.context_key(task.context_id);
      g.list_length = n;
      g.eps_over = rc.eps_over;
      const auto rollouts = sample_rollouts(behavior, g.ctx, rc.group_size, opts,
                                            catalog.delim(), catalog.eos(), rng());
      for (const Rollout& r : rollouts)
        g.rollouts.push_back(make_record(r, catalog, task.gt, n, shaping,
                                         rc.eps_over, rc.eps_under));
      groups.push_back(std::move(g));
    }
    return groups;
  };

  std::optional<PolicySnapshot> reference;
  if (rc.kl_coeff > 0) reference.emplace(init);
  PolicyOptimizer opt(std::move(init), reference, rc.clip(), rc.mu,
                      {rc.lr, rc.lr_milestones}, catalog.delim(), sampler);

  MetricLog log;
  if (!val_tasks.empty())
    log.append(evaluate(opt.params(), config, catalog, val_tasks, 0, "val"));
  for (int step = 1; step <= rc.steps; ++step) {
    const UpdateStats stats = opt.update_step();
    log.add(step, "train", "objective", 0, stats.objective);
    log.add(step, "train", "kl", 0, stats.kl);
    log.add(step, "train", "clip_fraction", 0, stats.clip_fraction);
    if (stats.resampled) {
      std::vector<double> per_rank(static_cast<std::size_t>(n), 0.0);
      double reward = 0, wrong = 0, count = 0;
      for (const RolloutGroup& g : opt.batch()) {
        for (const RolloutRecord& r : g.rollouts) {
          for (std::size_t k = 0; k < r.rel.size() && k < per_rank.size(); ++k)
            per_rank[k] += r.rel[k];
          reward += dcg_at_n(r.rel, n);
          wrong += well_formed_length(r.parsed, n) ? 0.0 : 1.0;
          count += 1;
        }
      }
      log.add(step, "train", "reward", 0, reward / count);
      log.add(step, "train", "wrong_length", 0, wrong / count);
      for (int k = 1; k <= n; ++k)
        log.add(step, "train", "rank_reward", k,
                per_rank[static_cast<std::size_t>(k - 1)] / count);
    }
    if (!val_tasks.empty() && (step % rc.eval_every == 0 || step == rc.steps))
      log.append(evaluate(opt.params(), config, catalog, val_tasks, step, "val"));
  }
  return {opt.params(), std::move(log)};
}

namespace {

void prepare_out(const RunConfig& config, const std::string& command) {
  config.validate();
  const fs::path out(config.out);
  fs::create_directories(out);
  std::ofstream f(out / (command + ".config.toml"), std::ios::binary);
  if (!f) throw std::runtime_error("cannot write to " + out.string());
  f << "# resolved configuration for '" << command << "'\n" << config.to_text();
}

void write_summary(const fs::path& path, const std::string& command,
                   const MetricLog& log, nlohmann::json extra = {}) {
  nlohmann::json final_metrics = nlohmann::json::object();
  if (!log.rows().empty()) {
    const int last = log.rows().back().step;
    for (const MetricRow& r : log.rows()) {
      if (r.step != last) continue;
      std::string key = r.split + "/" + r.metric;
      if (r.k > 0) key += "@" + std::to_string(r.k);
      final_metrics[key] = r.value;
    }
  }
  nlohmann::json j{{"command", command}, {"final", final_metrics}};
  if (!extra.is_null()) j["details"] = std::move(extra);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

void run_gen_env(const RunConfig& config) {
  prepare_out(config, "gen-env");
  const World world = generate(config.env);
  const fs::path out(config.out);
  write_catalog(world.catalog, out / "catalog.jsonl");
  write_tasks(world.tasks, out / "tasks.jsonl");
}

void run_distill(const RunConfig& config) {
  prepare_out(config, "distill");
  const World world = generate(config.env);
  const DistillOutput d = run_distillation(world, config.distill);
  const fs::path out(config.out);
  write_sft_dataset(d.train, out / "sft_train.jsonl");
  write_sft_dataset(d.val, out / "sft_val.jsonl");
  write_stage_dump(d.scores, config.env.list_length, out / "distill_stages.jsonl");

  std::vector<std::vector<double>> reflected[2];
  std::vector<std::vector<ItemId>> gt[2];
  std::map<int, const Task*> by_id;
  for (const Task& t : world.tasks) by_id[t.context_id] = &t;
  for (const TaskScores& ts : d.scores) {
    const int s = ts.split == Split::kTrain ? 0 : 1;
    reflected[s].push_back(ts.reflect.scores);
    gt[s].push_back(by_id.at(ts.context_id)->gt);
  }
  const auto identity = BiasParams::identity(world.catalog.size());
  nlohmann::json details{
      {"train_loglik_identity", multinomial_loglik(identity, reflected[0], gt[0])},
      {"train_loglik_fitted", multinomial_loglik(d.bias, reflected[0], gt[0])}};
  if (!reflected[1].empty()) {
    details["val_loglik_identity"] = multinomial_loglik(identity, reflected[1], gt[1]);
    details["val_loglik_fitted"] = multinomial_loglik(d.bias, reflected[1], gt[1]);
  }
  MetricLog log;
  const auto val = world.split(Split::kVal);
  if (!val.empty()) {
    std::vector<TokenSeq> gens;
    for (const Task& t : val)
      for (const SftExample& ex : d.val)
        if (ex.context_id == t.context_id) gens.push_back(ex.tokens);
    log.append(evaluate_generations(world.catalog, val, gens, config.eval.ks,
                                    config.env.list_length, 0, "val"));
    log.write_csv(out / "distill_metrics.csv");
  }
  write_summary(out / "distill_summary.json", "distill", log, details);
}

void run_sft(const RunConfig& config) {
  prepare_out(config, "sft");
  const World world = generate(config.env);
  const fs::path out(config.out);
  std::vector<SftExample> train, val;
  if (!config.sft.dataset.empty()) {
    const fs::path p(config.sft.dataset);
    if (!fs::exists(p)) throw std::runtime_error("missing SFT dataset " + p.string());
    train = read_sft_dataset(p);
    fs::path vp = p;
    vp.replace_filename("sft_val.jsonl");
    if (fs::exists(vp)) val = read_sft_dataset(vp);
  } else if (fs::exists(out / "sft_train.jsonl")) {
    train = read_sft_dataset(out / "sft_train.jsonl");
    if (fs::exists(out / "sft_val.jsonl")) val = read_sft_dataset(out / "sft_val.jsonl");
  } else {
    DistillOutput d = run_distillation(world, config.distill);
    train = std::move(d.train);
    val = std::move(d.val);
  }
  TrainResult res =
      train_sft(config, world, initial_policy(config, world.catalog), train, val);
  save_checkpoint(res.params, out / "sft.bin");
  res.log.write_csv(out / "sft_metrics.csv");
  write_summary(out / "sft_summary.json", "sft", res.log);
}

void run_rl(const RunConfig& config) {
  prepare_out(config, "rl");
  const World world = generate(config.env);
  const fs::path out(config.out);
  const fs::path init =
      config.rl.init.empty() ? out / "sft.bin" : fs::path(config.rl.init);
  if (!fs::exists(init))
    throw std::runtime_error("missing init checkpoint " + init.string());
  PolicyParams params = load_checkpoint(init);
  if (params.vocab_size() != world.catalog.vocab_size())
    throw std::runtime_error("init checkpoint vocabulary does not match the env");
  TrainResult res = train_rl(config, world, std::move(params));
  save_checkpoint(res.params, out / "rl.bin");
  res.log.write_csv(out / "rl_metrics.csv");
  write_summary(out / "rl_summary.json", "rl", res.log,
                {{"mode", to_string(config.rl.mode)},
                 {"scheme", to_string(config.rl.scheme)}});
}

void run_eval(const RunConfig& config) {
  prepare_out(config, "eval");
  const World world = generate(config.env);
  const fs::path out(config.out);
  fs::path ckpt(config.eval.checkpoint);
  if (ckpt.empty()) ckpt = fs::exists(out / "rl.bin") ? out / "rl.bin" : out / "sft.bin";
  if (!fs::exists(ckpt))
    throw std::runtime_error("missing checkpoint " + ckpt.string());
  const PolicyParams params = load_checkpoint(ckpt);
  if (params.vocab_size() != world.catalog.vocab_size())
    throw std::runtime_error("checkpoint vocabulary does not match the env");
  std::vector<Task> tasks = config.eval.tasks.empty()
                                ? world.split(config.eval.split)
                                : read_tasks(config.eval.tasks, config.env.num_clusters);
  if (!config.eval.tasks.empty())
    std::erase_if(tasks, [&](const Task& t) { return t.split != config.eval.split; });
  if (tasks.empty()) throw std::runtime_error("eval: empty task set");
  MetricLog log;
  log.append(evaluate(params, config, world.catalog, tasks, 0,
                      to_string(config.eval.split)));
  log.write_csv(out / "eval.csv");
  write_summary(out / "eval_summary.json", "eval", log,
                {{"checkpoint", ckpt.filename().string()}});
}

}  // namespace rankalign
