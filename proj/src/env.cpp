#include "rankalign/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rankalign/rng.hpp"

namespace rankalign {

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "'");
}

void EnvConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("env config: ") + what);
  };
  require(catalog_size > 0 && num_contexts > 0 && num_clusters > 0 &&
              pool_size > 0 && list_length > 0 && title_alphabet > 0,
          "all counts must be positive");
  require(gt_size_min >= 1 && gt_size_min <= gt_size_max,
          "gt size range must satisfy 1 <= min <= max");
  require(catalog_size >= gt_size_max, "catalog_size < gt_size_max");
  require(gt_size_max <= list_length, "gt_size_max must not exceed N");
  require(list_length <= catalog_size, "N must not exceed catalog_size");
  require(pool_size <= catalog_size, "pool_size exceeds catalog_size");
  require(gt_size_max <= pool_size, "gt_size_max exceeds pool_size");
  require(title_length_min >= 1 && title_length_min <= title_length_max,
          "title length range must satisfy 1 <= min <= max");
  require(zipf_exponent >= 0.0, "zipf_exponent must be non-negative");
  require(val_fraction >= 0 && test_fraction >= 0 &&
              val_fraction + test_fraction < 1.0,
          "split fractions must leave a training split");
  // Enough distinct renderings must exist.
  double capacity = 0;
  for (int len = title_length_min; len <= title_length_max; ++len)
    capacity += std::pow(static_cast<double>(title_alphabet), len);
  require(capacity >= 2.0 * catalog_size,
          "title alphabet too small for catalog_size");
}

std::vector<Task> World::split(Split s) const {
  std::vector<Task> out;
  for (const Task& t : tasks)
    if (t.split == s) out.push_back(t);
  return out;
}

namespace {

Catalog make_catalog(const EnvConfig& cfg, Rng& rng) {
  std::uniform_int_distribution<int> len_dist(cfg.title_length_min,
                                              cfg.title_length_max);
  std::uniform_int_distribution<TokenId> tok_dist(0, cfg.title_alphabet - 1);
  std::set<TokenSeq> seen;
  std::vector<Item> items;
  items.reserve(static_cast<std::size_t>(cfg.catalog_size));
  while (static_cast<int>(items.size()) < cfg.catalog_size) {
    TokenSeq title(static_cast<std::size_t>(len_dist(rng)));
    for (TokenId& t : title) t = tok_dist(rng);
    if (!seen.insert(title).second) continue;
    items.push_back({static_cast<ItemId>(items.size()), std::move(title)});
  }
  const TokenId delim = cfg.title_alphabet;
  const TokenId eos = cfg.title_alphabet + 1;
  return Catalog(std::move(items), cfg.title_alphabet + 2, delim, eos);
}

}  // namespace

World generate(const EnvConfig& config) {
  config.validate();
  Rng catalog_rng = make_rng(config.seed, "env/catalog");
  Catalog catalog = make_catalog(config, catalog_rng);

  World world{config, std::move(catalog), {}, {}, {}};
  const auto n_items = static_cast<std::size_t>(config.catalog_size);

  Rng pool_rng = make_rng(config.seed, "env/pools");
  std::vector<ItemId> all(n_items);
  std::iota(all.begin(), all.end(), 0);
  for (int c = 0; c < config.num_clusters; ++c) {
    // Partial Fisher-Yates: the first pool_size entries form the pool, in
    // popularity order.
    std::vector<ItemId> perm = all;
    for (int i = 0; i < config.pool_size; ++i) {
      std::uniform_int_distribution<int> pick(i, config.catalog_size - 1);
      std::swap(perm[static_cast<std::size_t>(i)],
                perm[static_cast<std::size_t>(pick(pool_rng))]);
    }
    perm.resize(static_cast<std::size_t>(config.pool_size));
    std::vector<double> law(n_items, 0.0);
    double z = 0;
    for (int r = 0; r < config.pool_size; ++r) {
      const double w = 1.0 / std::pow(r + 1.0, config.zipf_exponent);
      law[static_cast<std::size_t>(perm[static_cast<std::size_t>(r)])] = w;
      z += w;
    }
    for (double& w : law) w /= z;
    world.cluster_pools.push_back(std::move(perm));
    world.cluster_laws.push_back(std::move(law));
  }

  // Split assignment by a seeded permutation of context ids.
  Rng split_rng = make_rng(config.seed, "env/split");
  std::vector<int> order(static_cast<std::size_t>(config.num_contexts));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_test = static_cast<std::size_t>(
      std::floor(config.test_fraction * config.num_contexts));
  const auto n_val = static_cast<std::size_t>(
      std::floor(config.val_fraction * config.num_contexts));
  std::vector<Split> split_of(order.size(), Split::kTrain);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_test) {
      split_of[static_cast<std::size_t>(order[i])] = Split::kTest;
    } else if (i < n_test + n_val) {
      split_of[static_cast<std::size_t>(order[i])] = Split::kVal;
    }
  }

  Rng gt_rng = make_rng(config.seed, "env/gt");
  std::uniform_int_distribution<int> size_dist(config.gt_size_min,
                                               config.gt_size_max);
  for (int ctx = 0; ctx < config.num_contexts; ++ctx) {
    Task task;
    task.context_id = ctx;
    task.cluster = context_cluster(ctx, config.num_clusters);
    task.split = split_of[static_cast<std::size_t>(ctx)];
    const auto& law = world.cluster_laws[static_cast<std::size_t>(task.cluster)];
    task.relevance_weights = law;

    // Sequential draws without replacement from the cluster law.
    std::vector<double> w = law;
    const int size = size_dist(gt_rng);
    for (int j = 0; j < size; ++j) {
      std::discrete_distribution<int> draw(w.begin(), w.end());
      const int item = draw(gt_rng);
      task.gt.push_back(item);
      w[static_cast<std::size_t>(item)] = 0.0;
    }
    std::sort(task.gt.begin(), task.gt.end());
    world.tasks.push_back(std::move(task));
  }
  return world;
}

std::vector<ItemId> oracle_best_list(const Task& task, int n,
                                     int catalog_size) {
  if (task.gt.empty())
    throw std::invalid_argument("oracle_best_list: empty ground-truth set");
  if (n <= 0 || n > catalog_size)
    throw std::invalid_argument("oracle_best_list: need 0 < n <= catalog_size");
  std::vector<ItemId> out;
  std::vector<bool> used(static_cast<std::size_t>(catalog_size), false);
  for (ItemId g : task.gt) {
    if (static_cast<int>(out.size()) == n) break;
    out.push_back(g);
    used[static_cast<std::size_t>(g)] = true;
  }
  for (ItemId v = 0; static_cast<int>(out.size()) < n; ++v) {
    if (!used[static_cast<std::size_t>(v)]) out.push_back(v);
  }
  return out;
}

void write_tasks(const std::vector<Task>& tasks,
                 const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const Task& t : tasks) {
    out << nlohmann::json{{"context", t.context_id},
                          {"gt", t.gt},
                          {"split", to_string(t.split)}}
               .dump()
        << '\n';
  }
}

std::vector<Task> read_tasks(const std::filesystem::path& path,
                             int num_clusters) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<Task> tasks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    Task t;
    t.context_id = j.at("context").get<int>();
    t.cluster = context_cluster(t.context_id, num_clusters);
    t.gt = j.at("gt").get<std::vector<ItemId>>();
    t.split = split_from_string(j.at("split").get<std::string>());
    if (t.gt.empty())
      throw std::runtime_error("task with empty ground truth in " +
                               path.string());
    tasks.push_back(std::move(t));
  }
  return tasks;
}

}  // namespace rankalign
