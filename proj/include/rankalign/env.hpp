#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rankalign/catalog.hpp"

namespace rankalign {

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);
Split split_from_string(const std::string& s);

struct Task {
  int context_id = 0;
  int cluster = 0;
  std::vector<ItemId> gt;  // sorted, distinct
  Split split = Split::kTrain;
  /// Generator-side affinity over the catalog (the cluster's popularity law).
  /// Empty when the task was read back from a task file.
  std::vector<double> relevance_weights;
};

struct EnvConfig {
  int catalog_size = 500;
  int num_contexts = 400;
  int num_clusters = 8;
  int pool_size = 60;         // items reachable from one cluster
  double zipf_exponent = 1.0; // within-pool popularity law
  int gt_size_min = 2;
  int gt_size_max = 6;
  int list_length = 20;       // N
  std::uint64_t seed = 1;
  int title_length_min = 1;
  int title_length_max = 3;
  int title_alphabet = 128;   // non-reserved token count
  double val_fraction = 0.1;
  double test_fraction = 0.1;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

/// Everything the generator produced. Tasks are ordered by context id.
struct World {
  EnvConfig config;
  Catalog catalog;
  std::vector<Task> tasks;
  /// cluster_pools[c] lists pool items from most to least popular.
  std::vector<std::vector<ItemId>> cluster_pools;
  /// cluster_laws[c][item]: probability of drawing `item` as a single
  /// positive in cluster c. Zero outside the pool.
  std::vector<std::vector<double>> cluster_laws;

  std::vector<Task> split(Split s) const;
};

World generate(const EnvConfig& config);

/// Cluster of a context. Contexts are assigned round-robin so the mapping is
/// a pure function of the id.
inline int context_cluster(int context_id, int num_clusters) {
  return context_id % num_clusters;
}

/// Ground-truth items first (ascending id), then non-positive fill in
/// ascending id. Attains the maximum DCG@n for the task.
std::vector<ItemId> oracle_best_list(const Task& task, int n,
                                     int catalog_size);

/// JSON-lines {"context","gt","split"}.
void write_tasks(const std::vector<Task>& tasks,
                 const std::filesystem::path& path);
std::vector<Task> read_tasks(const std::filesystem::path& path,
                             int num_clusters);

}  // namespace rankalign
