#pragma once

#include <optional>
#include <string>
#include <vector>

#include "grapam/clustering.hpp"
#include "grapam/merge.hpp"
#include "grapam/selector.hpp"
#include "grapam/tensor_store.hpp"
#include "grapam/toy.hpp"

namespace grapam {

enum class ClusterMethod { KMEANS, RANDOM };
enum class MergeSetPolicy { ALL_SUBSETS, ALL_MODELS, EXPLICIT };

struct ClusteringSpec {
  ClusterMethod method = ClusterMethod::KMEANS;
  size_t k = 3;
  uint64_t seed = 17;
};

struct PftSpec {
  Selector selector = Selector::all();
  TrainConfig train;
};

/// Declarative description of one GRAPAM run: data, clustering, partial
/// fine-tuning, and the merge sets to sweep. Member ids are "all" and
/// "1".."K".
struct ExperimentConfig {
  std::string name = "grapam";
  std::string out_dir;
  ToyConfig model;
  std::optional<std::string> base_checkpoint;
  std::optional<SynthSpec> synth;            // generate data inline
  std::string train_manifest;                // used when synth absent
  std::string eval_manifest;
  std::string embeddings;
  ClusteringSpec clustering;
  PftSpec pft;
  MergeSetPolicy merge_policy = MergeSetPolicy::ALL_SUBSETS;
  std::vector<std::vector<std::string>> explicit_sets;
  size_t turns = 1;

  static ExperimentConfig from_json_file(const std::string& path);
  static ExperimentConfig from_json(const std::string& text);
  std::string to_json() const;
  void validate() const;
};

struct ModelEval {
  std::string id;
  double loss = 0.0;
  double wer = 0.0;
  uint64_t hash = 0;
  std::string path;
};

struct PlanEval {
  std::vector<std::string> members;
  double loss = 0.0;
  double wer = 0.0;
  uint64_t hash = 0;
  std::string path;
};

struct TurnReport {
  size_t turn = 0;
  std::vector<ModelEval> models;
  std::vector<PlanEval> plans;   // sorted by loss, best first
  std::vector<std::string> notes;
};

struct RunReport {
  std::vector<TurnReport> turns;
  bool early_stopped = false;
  std::string to_json() const;
  std::string to_table() const;
  const PlanEval& best() const;
};

RunReport run_grapam(const ExperimentConfig& cfg);
RunReport run_iterative(const ExperimentConfig& cfg);
RunReport run_heterogeneous(const std::vector<ExperimentConfig>& cfgs,
                            bool merge_all);

/// Enumerates merge sets over member ids {"all","1",..,"K"} per policy.
std::vector<std::vector<std::string>> enumerate_merge_sets(
    const ExperimentConfig& cfg, size_t K);

}  // namespace grapam
