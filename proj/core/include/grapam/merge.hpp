#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "grapam/selector.hpp"
#include "grapam/tensor_store.hpp"

namespace grapam {

struct MergeMember {
  std::string id;
  const Checkpoint* ckpt = nullptr;
};

/// Constrained linear interpolation in parameter space: out = sum_i w_i * member_i
/// with w_i >= 0 summing to 1. When scope is not ALL, out-of-scope tensors are
/// copied from `base`.
struct MergePlan {
  std::vector<MergeMember> members;
  std::vector<double> weights;
  Selector scope = Selector::all();
  const Checkpoint* base = nullptr;  // required when scope != ALL
};

struct MergeReport {
  std::vector<std::string> member_ids;
  std::vector<double> weights;
  std::map<std::string, double> max_abs_delta;  // per merged tensor, vs first member
  uint64_t lineage_hash = 0;
  std::vector<std::string> warnings;
};

/// 1/|M| for each member, renormalized so the f64 sum is within 1e-15 of 1.
std::vector<double> uniform_weights(size_t member_count);

/// Accepts iff all weights >= 0 and |sum - 1| <= 1e-9. Throws otherwise with
/// the offending index or sum deviation.
void validate_weights(const std::vector<double>& weights);

std::pair<Checkpoint, MergeReport> merge(const MergePlan& plan);

}  // namespace grapam
