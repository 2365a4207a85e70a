#include "grapam/merge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace grapam {

std::vector<double> uniform_weights(size_t member_count) {
  if (member_count == 0) throw Error("uniform_weights: member count must be >= 1");
  std::vector<double> w(member_count, 1.0 / double(member_count));
  double sum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= sum;
  return w;
}

void validate_weights(const std::vector<double>& weights) {
  for (size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0)) {
      std::ostringstream os;
      os << "negative weight at index " << i << ": " << weights[i];
      throw Error(os.str());
    }
  }
  double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-9) {
    std::ostringstream os;
    os.precision(17);
    os << "weights must sum to 1 within 1e-9, got " << sum
       << " (deviation " << sum - 1.0 << ")";
    throw Error(os.str());
  }
}

namespace {

std::string first_schema_difference(const Checkpoint& a, const Checkpoint& b) {
  auto ia = a.entries.begin();
  auto ib = b.entries.begin();
  while (ia != a.entries.end() && ib != b.entries.end()) {
    if (ia->first != ib->first) return std::min(ia->first, ib->first);
    if (!ia->second.same_schema(ib->second)) return ia->first;
    ++ia;
    ++ib;
  }
  if (ia != a.entries.end()) return ia->first;
  if (ib != b.entries.end()) return ib->first;
  return "";
}

}  // namespace

std::pair<Checkpoint, MergeReport> merge(const MergePlan& plan) {
  if (plan.members.empty()) throw Error("merge plan has no members");
  if (plan.members.size() != plan.weights.size())
    throw Error("merge plan weight count does not match member count");
  validate_weights(plan.weights);

  const Checkpoint& first = *plan.members.front().ckpt;
  for (const auto& m : plan.members) {
    if (!m.ckpt) throw Error("merge member \"" + m.id + "\" has no checkpoint");
    if (!schema_equal(first, *m.ckpt))
      throw Error("schema mismatch between members \"" + plan.members.front().id +
                  "\" and \"" + m.id + "\" at key \"" +
                  first_schema_difference(first, *m.ckpt) + "\"");
  }
  const bool scoped = plan.scope.preset != SelectorPreset::ALL;
  if (scoped) {
    if (!plan.base) throw Error("partial merge requires a base checkpoint");
    if (!schema_equal(first, *plan.base))
      throw Error("base checkpoint schema mismatch at key \"" +
                  first_schema_difference(first, *plan.base) + "\"");
  }

  // Deterministic accumulation order: members sorted by id.
  std::vector<size_t> order(plan.members.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (plan.members[a].id != plan.members[b].id)
      return plan.members[a].id < plan.members[b].id;
    return a < b;
  });

  MergeReport report;
  for (size_t i : order) {
    report.member_ids.push_back(plan.members[i].id);
    report.weights.push_back(plan.weights[i]);
  }

  Checkpoint out;
  out.meta = first.meta;
  size_t in_scope = 0;
  for (const auto& [name, ref] : first.entries) {
    if (scoped && !plan.scope.matches(name)) {
      // Out-of-scope passthrough from the explicit base.
      const Tensor& base_t = plan.base->at(name);
      for (size_t i : order) {
        if (!plan.members[i].ckpt->at(name).bit_equal(base_t)) {
          report.warnings.push_back("out-of-scope tensor \"" + name +
                                    "\" differs between member \"" +
                                    plan.members[i].id + "\" and base");
          break;
        }
      }
      Tensor t = base_t;
      out.put(name, std::move(t));
      continue;
    }
    ++in_scope;
    Tensor t;
    t.shape = ref.shape;
    size_t n = ref.data.size();
    std::vector<double> acc(n, 0.0);
    for (size_t i : order) {
      const Tensor& src = plan.members[i].ckpt->at(name);
      double w = plan.weights[i];
      for (size_t j = 0; j < n; ++j) acc[j] += w * double(src.data[j]);
    }
    t.data.resize(n);
    double max_delta = 0.0;
    for (size_t j = 0; j < n; ++j) {
      t.data[j] = float(acc[j]);
      max_delta = std::max(max_delta, std::abs(acc[j] - double(ref.data[j])));
    }
    report.max_abs_delta[name] = max_delta;
    out.put(name, std::move(t));
  }
  if (scoped && in_scope == 0)
    throw Error("merge scope selects zero parameters");

  std::ostringstream lineage;
  for (size_t i : order)
    lineage << plan.members[i].id << "=" << content_hash(*plan.members[i].ckpt) << ";";
  out.meta["merge.members"] = lineage.str();
  report.lineage_hash = content_hash(out);
  return {std::move(out), std::move(report)};
}

}  // namespace grapam
