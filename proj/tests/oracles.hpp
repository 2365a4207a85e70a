// Independent reference implementations used only by tests. These must stay
// decoupled from the library code paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "grapam/clustering.hpp"
#include "grapam/tensor_store.hpp"

namespace oracle {

// plain scalar-loop weighted average, same accumulation order as the engine
// (members pre-sorted by id by the caller)
inline grapam::Checkpoint merge_scalar(
    const std::vector<const grapam::Checkpoint*>& members,
    const std::vector<double>& weights) {
  grapam::Checkpoint out;
  for (const auto& [name, ref] : members.front()->entries) {
    grapam::Tensor t;
    t.shape = ref.shape;
    t.data.resize(ref.data.size());
    for (size_t j = 0; j < ref.data.size(); ++j) {
      double acc = 0.0;
      for (size_t i = 0; i < members.size(); ++i)
        acc += weights[i] * double(members[i]->at(name).data[j]);
      t.data[j] = float(acc);
    }
    out.put(name, std::move(t));
  }
  return out;
}

// exhaustive assignment enumeration: global k-means optimum for tiny N
inline double kmeans_global_optimum(const grapam::EmbeddingSet& emb, size_t K) {
  size_t N = emb.count(), D = emb.dim;
  std::vector<size_t> assign(N, 0);
  double best = std::numeric_limits<double>::infinity();
  size_t total = 1;
  for (size_t i = 0; i < N; ++i) total *= K;
  for (size_t code = 0; code < total; ++code) {
    size_t c = code;
    for (size_t i = 0; i < N; ++i) {
      assign[i] = c % K;
      c /= K;
    }
    std::vector<double> centroid(K * D, 0.0);
    std::vector<size_t> count(K, 0);
    for (size_t i = 0; i < N; ++i) {
      ++count[assign[i]];
      for (size_t j = 0; j < D; ++j)
        centroid[assign[i] * D + j] += emb.row(i)[j];
    }
    bool any_empty = false;
    for (size_t k = 0; k < K; ++k) {
      if (count[k] == 0) {
        any_empty = true;
        break;
      }
      for (size_t j = 0; j < D; ++j) centroid[k * D + j] /= double(count[k]);
    }
    if (any_empty) continue;
    double obj = 0.0;
    for (size_t i = 0; i < N; ++i)
      for (size_t j = 0; j < D; ++j) {
        double d = emb.row(i)[j] - centroid[assign[i] * D + j];
        obj += d * d;
      }
    best = std::min(best, obj);
  }
  return best;
}

// cyclic Jacobi eigensolver for small symmetric matrices, descending values
inline std::vector<double> symmetric_eigenvalues(std::vector<double> a, size_t n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (size_t p = 0; p < n; ++p)
      for (size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-24) break;
    for (size_t p = 0; p < n; ++p) {
      for (size_t q = p + 1; q < n; ++q) {
        double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = a[p * n + p], aqq = a[q * n + q];
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (size_t k = 0; k < n; ++k) {
          double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (size_t k = 0; k < n; ++k) {
          double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> vals(n);
  for (size_t i = 0; i < n; ++i) vals[i] = a[i * n + i];
  std::sort(vals.rbegin(), vals.rend());
  return vals;
}

// exhaustive minimum edit distance by recursion, for short sequences
inline size_t edit_distance_brute(const std::vector<std::string>& ref,
                                  const std::vector<std::string>& hyp,
                                  size_t i = 0, size_t j = 0) {
  if (i == ref.size()) return hyp.size() - j;
  if (j == hyp.size()) return ref.size() - i;
  size_t best = edit_distance_brute(ref, hyp, i + 1, j + 1) +
                (ref[i] == hyp[j] ? 0 : 1);
  best = std::min(best, edit_distance_brute(ref, hyp, i + 1, j) + 1);
  best = std::min(best, edit_distance_brute(ref, hyp, i, j + 1) + 1);
  return best;
}

// central finite differences of a scalar function of a parameter vector
template <typename F>
std::vector<double> finite_difference(F&& f, std::vector<double> params,
                                      double h = 1e-5) {
  std::vector<double> grad(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    double orig = params[i];
    params[i] = orig + h;
    double hi = f(params);
    params[i] = orig - h;
    double lo = f(params);
    params[i] = orig;
    grad[i] = (hi - lo) / (2.0 * h);
  }
  return grad;
}

inline grapam::Checkpoint random_checkpoint(grapam::Rng& rng, size_t tensors,
                                            size_t max_elems) {
  grapam::Checkpoint ckpt;
  for (size_t i = 0; i < tensors; ++i) {
    grapam::Tensor t;
    size_t n = 1 + rng.next_index(max_elems);
    t.shape = {n};
    t.data.resize(n);
    for (auto& v : t.data) v = float(rng.next_gaussian());
    ckpt.put("param." + std::to_string(i), std::move(t));
  }
  return ckpt;
}

}  // namespace oracle
