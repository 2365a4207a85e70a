#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "grapam/tensor_store.hpp"

namespace grapam {

/// Deterministic helpers over mt19937_64 raw output. Standard distribution
/// objects are implementation-defined, so seeded results would not be
/// reproducible across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed);
  uint64_t next_u64();
  double next_double();              // uniform [0,1), 53-bit
  size_t next_index(size_t n);       // uniform {0..n-1}
  double next_gaussian();            // Box-Muller

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

enum class EmbeddingKind { SPK, LSM, ZSWER, GENERIC };

std::string to_string(EmbeddingKind k);
EmbeddingKind embedding_kind_from_string(const std::string& s);

struct EmbeddingSet {
  std::vector<std::string> ids;
  std::vector<double> vectors;  // row-major N x D
  size_t dim = 0;
  EmbeddingKind kind = EmbeddingKind::GENERIC;

  size_t count() const { return ids.size(); }
  const double* row(size_t i) const { return vectors.data() + i * dim; }
  void validate() const;
};

EmbeddingSet load_embeddings(const std::string& path);
void save_embeddings(const EmbeddingSet& emb, const std::string& path);

struct ClusterAssignment {
  size_t K = 0;
  std::map<std::string, size_t> labels;
  std::vector<double> centroids;  // K x D row-major; empty for random assignment without vectors
  size_t dim = 0;
  std::optional<double> objective;  // within-cluster sum of squares
  uint64_t seed = 0;
  size_t iterations_run = 0;
};

/// Lloyd's algorithm with k-means++ initialization. Runs `restarts`
/// independent seeded starts and keeps the best objective. Deterministic
/// given (emb, K, seed): fixed point order, ties go to the lowest
/// centroid index, empty clusters are repaired by promoting the point
/// farthest from its centroid.
ClusterAssignment kmeans(const EmbeddingSet& emb, size_t K, uint64_t seed,
                         size_t max_iter = 300, double tol = 1e-6,
                         size_t restarts = 10,
                         std::vector<std::vector<double>>* objective_trace = nullptr);

/// Uniform random labels; centroids/objective filled only when vectors given.
ClusterAssignment random_assign(const std::vector<std::string>& ids, size_t K,
                                uint64_t seed, const EmbeddingSet* emb = nullptr);

double wcss_objective(const EmbeddingSet& emb, const ClusterAssignment& assign);

struct PcaModel {
  std::vector<double> mean;                // D
  std::vector<double> components;          // d x D row-major, orthonormal rows
  std::vector<double> explained_variance;  // non-increasing
  std::vector<double> scale;               // per-dim stddev when standardized, else empty
  size_t in_dim = 0;
  size_t out_dim = 0;
};

/// Mean-centered covariance eigendecomposition, top-d components by
/// eigenvalue, sign fixed so each component's largest-magnitude coordinate
/// is positive. `standardize` z-scores each input dimension first.
PcaModel pca_fit(const EmbeddingSet& emb, size_t d, bool standardize = false);
EmbeddingSet pca_project(const PcaModel& model, const EmbeddingSet& emb);

/// One JSON-lines manifest record: {id, audio_ref, transcript_ref, ...}.
/// Extra fields are preserved verbatim through splitting.
struct ManifestRecord {
  std::string id;
  std::string audio_ref;
  std::string transcript_ref;
  std::string raw_json;  // full original line
};

struct Manifest {
  std::vector<ManifestRecord> records;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& m, const std::string& path);

/// Partitions a manifest by cluster label. Output k holds the records whose
/// id is labeled k; a cluster with no records yields an empty manifest and a
/// warning string. Errors on an unlabeled id.
std::vector<Manifest> split_manifest(const ClusterAssignment& assign,
                                     const Manifest& manifest,
                                     std::vector<std::string>* warnings = nullptr);

}  // namespace grapam
