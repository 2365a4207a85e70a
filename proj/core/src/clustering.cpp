#include "grapam/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

namespace grapam {

using nlohmann::json;

Rng::Rng(uint64_t seed) : engine_(seed) {}

uint64_t Rng::next_u64() { return engine_(); }

double Rng::next_double() {
  return double(engine_() >> 11) * 0x1.0p-53;
}

size_t Rng::next_index(size_t n) {
  if (n == 0) throw Error("next_index on empty range");
  // rejection sampling keeps the draw unbiased
  uint64_t limit = std::numeric_limits<uint64_t>::max() -
                   std::numeric_limits<uint64_t>::max() % n;
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return size_t(x % n);
}

double Rng::next_gaussian() {
  if (spare_) {
    double v = *spare_;
    spare_.reset();
    return v;
  }
  double u1, u2;
  do {
    u1 = next_double();
  } while (u1 <= 0.0);
  u2 = next_double();
  double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * M_PI * u2);
  return r * std::cos(2.0 * M_PI * u2);
}

std::string to_string(EmbeddingKind k) {
  switch (k) {
    case EmbeddingKind::SPK: return "SPK";
    case EmbeddingKind::LSM: return "LSM";
    case EmbeddingKind::ZSWER: return "ZSWER";
    case EmbeddingKind::GENERIC: return "GENERIC";
  }
  return "GENERIC";
}

EmbeddingKind embedding_kind_from_string(const std::string& s) {
  if (s == "SPK") return EmbeddingKind::SPK;
  if (s == "LSM") return EmbeddingKind::LSM;
  if (s == "ZSWER") return EmbeddingKind::ZSWER;
  if (s == "GENERIC") return EmbeddingKind::GENERIC;
  throw Error("unknown embedding kind: \"" + s + "\"");
}

void EmbeddingSet::validate() const {
  if (ids.empty()) throw Error("embedding set is empty");
  if (dim == 0) throw Error("embedding dimension must be >= 1");
  if (kind == EmbeddingKind::ZSWER && dim != 1)
    throw Error("ZSWER embeddings must be one-dimensional");
  if (vectors.size() != ids.size() * dim)
    throw Error("embedding matrix size does not match ids x dim");
  std::map<std::string, int> seen;
  for (const auto& id : ids)
    if (++seen[id] > 1) throw Error("duplicate utterance id: \"" + id + "\"");
  for (double v : vectors)
    if (!std::isfinite(v)) throw Error("non-finite embedding entry");
}

EmbeddingSet load_embeddings(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open embedding file: " + path);
  std::string line;
  if (!std::getline(f, line)) throw FormatError("empty embedding file: " + path);

  EmbeddingSet emb;
  {
    std::istringstream hs(line);
    std::string col, dim_field, kind_field;
    if (!std::getline(hs, col, '\t') || col != "id" ||
        !std::getline(hs, dim_field, '\t') || dim_field.rfind("dim=", 0) != 0 ||
        !std::getline(hs, kind_field, '\t') || kind_field.rfind("kind=", 0) != 0)
      throw FormatError("bad embedding header, expected 'id\\tdim=D\\tkind=K': " + path);
    emb.dim = std::stoul(dim_field.substr(4));
    emb.kind = embedding_kind_from_string(kind_field.substr(5));
  }
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id;
    if (!std::getline(ls, id, '\t'))
      throw FormatError("bad embedding row: " + line);
    emb.ids.push_back(id);
    std::string cell;
    size_t got = 0;
    while (std::getline(ls, cell, '\t')) {
      emb.vectors.push_back(std::stod(cell));
      ++got;
    }
    if (got != emb.dim)
      throw FormatError("row for id \"" + id + "\" has " + std::to_string(got) +
                        " values, expected " + std::to_string(emb.dim));
  }
  emb.validate();
  return emb;
}

void save_embeddings(const EmbeddingSet& emb, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "id\tdim=" << emb.dim << "\tkind=" << to_string(emb.kind) << "\n";
  f.precision(17);
  for (size_t i = 0; i < emb.count(); ++i) {
    f << emb.ids[i];
    const double* row = emb.row(i);
    for (size_t j = 0; j < emb.dim; ++j) f << '\t' << row[j];
    f << '\n';
  }
}

namespace {

double sq_dist(const double* a, const double* b, size_t d) {
  double s = 0.0;
  for (size_t j = 0; j < d; ++j) {
    double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

struct LloydResult {
  std::vector<size_t> labels;
  std::vector<double> centroids;
  double objective = 0.0;
  size_t iterations = 0;
};

std::vector<double> kmeanspp_init(const EmbeddingSet& emb, size_t K, Rng& rng) {
  size_t N = emb.count(), D = emb.dim;
  std::vector<double> centroids;
  centroids.reserve(K * D);
  size_t first = rng.next_index(N);
  centroids.insert(centroids.end(), emb.row(first), emb.row(first) + D);

  std::vector<double> d2(N);
  for (size_t c = 1; c < K; ++c) {
    double total = 0.0;
    for (size_t i = 0; i < N; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < c; ++k)
        best = std::min(best, sq_dist(emb.row(i), centroids.data() + k * D, D));
      d2[i] = best;
      total += best;
    }
    size_t pick;
    if (total <= 0.0) {
      pick = rng.next_index(N);
    } else {
      double target = rng.next_double() * total;
      double run = 0.0;
      pick = N - 1;
      for (size_t i = 0; i < N; ++i) {
        run += d2[i];
        if (run >= target) {
          pick = i;
          break;
        }
      }
    }
    centroids.insert(centroids.end(), emb.row(pick), emb.row(pick) + D);
  }
  return centroids;
}

LloydResult lloyd(const EmbeddingSet& emb, size_t K, Rng& rng, size_t max_iter,
                  double tol, std::vector<double>* trace) {
  size_t N = emb.count(), D = emb.dim;
  LloydResult res;
  res.centroids = kmeanspp_init(emb, K, rng);
  res.labels.assign(N, 0);
  std::vector<double> next(K * D);
  std::vector<size_t> counts(K);

  for (size_t iter = 0; iter < max_iter; ++iter) {
    res.iterations = iter + 1;
    // assign; ties go to the lowest centroid index
    double obj = 0.0;
    for (size_t i = 0; i < N; ++i) {
      double best = std::numeric_limits<double>::infinity();
      size_t best_k = 0;
      for (size_t k = 0; k < K; ++k) {
        double d = sq_dist(emb.row(i), res.centroids.data() + k * D, D);
        if (d < best) {
          best = d;
          best_k = k;
        }
      }
      res.labels[i] = best_k;
      obj += best;
    }
    res.objective = obj;
    if (trace) trace->push_back(obj);

    std::fill(next.begin(), next.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (size_t i = 0; i < N; ++i) {
      size_t k = res.labels[i];
      ++counts[k];
      const double* x = emb.row(i);
      double* c = next.data() + k * D;
      for (size_t j = 0; j < D; ++j) c[j] += x[j];
    }
    // empty-cluster repair: promote the point farthest from its centroid
    for (size_t k = 0; k < K; ++k) {
      if (counts[k] > 0) continue;
      double worst = -1.0;
      size_t worst_i = 0;
      for (size_t i = 0; i < N; ++i) {
        if (counts[res.labels[i]] <= 1) continue;
        double d = sq_dist(emb.row(i), res.centroids.data() + res.labels[i] * D, D);
        if (d > worst) {
          worst = d;
          worst_i = i;
        }
      }
      size_t old = res.labels[worst_i];
      --counts[old];
      const double* x = emb.row(worst_i);
      double* c_old = next.data() + old * D;
      for (size_t j = 0; j < D; ++j) c_old[j] -= x[j];
      res.labels[worst_i] = k;
      counts[k] = 1;
      double* c_new = next.data() + k * D;
      for (size_t j = 0; j < D; ++j) c_new[j] = x[j];
    }

    double movement = 0.0;
    for (size_t k = 0; k < K; ++k) {
      double* c = res.centroids.data() + k * D;
      for (size_t j = 0; j < D; ++j) {
        double updated = next[k * D + j] / double(counts[k]);
        movement = std::max(movement, std::abs(updated - c[j]));
        c[j] = updated;
      }
    }
    if (movement < tol) break;
  }

  // final assignment against converged centroids
  double obj = 0.0;
  for (size_t i = 0; i < N; ++i) {
    double best = std::numeric_limits<double>::infinity();
    size_t best_k = 0;
    for (size_t k = 0; k < K; ++k) {
      double d = sq_dist(emb.row(i), res.centroids.data() + k * D, D);
      if (d < best) {
        best = d;
        best_k = k;
      }
    }
    res.labels[i] = best_k;
    obj += best;
  }
  res.objective = obj;
  return res;
}

}  // namespace

ClusterAssignment kmeans(const EmbeddingSet& emb, size_t K, uint64_t seed,
                         size_t max_iter, double tol, size_t restarts,
                         std::vector<std::vector<double>>* objective_trace) {
  emb.validate();
  size_t N = emb.count();
  if (K == 0) throw Error("k-means requires K >= 1");
  if (K > N)
    throw Error("k-means requires K <= N (K=" + std::to_string(K) +
                ", N=" + std::to_string(N) + ")");

  std::optional<LloydResult> best;
  for (size_t r = 0; r < restarts; ++r) {
    Rng rng(seed + 0x9E3779B97F4A7C15ull * (r + 1));
    std::vector<double> trace;
    LloydResult res = lloyd(emb, K, rng, max_iter, tol,
                            objective_trace ? &trace : nullptr);
    if (objective_trace) objective_trace->push_back(std::move(trace));
    if (!best || res.objective < best->objective) best = std::move(res);
  }

  ClusterAssignment out;
  out.K = K;
  out.dim = emb.dim;
  out.seed = seed;
  out.centroids = best->centroids;
  out.objective = best->objective;
  out.iterations_run = best->iterations;
  for (size_t i = 0; i < N; ++i) out.labels[emb.ids[i]] = best->labels[i];
  return out;
}

ClusterAssignment random_assign(const std::vector<std::string>& ids, size_t K,
                                uint64_t seed, const EmbeddingSet* emb) {
  if (K == 0) throw Error("random_assign requires K >= 1");
  ClusterAssignment out;
  out.K = K;
  out.seed = seed;
  Rng rng(seed);
  for (const auto& id : ids) out.labels[id] = rng.next_index(K);
  // note: labels are drawn in the ids' given order, not map order

  if (emb) {
    emb->validate();
    size_t D = emb->dim;
    out.dim = D;
    out.centroids.assign(K * D, 0.0);
    std::vector<size_t> counts(K, 0);
    for (size_t i = 0; i < emb->count(); ++i) {
      auto it = out.labels.find(emb->ids[i]);
      if (it == out.labels.end()) continue;
      size_t k = it->second;
      ++counts[k];
      const double* x = emb->row(i);
      for (size_t j = 0; j < D; ++j) out.centroids[k * D + j] += x[j];
    }
    for (size_t k = 0; k < K; ++k)
      if (counts[k] > 0)
        for (size_t j = 0; j < D; ++j) out.centroids[k * D + j] /= double(counts[k]);
    out.objective = wcss_objective(*emb, out);
  }
  return out;
}

double wcss_objective(const EmbeddingSet& emb, const ClusterAssignment& assign) {
  if (assign.centroids.empty()) throw Error("assignment has no centroids");
  double obj = 0.0;
  for (size_t i = 0; i < emb.count(); ++i) {
    auto it = assign.labels.find(emb.ids[i]);
    if (it == assign.labels.end())
      throw Error("unlabeled id: \"" + emb.ids[i] + "\"");
    obj += sq_dist(emb.row(i), assign.centroids.data() + it->second * emb.dim, emb.dim);
  }
  return obj;
}

PcaModel pca_fit(const EmbeddingSet& emb, size_t d, bool standardize) {
  emb.validate();
  size_t N = emb.count(), D = emb.dim;
  if (d == 0 || d > std::min(N, D))
    throw Error("PCA dimension out of range: d=" + std::to_string(d) +
                ", min(N,D)=" + std::to_string(std::min(N, D)));

  Eigen::MatrixXd X(N, D);
  for (size_t i = 0; i < N; ++i)
    for (size_t j = 0; j < D; ++j) X(i, j) = emb.row(i)[j];

  PcaModel model;
  model.in_dim = D;
  model.out_dim = d;

  Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  model.mean.assign(mean.data(), mean.data() + D);

  if (standardize) {
    Eigen::RowVectorXd sd =
        (X.array().square().colwise().sum() / double(N > 1 ? N - 1 : 1)).sqrt();
    for (size_t j = 0; j < D; ++j) {
      if (sd(j) <= 0.0)
        throw Error("zero variance in dimension " + std::to_string(j) +
                    "; cannot standardize");
      X.col(j) /= sd(j);
    }
    model.scale.assign(sd.data(), sd.data() + D);
  }

  double denom = N > 1 ? double(N - 1) : 1.0;
  Eigen::MatrixXd cov = X.transpose() * X / denom;
  if (cov.trace() <= 0.0)
    throw Error("zero variance: all samples identical, PCA undefined");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("eigendecomposition failed");

  // Eigen returns ascending eigenvalues; take the top d in descending order.
  model.components.resize(d * D);
  model.explained_variance.resize(d);
  for (size_t c = 0; c < d; ++c) {
    Eigen::Index src = Eigen::Index(D - 1 - c);
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    // sign convention: largest-magnitude coordinate positive
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    for (size_t j = 0; j < D; ++j) model.components[c * D + j] = v(j);
    model.explained_variance[c] = std::max(0.0, solver.eigenvalues()(src));
  }
  return model;
}

EmbeddingSet pca_project(const PcaModel& model, const EmbeddingSet& emb) {
  emb.validate();
  if (emb.dim != model.in_dim)
    throw Error("embedding dimension " + std::to_string(emb.dim) +
                " does not match PCA model dimension " + std::to_string(model.in_dim));
  size_t N = emb.count(), D = model.in_dim, d = model.out_dim;
  EmbeddingSet out;
  out.ids = emb.ids;
  out.dim = d;
  out.kind = emb.kind;
  out.vectors.resize(N * d);
  std::vector<double> centered(D);
  for (size_t i = 0; i < N; ++i) {
    const double* x = emb.row(i);
    for (size_t j = 0; j < D; ++j) {
      centered[j] = x[j] - model.mean[j];
      if (!model.scale.empty()) centered[j] /= model.scale[j];
    }
    for (size_t c = 0; c < d; ++c) {
      double s = 0.0;
      const double* comp = model.components.data() + c * D;
      for (size_t j = 0; j < D; ++j) s += comp[j] * centered[j];
      out.vectors[i * d + c] = s;
    }
  }
  return out;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);
  Manifest m;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("bad manifest JSON at " + path + ":" +
                        std::to_string(lineno) + ": " + e.what());
    }
    ManifestRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.audio_ref = j.value("audio_ref", "");
    rec.transcript_ref = j.value("transcript_ref", "");
    rec.raw_json = line;
    m.records.push_back(std::move(rec));
  }
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (const auto& rec : m.records) f << rec.raw_json << "\n";
}

std::vector<Manifest> split_manifest(const ClusterAssignment& assign,
                                     const Manifest& manifest,
                                     std::vector<std::string>* warnings) {
  std::vector<Manifest> out(assign.K);
  for (const auto& rec : manifest.records) {
    auto it = assign.labels.find(rec.id);
    if (it == assign.labels.end())
      throw Error("manifest id not labeled by clustering: \"" + rec.id + "\"");
    out[it->second].records.push_back(rec);
  }
  if (warnings) {
    for (size_t k = 0; k < out.size(); ++k)
      if (out[k].records.empty())
        warnings->push_back("cluster " + std::to_string(k) +
                            " is empty; its model cannot be trained");
  }
  return out;
}

}  // namespace grapam
