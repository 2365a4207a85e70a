#include "grapam/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "grapam/wer.hpp"

namespace grapam {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

uint64_t fnv64(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t manifest_hash(const Manifest& m) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& rec : m.records) h = fnv64(rec.raw_json + "\n", h);
  return h;
}

std::string hex(uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

Selector selector_from_json(const json& j) {
  if (j.is_string()) return Selector::parse_word(j.get<std::string>());
  return Selector::parse(j.get<std::vector<std::string>>());
}

json selector_to_json(const Selector& sel) {
  auto cfg = sel.to_config();
  if (cfg.size() == 1 && (cfg[0] == "ALL" || cfg[0] == "FFN" || cfg[0] == "ATTN"))
    return cfg[0];
  return cfg;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open experiment config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig cfg;
  cfg.name = j.value("name", std::string("grapam"));
  cfg.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("model")) {
    const json& m = j["model"];
    cfg.model.architecture = toy_arch_from_string(m.value("architecture", "LINEAR"));
    cfg.model.vocab = m.value("vocab", size_t(16));
    cfg.model.width = m.value("width", size_t(8));
    cfg.model.layers = m.value("layers", size_t(2));
    cfg.model.heads = m.value("heads", size_t(2));
    cfg.model.seed = m.value("seed", uint64_t(0));
  }
  if (j.contains("base_checkpoint"))
    cfg.base_checkpoint = j["base_checkpoint"].get<std::string>();
  if (j.contains("synth")) {
    const json& s = j["synth"];
    SynthSpec spec;
    spec.group_count = s.value("group_count", size_t(3));
    spec.seed = s.value("seed", uint64_t(0));
    spec.samples_per_group = s.value("samples_per_group", size_t(64));
    spec.eval_samples_per_group = s.value("eval_samples_per_group", size_t(16));
    spec.seq_len_min = s.value("seq_len_min", size_t(24));
    spec.seq_len_max = s.value("seq_len_max", size_t(48));
    spec.label_noise = s.value("label_noise", 0.0);
    spec.vocab = s.value("vocab", size_t(16));
    cfg.synth = spec;
  } else {
    cfg.train_manifest = j.at("train_manifest").get<std::string>();
    cfg.eval_manifest = j.at("eval_manifest").get<std::string>();
    cfg.embeddings = j.value("embeddings", std::string());
  }
  if (j.contains("clustering")) {
    const json& c = j["clustering"];
    std::string method = c.value("method", "kmeans");
    if (method == "kmeans") cfg.clustering.method = ClusterMethod::KMEANS;
    else if (method == "random") cfg.clustering.method = ClusterMethod::RANDOM;
    else throw Error("unknown clustering method: \"" + method + "\"");
    cfg.clustering.k = c.value("k", size_t(3));
    cfg.clustering.seed = c.value("seed", uint64_t(17));
  }
  if (j.contains("pft")) {
    const json& p = j["pft"];
    if (p.contains("selector")) cfg.pft.selector = selector_from_json(p["selector"]);
    cfg.pft.train.learning_rate = p.value("learning_rate", 1e-5);
    cfg.pft.train.batch_size = p.value("batch_size", size_t(16));
    cfg.pft.train.epochs = p.value("epochs", size_t(1));
    std::string opt = p.value("optimizer", "SGD");
    if (opt == "SGD") cfg.pft.train.optimizer = ToyOptimizer::SGD;
    else if (opt == "ADAM") cfg.pft.train.optimizer = ToyOptimizer::ADAM;
    else throw Error("unknown optimizer: \"" + opt + "\"");
    cfg.pft.train.seed = p.value("seed", uint64_t(0));
    cfg.pft.train.mask = cfg.pft.selector;
  }
  if (j.contains("merge_sets")) {
    const json& ms = j["merge_sets"];
    if (ms.is_string()) {
      std::string s = ms.get<std::string>();
      if (s == "all_subsets") cfg.merge_policy = MergeSetPolicy::ALL_SUBSETS;
      else if (s == "all_models") cfg.merge_policy = MergeSetPolicy::ALL_MODELS;
      else throw Error("unknown merge-set policy: \"" + s + "\"");
    } else {
      cfg.merge_policy = MergeSetPolicy::EXPLICIT;
      cfg.explicit_sets = ms.get<std::vector<std::vector<std::string>>>();
    }
  }
  cfg.turns = j.value("turns", size_t(1));
  cfg.validate();
  return cfg;
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["name"] = name;
  j["out_dir"] = out_dir;
  j["model"] = {{"architecture", to_string(model.architecture)},
                {"vocab", model.vocab},
                {"width", model.width},
                {"layers", model.layers},
                {"heads", model.heads},
                {"seed", model.seed}};
  if (base_checkpoint) j["base_checkpoint"] = *base_checkpoint;
  if (synth) {
    j["synth"] = {{"group_count", synth->group_count},
                  {"seed", synth->seed},
                  {"samples_per_group", synth->samples_per_group},
                  {"eval_samples_per_group", synth->eval_samples_per_group},
                  {"seq_len_min", synth->seq_len_min},
                  {"seq_len_max", synth->seq_len_max},
                  {"label_noise", synth->label_noise},
                  {"vocab", synth->vocab}};
  } else {
    j["train_manifest"] = train_manifest;
    j["eval_manifest"] = eval_manifest;
    j["embeddings"] = embeddings;
  }
  j["clustering"] = {
      {"method", clustering.method == ClusterMethod::KMEANS ? "kmeans" : "random"},
      {"k", clustering.k},
      {"seed", clustering.seed}};
  j["pft"] = {{"selector", selector_to_json(pft.selector)},
              {"learning_rate", pft.train.learning_rate},
              {"batch_size", pft.train.batch_size},
              {"epochs", pft.train.epochs},
              {"optimizer", pft.train.optimizer == ToyOptimizer::SGD ? "SGD" : "ADAM"},
              {"seed", pft.train.seed}};
  switch (merge_policy) {
    case MergeSetPolicy::ALL_SUBSETS: j["merge_sets"] = "all_subsets"; break;
    case MergeSetPolicy::ALL_MODELS: j["merge_sets"] = "all_models"; break;
    case MergeSetPolicy::EXPLICIT: j["merge_sets"] = explicit_sets; break;
  }
  j["turns"] = turns;
  return j.dump(2);
}

void ExperimentConfig::validate() const {
  if (out_dir.empty()) throw Error("experiment out_dir is required");
  if (clustering.k < 1) throw Error("cluster count must be >= 1");
  if (turns < 1) throw Error("turns must be >= 1");
  model.validate();
  if (synth) synth->validate();
  for (const auto& set : explicit_sets)
    if (set.empty()) throw Error("explicit merge sets must be non-empty");
}

std::vector<std::vector<std::string>> enumerate_merge_sets(
    const ExperimentConfig& cfg, size_t K) {
  std::vector<std::string> members{"all"};
  for (size_t k = 1; k <= K; ++k) members.push_back(std::to_string(k));

  switch (cfg.merge_policy) {
    case MergeSetPolicy::ALL_MODELS:
      return {members};
    case MergeSetPolicy::EXPLICIT:
      return cfg.explicit_sets;
    case MergeSetPolicy::ALL_SUBSETS: {
      std::vector<std::vector<std::string>> out;
      size_t n = members.size();
      for (size_t bits = 1; bits < (size_t(1) << n); ++bits) {
        std::vector<std::string> set;
        for (size_t i = 0; i < n; ++i)
          if (bits & (size_t(1) << i)) set.push_back(members[i]);
        out.push_back(std::move(set));
      }
      return out;
    }
  }
  return {};
}

namespace {

struct Stage {
  fs::path out_dir;
  fs::path artifacts;

  explicit Stage(const std::string& dir) : out_dir(dir), artifacts(fs::path(dir) / "artifacts") {
    fs::create_directories(artifacts);
  }

  // content-addressed training: reuse the artifact when its key matches
  Checkpoint train_cached(const Checkpoint& base, const Manifest& data,
                          const TrainConfig& tcfg, const std::string& tag,
                          std::string* path_out) {
    std::ostringstream key;
    key << content_hash(base) << "|" << manifest_hash(data) << "|"
        << join(tcfg.mask.to_config(), ",") << "|" << tcfg.learning_rate << "|"
        << tcfg.batch_size << "|" << tcfg.epochs << "|"
        << (tcfg.optimizer == ToyOptimizer::SGD ? "SGD" : "ADAM") << "|"
        << tcfg.seed;
    fs::path p = artifacts / ("train_" + hex(fnv64(key.str())) + ".ckpt");
    if (path_out) *path_out = p.string();
    if (fs::exists(p)) return load_checkpoint(p.string());
    TrainResult res = train(base, data, tcfg);
    res.model.meta["trained.on"] = tag;
    save_checkpoint(res.model, p.string());
    return std::move(res.model);
  }

  Checkpoint merge_cached(const std::vector<std::pair<std::string, const Checkpoint*>>& members,
                          const Selector& scope, const Checkpoint* base,
                          std::string* path_out, MergeReport* report_out) {
    MergePlan plan;
    for (const auto& [id, ckpt] : members) plan.members.push_back({id, ckpt});
    plan.weights = uniform_weights(members.size());
    plan.scope = scope;
    plan.base = base;

    std::ostringstream key;
    for (const auto& [id, ckpt] : members)
      key << id << "=" << content_hash(*ckpt) << ";";
    key << join(scope.to_config(), ",");
    fs::path p = artifacts / ("merge_" + hex(fnv64(key.str())) + ".ckpt");
    if (path_out) *path_out = p.string();
    auto [merged, report] = merge(plan);
    if (report_out) *report_out = report;
    if (!fs::exists(p)) save_checkpoint(merged, p.string());
    return std::move(merged);
  }
};

struct EvalContext {
  Manifest eval_manifest;
  std::vector<TranscriptPair> refs;  // hypothesis filled per model

  void prepare() {
    for (const auto& utt : manifest_utterances(eval_manifest)) {
      TranscriptPair p;
      p.id = utt.id;
      for (size_t t : utt.target) p.reference.push_back(std::to_string(t));
      refs.push_back(std::move(p));
    }
  }

  std::pair<double, double> evaluate(const Checkpoint& model) {
    double loss = eval_loss(model, eval_manifest);
    auto hyps = decode(model, eval_manifest);
    std::vector<TranscriptPair> pairs = refs;
    for (size_t i = 0; i < pairs.size(); ++i)
      pairs[i].hypothesis = normalize_tokens(hyps[i].second);
    WerReport wr = corpus_wer(pairs);
    return {loss, wr.wer};
  }
};

struct StageData {
  Manifest train_manifest;
  Manifest eval_manifest;
  EmbeddingSet embeddings;
};

StageData load_stage_data(const ExperimentConfig& cfg) {
  StageData d;
  if (cfg.synth) {
    SynthData s = gen_synth(*cfg.synth);
    d.train_manifest = std::move(s.train_manifest);
    d.eval_manifest = std::move(s.eval_manifest);
    d.embeddings = std::move(s.embeddings);
  } else {
    d.train_manifest = load_manifest(cfg.train_manifest);
    d.eval_manifest = load_manifest(cfg.eval_manifest);
    if (!cfg.embeddings.empty()) d.embeddings = load_embeddings(cfg.embeddings);
  }
  return d;
}

ClusterAssignment cluster_stage(const ExperimentConfig& cfg, const StageData& data) {
  if (cfg.clustering.method == ClusterMethod::RANDOM) {
    std::vector<std::string> ids;
    for (const auto& rec : data.train_manifest.records) ids.push_back(rec.id);
    const EmbeddingSet* emb =
        data.embeddings.count() > 0 ? &data.embeddings : nullptr;
    return random_assign(ids, cfg.clustering.k, cfg.clustering.seed, emb);
  }
  if (data.embeddings.count() == 0)
    throw Error("k-means clustering requires embeddings");
  return kmeans(data.embeddings, cfg.clustering.k, cfg.clustering.seed);
}

struct TrainedSet {
  std::map<std::string, Checkpoint> models;  // "all", "1".."K"
  std::map<std::string, std::string> paths;
  std::vector<std::string> dropped;          // empty-cluster models
};

TrainedSet train_stage(const ExperimentConfig& cfg, Stage& stage,
                       const Checkpoint& theta0, const StageData& data,
                       const ClusterAssignment& assign,
                       std::vector<std::string>* notes) {
  std::vector<std::string> warnings;
  std::vector<Manifest> splits = split_manifest(assign, data.train_manifest, &warnings);
  if (notes)
    notes->insert(notes->end(), warnings.begin(), warnings.end());

  TrainConfig tcfg = cfg.pft.train;
  tcfg.mask = cfg.pft.selector;

  TrainedSet out;
  std::string path;
  out.models["all"] = stage.train_cached(theta0, data.train_manifest, tcfg, "all", &path);
  out.paths["all"] = path;
  for (size_t k = 0; k < splits.size(); ++k) {
    std::string id = std::to_string(k + 1);
    if (splits[k].records.empty()) {
      out.dropped.push_back(id);
      continue;
    }
    out.models[id] =
        stage.train_cached(theta0, splits[k], tcfg, "cluster-" + id, &path);
    out.paths[id] = path;
  }
  return out;
}

TurnReport sweep_stage(const ExperimentConfig& cfg, Stage& stage,
                       const TrainedSet& trained, EvalContext& eval_ctx,
                       size_t K, size_t turn) {
  TurnReport report;
  report.turn = turn;

  for (const auto& [id, model] : trained.models) {
    ModelEval me;
    me.id = id;
    auto [loss, wer] = eval_ctx.evaluate(model);
    me.loss = loss;
    me.wer = wer;
    me.hash = content_hash(model);
    me.path = trained.paths.at(id);
    report.models.push_back(std::move(me));
  }

  for (const auto& set : enumerate_merge_sets(cfg, K)) {
    bool skip = false;
    for (const auto& id : set) {
      if (!trained.models.count(id)) {
        report.notes.push_back("merge set {" + join(set, ",") +
                               "} dropped: model \"" + id + "\" unavailable");
        skip = true;
        break;
      }
    }
    if (skip) continue;
    std::vector<std::pair<std::string, const Checkpoint*>> members;
    for (const auto& id : set) members.emplace_back(id, &trained.models.at(id));
    PlanEval pe;
    pe.members = set;
    Checkpoint merged =
        stage.merge_cached(members, Selector::all(), nullptr, &pe.path, nullptr);
    auto [loss, wer] = eval_ctx.evaluate(merged);
    pe.loss = loss;
    pe.wer = wer;
    pe.hash = content_hash(merged);
    report.plans.push_back(std::move(pe));
  }
  std::stable_sort(report.plans.begin(), report.plans.end(),
                   [](const PlanEval& a, const PlanEval& b) { return a.loss < b.loss; });
  return report;
}

void write_report(const RunReport& report, const std::string& out_dir) {
  {
    std::ofstream f(fs::path(out_dir) / "report.json");
    f << report.to_json();
  }
  {
    std::ofstream f(fs::path(out_dir) / "report.txt");
    f << report.to_table();
  }
}

}  // namespace

const PlanEval& RunReport::best() const {
  if (turns.empty() || turns.back().plans.empty())
    throw Error("run produced no merge plans");
  const TurnReport* best_turn = &turns.front();
  for (const auto& t : turns)
    if (!t.plans.empty() &&
        (best_turn->plans.empty() || t.plans.front().loss < best_turn->plans.front().loss))
      best_turn = &t;
  return best_turn->plans.front();
}

std::string RunReport::to_json() const {
  json j;
  j["early_stopped"] = early_stopped;
  j["turns"] = json::array();
  for (const auto& t : turns) {
    json jt;
    jt["turn"] = t.turn;
    jt["models"] = json::array();
    for (const auto& m : t.models)
      jt["models"].push_back({{"id", m.id},
                              {"loss", m.loss},
                              {"wer", m.wer},
                              {"hash", hex(m.hash)},
                              {"path", m.path}});
    jt["plans"] = json::array();
    for (const auto& p : t.plans)
      jt["plans"].push_back({{"members", p.members},
                             {"loss", p.loss},
                             {"wer", p.wer},
                             {"hash", hex(p.hash)},
                             {"path", p.path}});
    jt["notes"] = t.notes;
    j["turns"].push_back(std::move(jt));
  }
  return j.dump(2);
}

std::string RunReport::to_table() const {
  std::ostringstream os;
  for (const auto& t : turns) {
    os << "=== turn " << t.turn << " ===\n";
    os << std::left << std::setw(28) << "merge set" << std::right
       << std::setw(12) << "loss" << std::setw(12) << "wer" << "\n";
    for (const auto& p : t.plans) {
      os << std::left << std::setw(28) << ("{" + join(p.members, ",") + "}")
         << std::right << std::fixed << std::setprecision(4) << std::setw(12)
         << p.loss << std::setw(12) << p.wer << "\n";
    }
    for (const auto& n : t.notes) os << "note: " << n << "\n";
  }
  if (early_stopped) os << "early stop: metric failed to improve\n";
  return os.str();
}

RunReport run_grapam(const ExperimentConfig& cfg) {
  cfg.validate();
  Stage stage(cfg.out_dir);
  Checkpoint theta0 = cfg.base_checkpoint ? load_checkpoint(*cfg.base_checkpoint)
                                          : init_model(cfg.model);
  StageData data = load_stage_data(cfg);
  ClusterAssignment assign = cluster_stage(cfg, data);

  {
    json j;
    j["K"] = assign.K;
    j["seed"] = assign.seed;
    if (assign.objective) j["objective"] = *assign.objective;
    j["labels"] = assign.labels;
    std::ofstream f(fs::path(cfg.out_dir) / "assignment.json");
    f << j.dump(2);
  }

  EvalContext eval_ctx;
  eval_ctx.eval_manifest = data.eval_manifest;
  eval_ctx.prepare();

  RunReport report;
  TurnReport turn;
  TrainedSet trained =
      train_stage(cfg, stage, theta0, data, assign, &turn.notes);
  TurnReport swept = sweep_stage(cfg, stage, trained, eval_ctx, assign.K, 1);
  swept.notes.insert(swept.notes.begin(), turn.notes.begin(), turn.notes.end());
  report.turns.push_back(std::move(swept));
  write_report(report, cfg.out_dir);
  return report;
}

RunReport run_iterative(const ExperimentConfig& cfg) {
  cfg.validate();
  Stage stage(cfg.out_dir);
  Checkpoint base = cfg.base_checkpoint ? load_checkpoint(*cfg.base_checkpoint)
                                        : init_model(cfg.model);
  StageData data = load_stage_data(cfg);
  ClusterAssignment assign = cluster_stage(cfg, data);

  EvalContext eval_ctx;
  eval_ctx.eval_manifest = data.eval_manifest;
  eval_ctx.prepare();

  RunReport report;
  double prev_best = std::numeric_limits<double>::infinity();
  for (size_t turn = 1; turn <= cfg.turns; ++turn) {
    TurnReport tr;
    TrainedSet trained = train_stage(cfg, stage, base, data, assign, &tr.notes);
    TurnReport swept = sweep_stage(cfg, stage, trained, eval_ctx, assign.K, turn);
    swept.notes.insert(swept.notes.begin(), tr.notes.begin(), tr.notes.end());
    report.turns.push_back(swept);
    if (swept.plans.empty()) break;
    double best = swept.plans.front().loss;
    if (turn > 1 && best >= prev_best) {
      report.early_stopped = true;
      break;
    }
    prev_best = best;
    // best merged checkpoint becomes the pre-trained model of the next turn
    base = load_checkpoint(swept.plans.front().path);
  }
  write_report(report, cfg.out_dir);
  return report;
}

RunReport run_heterogeneous(const std::vector<ExperimentConfig>& cfgs,
                            bool merge_all) {
  if (cfgs.size() < 2)
    throw Error("heterogeneous merging requires at least two configs");
  for (const auto& c : cfgs) c.validate();

  Stage stage(cfgs.front().out_dir);
  Checkpoint theta0 = cfgs.front().base_checkpoint
                          ? load_checkpoint(*cfgs.front().base_checkpoint)
                          : init_model(cfgs.front().model);
  StageData data = load_stage_data(cfgs.front());

  EvalContext eval_ctx;
  eval_ctx.eval_manifest = data.eval_manifest;
  eval_ctx.prepare();

  RunReport report;
  TurnReport turn;
  turn.turn = 1;

  // stages 1-3 per config; every config shares theta0 and the dataset
  std::vector<TrainedSet> rows;
  std::vector<size_t> row_k;
  for (size_t r = 0; r < cfgs.size(); ++r) {
    ClusterAssignment assign = cluster_stage(cfgs[r], data);
    TrainedSet trained =
        train_stage(cfgs[r], stage, theta0, data, assign, &turn.notes);
    for (const auto& [id, model] : trained.models) {
      ModelEval me;
      me.id = "cfg" + std::to_string(r) + ":" + id;
      auto [loss, wer] = eval_ctx.evaluate(model);
      me.loss = loss;
      me.wer = wer;
      me.hash = content_hash(model);
      me.path = trained.paths.at(id);
      turn.models.push_back(std::move(me));
    }
    row_k.push_back(assign.K);
    rows.push_back(std::move(trained));
  }

  auto eval_plan = [&](const std::string& label,
                       const std::vector<std::pair<std::string, const Checkpoint*>>& members) {
    PlanEval pe;
    pe.members = {label};
    for (const auto& [id, ckpt] : members) pe.members.push_back(id);
    Checkpoint merged =
        stage.merge_cached(members, Selector::all(), nullptr, &pe.path, nullptr);
    auto [loss, wer] = eval_ctx.evaluate(merged);
    pe.loss = loss;
    pe.wer = wer;
    pe.hash = content_hash(merged);
    turn.plans.push_back(std::move(pe));
  };

  // per-row merges: all models of one config
  for (size_t r = 0; r < rows.size(); ++r) {
    std::vector<std::pair<std::string, const Checkpoint*>> members;
    for (const auto& [id, model] : rows[r].models)
      members.emplace_back("cfg" + std::to_string(r) + ":" + id, &model);
    eval_plan("row:cfg" + std::to_string(r), members);
  }

  // per-column merges: the same member id across configs
  {
    std::set<std::string> ids;
    for (const auto& row : rows)
      for (const auto& [id, model] : row.models) ids.insert(id);
    for (const auto& id : ids) {
      std::vector<std::pair<std::string, const Checkpoint*>> members;
      for (size_t r = 0; r < rows.size(); ++r) {
        auto it = rows[r].models.find(id);
        if (it != rows[r].models.end())
          members.emplace_back("cfg" + std::to_string(r) + ":" + id, &it->second);
      }
      if (members.size() >= 2) eval_plan("col:" + id, members);
    }
  }

  if (merge_all) {
    std::vector<std::pair<std::string, const Checkpoint*>> members;
    for (size_t r = 0; r < rows.size(); ++r)
      for (const auto& [id, model] : rows[r].models)
        members.emplace_back("cfg" + std::to_string(r) + ":" + id, &model);
    eval_plan("MERGE_ALL", members);
  }

  std::stable_sort(turn.plans.begin(), turn.plans.end(),
                   [](const PlanEval& a, const PlanEval& b) { return a.loss < b.loss; });
  report.turns.push_back(std::move(turn));
  write_report(report, cfgs.front().out_dir);
  return report;
}

}  // namespace grapam
