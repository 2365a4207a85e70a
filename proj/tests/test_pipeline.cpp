#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "grapam/pipeline.hpp"
#include "grapam/toy.hpp"

using namespace grapam;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
  fs::path path;
  TmpDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("grapam_pipe_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
};

ExperimentConfig small_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.out_dir = out_dir;
  cfg.model.architecture = ToyArch::LINEAR;
  cfg.model.vocab = 8;
  cfg.model.seed = 3;
  SynthSpec spec;
  spec.group_count = 3;
  spec.samples_per_group = 12;
  spec.eval_samples_per_group = 4;
  spec.seq_len_min = 8;
  spec.seq_len_max = 16;
  spec.vocab = 8;
  spec.seed = 5;
  cfg.synth = spec;
  cfg.clustering.k = 3;
  cfg.clustering.seed = 17;
  cfg.pft.train.learning_rate = 0.5;
  cfg.pft.train.epochs = 2;
  cfg.pft.train.batch_size = 8;
  return cfg;
}

}  // namespace

TEST_CASE("merge-set enumeration") {
  ExperimentConfig cfg;
  cfg.out_dir = "unused";
  cfg.merge_policy = MergeSetPolicy::ALL_SUBSETS;
  CHECK(enumerate_merge_sets(cfg, 3).size() == 15);  // 2^4 - 1
  CHECK(enumerate_merge_sets(cfg, 1).size() == 3);

  cfg.merge_policy = MergeSetPolicy::ALL_MODELS;
  auto all = enumerate_merge_sets(cfg, 3);
  REQUIRE(all.size() == 1);
  CHECK(all[0] == std::vector<std::string>{"all", "1", "2", "3"});

  cfg.merge_policy = MergeSetPolicy::EXPLICIT;
  cfg.explicit_sets = {{"all"}, {"1", "2"}};
  CHECK(enumerate_merge_sets(cfg, 3) == cfg.explicit_sets);
}

TEST_CASE("config JSON round-trip") {
  TmpDir tmp;
  ExperimentConfig cfg = small_config(tmp.path.string());
  cfg.pft.selector = Selector::parse_word("ALL");
  cfg.merge_policy = MergeSetPolicy::EXPLICIT;
  cfg.explicit_sets = {{"all", "1"}};
  ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.out_dir == cfg.out_dir);
  CHECK(back.synth->samples_per_group == 12);
  CHECK(back.clustering.k == 3);
  CHECK(back.pft.train.learning_rate == 0.5);
  CHECK(back.explicit_sets == cfg.explicit_sets);
}

TEST_CASE("degenerate run: K=1 with M={all} reproduces direct training bit-exactly") {
  TmpDir tmp;
  ExperimentConfig cfg = small_config(tmp.path.string());
  cfg.clustering.k = 1;
  cfg.merge_policy = MergeSetPolicy::EXPLICIT;
  cfg.explicit_sets = {{"all"}};
  RunReport report = run_grapam(cfg);
  REQUIRE(report.turns.size() == 1);
  REQUIRE(report.turns[0].plans.size() == 1);

  // direct theta_all training outside the pipeline
  Checkpoint theta0 = init_model(cfg.model);
  SynthData data = gen_synth(*cfg.synth);
  TrainConfig tcfg = cfg.pft.train;
  tcfg.mask = cfg.pft.selector;
  Checkpoint direct = train(theta0, data.train_manifest, tcfg).model;

  Checkpoint merged = load_checkpoint(report.turns[0].plans[0].path);
  REQUIRE(schema_equal(direct, merged));
  for (const auto& [name, t] : direct.entries)
    CHECK(t.bit_equal(merged.at(name)));
}

TEST_CASE("full sweep emits 15 plans for K=3 and evaluates the models") {
  TmpDir tmp;
  ExperimentConfig cfg = small_config(tmp.path.string());
  RunReport report = run_grapam(cfg);
  REQUIRE(report.turns.size() == 1);
  CHECK(report.turns[0].plans.size() == 15);
  CHECK(report.turns[0].models.size() == 4);  // all + 3 clusters
  // plans are sorted best-first
  for (size_t i = 1; i < report.turns[0].plans.size(); ++i)
    CHECK(report.turns[0].plans[i - 1].loss <= report.turns[0].plans[i].loss);
  CHECK(fs::exists(tmp.path / "report.json"));
  CHECK(fs::exists(tmp.path / "assignment.json"));
}

TEST_CASE("re-running reuses cached artifacts and reproduces results") {
  TmpDir tmp;
  ExperimentConfig cfg = small_config(tmp.path.string());
  cfg.merge_policy = MergeSetPolicy::EXPLICIT;
  cfg.explicit_sets = {{"all", "1", "2", "3"}};
  RunReport first = run_grapam(cfg);
  auto mtime = fs::last_write_time(first.turns[0].models[0].path);
  RunReport second = run_grapam(cfg);
  CHECK(fs::last_write_time(second.turns[0].models[0].path) == mtime);
  CHECK(first.turns[0].plans[0].hash == second.turns[0].plans[0].hash);
  CHECK(first.turns[0].plans[0].loss == second.turns[0].plans[0].loss);
}

TEST_CASE("random clustering method runs end to end") {
  TmpDir tmp;
  ExperimentConfig cfg = small_config(tmp.path.string());
  cfg.clustering.method = ClusterMethod::RANDOM;
  cfg.merge_policy = MergeSetPolicy::ALL_MODELS;
  RunReport report = run_grapam(cfg);
  CHECK(report.turns[0].plans.size() == 1);
}

TEST_CASE("iterative: turns=1 equals a plain run") {
  TmpDir tmp1, tmp2;
  ExperimentConfig cfg1 = small_config(tmp1.path.string());
  cfg1.merge_policy = MergeSetPolicy::ALL_MODELS;
  ExperimentConfig cfg2 = cfg1;
  cfg2.out_dir = tmp2.path.string();
  cfg2.turns = 1;
  RunReport plain = run_grapam(cfg1);
  RunReport iter = run_iterative(cfg2);
  REQUIRE(iter.turns.size() == 1);
  CHECK(iter.turns[0].plans[0].hash == plain.turns[0].plans[0].hash);
}

TEST_CASE("iterative runs multiple turns and can early-stop") {
  TmpDir tmp;
  ExperimentConfig cfg = small_config(tmp.path.string());
  cfg.merge_policy = MergeSetPolicy::ALL_MODELS;
  cfg.turns = 3;
  RunReport report = run_iterative(cfg);
  CHECK(report.turns.size() >= 1);
  CHECK(report.turns.size() <= 3);
  if (report.early_stopped) {
    size_t last = report.turns.size() - 1;
    CHECK(report.turns[last].plans[0].loss >=
          report.turns[last - 1].plans[0].loss);
  }
}

TEST_CASE("heterogeneous merging builds row, column and MERGE ALL plans") {
  TmpDir tmp;
  ExperimentConfig a = small_config(tmp.path.string());
  a.merge_policy = MergeSetPolicy::ALL_MODELS;
  ExperimentConfig b = a;
  b.clustering.method = ClusterMethod::RANDOM;
  b.clustering.seed = 99;

  RunReport report = run_heterogeneous({a, b}, true);
  REQUIRE(report.turns.size() == 1);
  const TurnReport& t = report.turns[0];
  CHECK(t.models.size() == 8);  // 2 configs x (all + 3 clusters)
  size_t rows = 0, cols = 0, merge_all = 0;
  for (const auto& p : t.plans) {
    if (p.members.front().rfind("row:", 0) == 0) ++rows;
    if (p.members.front().rfind("col:", 0) == 0) ++cols;
    if (p.members.front() == "MERGE_ALL") ++merge_all;
  }
  CHECK(rows == 2);
  CHECK(cols == 4);  // "all", "1", "2", "3" appear in both configs
  CHECK(merge_all == 1);
}

TEST_CASE("two identical configs: MERGE ALL equals a row merge") {
  TmpDir tmp;
  ExperimentConfig a = small_config(tmp.path.string());
  a.merge_policy = MergeSetPolicy::ALL_MODELS;
  RunReport report = run_heterogeneous({a, a}, true);
  const TurnReport& t = report.turns[0];
  const PlanEval* row = nullptr;
  const PlanEval* all = nullptr;
  for (const auto& p : t.plans) {
    if (p.members.front() == "row:cfg0") row = &p;
    if (p.members.front() == "MERGE_ALL") all = &p;
  }
  REQUIRE(row);
  REQUIRE(all);
  // duplicate members with uniform weights: same convex combination
  CHECK(all->loss == doctest::Approx(row->loss).epsilon(1e-4));
}

TEST_CASE("heterogeneous merging needs at least two configs") {
  TmpDir tmp;
  ExperimentConfig a = small_config(tmp.path.string());
  CHECK_THROWS_AS(run_heterogeneous({a}, true), Error);
}
