#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmclab/experiment.hpp"

using namespace mmc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const char* kSmallConfig = R"({
  "seed": 3,
  "dataset": {"type": "blobs", "classes": 3, "dim": 8, "per_class": 40, "test_per_class": 20, "spread": 0.08},
  "model": {"hidden": [12], "feature_dim": 4},
  "loss": {"kind": "MMC", "c_mm": 5.0},
  "train": {"epochs": 4, "batch_size": 32, "lr": 0.002},
  "attacks": [
    {"name": "pgd_un", "family": "PGD", "mode": "untargeted", "objective": "ada_un1",
     "epsilon": 0.0627, "step_size": 0.0157, "steps": 5, "seed": 2},
    {"name": "noise", "family": "NOISE", "noise_sigma": 0.05, "seed": 4}
  ],
  "density": {"enabled": true, "grid": [0.5, 1.0, 2.0]}
})";

int run_cli(const std::string& args) {
  std::string cmd = std::string(MMCLAB_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("experiment config parses with strict key checking") {
  ExperimentConfig cfg = ExperimentConfig::from_json_string(kSmallConfig);
  CHECK(cfg.seed == 3);
  CHECK(cfg.dataset.classes == 3);
  CHECK(cfg.model.feature_dim == 4);
  CHECK(cfg.loss.kind == LossKind::Mmc);
  CHECK(cfg.loss.c_mm == 5.0);
  CHECK(cfg.attacks.size() == 2);
  CHECK(cfg.attacks[0].objective == AttackObjective::AdaUn1);
  CHECK(cfg.density.grid.size() == 3);

  CHECK_THROWS_AS(ExperimentConfig::from_json_string("{\"sead\": 1}"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_string("{\"dataset\": {\"type\": \"blobs\", \"claases\": 2}}"),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_string("{\"loss\": {\"kind\": \"MMC\", \"lambda\": 0.5}}"),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_string("{\"loss\": {\"kind\": \"WMMC\"}}"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_string("{\"train\": {\"at\": {\"epsilonn\": 0.1}}}"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_string("{\"train\": {\"epochs\": 0}}"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_string("{\"attacks\": [{\"family\": \"PGD\", \"mode\": \"targeted\", \"objective\": \"ada_un1\"}]}"),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_string("not json at all"), ConfigError);
  // rotation needs image geometry
  CHECK_THROWS_AS(ExperimentConfig::from_json_string("{\"attacks\": [{\"family\": \"ROTATE\"}]}"), ConfigError);
  // duplicate attack names collide in the report directory
  CHECK_THROWS_AS(ExperimentConfig::from_json_string(
                      "{\"attacks\": [{\"family\": \"PGD\", \"name\": \"a\"}, {\"family\": \"NOISE\", \"name\": \"a\"}]}"),
                  ConfigError);
}

TEST_CASE("canonical json round-trips through the parser") {
  ExperimentConfig cfg = ExperimentConfig::from_json_string(kSmallConfig);
  std::string canon = cfg.canonical_json();
  ExperimentConfig back = ExperimentConfig::from_json_string(canon);
  CHECK(back.canonical_json() == canon);
  CHECK(fnv1a_hash(canon) == fnv1a_hash(back.canonical_json()));
}

TEST_CASE("fnv1a matches reference values") {
  CHECK(fnv1a_hash("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a_hash("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("loss heads round-trip through the head checkpoint") {
  fs::path path = fs::temp_directory_path() / "mmclab_head_rt.bin";
  for (LossKind kind : {LossKind::Sce, LossKind::Gsce, LossKind::Lgm, LossKind::Mmlda, LossKind::Center,
                        LossKind::Mmc, LossKind::Emc}) {
    LossSpec spec;
    spec.kind = kind;
    spec.c_mm = 3.0;
    spec.lambda = 0.2;
    spec.alpha = 0.7;
    spec.margin = 1.1;
    auto head = make_loss_head(spec, 6, 4, 55);
    save_head(*head, spec, path);

    LossSpec back_spec;
    auto back = load_head(path, 6, &back_spec);
    CHECK(back->kind() == kind);
    CHECK(back->num_classes() == 4);
    CHECK(back->feature_dim() == 6);
    CHECK(back_spec.kind == spec.kind);

    auto pa = head->parameters();
    auto pb = back->parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
      for (std::size_t j = 0; j < pa[i]->numel(); ++j) CHECK(pa[i]->values()[j] == pb[i]->values()[j]);

    // behavioral equality on a probe feature
    std::vector<double> z{0.1, -0.2, 0.3, 0.4, -0.5, 0.6};
    CHECK(head->loss(z, 1).value == back->loss(z, 1).value);
  }
  fs::remove(path);
}

TEST_CASE("run_experiment writes the full report directory deterministically") {
  ExperimentConfig cfg = ExperimentConfig::from_json_string(kSmallConfig);
  fs::path dir1 = fs::temp_directory_path() / "mmclab_run1";
  fs::path dir2 = fs::temp_directory_path() / "mmclab_run2";
  fs::remove_all(dir1);
  fs::remove_all(dir2);

  ExperimentResult r1 = run_experiment(cfg, dir1);
  ExperimentResult r2 = run_experiment(cfg, dir2);

  for (const char* name : {"manifest.json", "history.csv", "robustness_pgd_un.csv", "robustness_noise.csv",
                           "density.json", "summary.csv"}) {
    CAPTURE(name);
    CHECK(fs::exists(dir1 / name));
    CHECK(slurp(dir1 / name) == slurp(dir2 / name));
  }
  CHECK(fs::exists(dir1 / "model.bin"));
  CHECK(fs::exists(dir1 / "head.bin"));
  CHECK(slurp(dir1 / "model.bin") == slurp(dir2 / "model.bin"));

  CHECK(r1.clean_test_accuracy == r2.clean_test_accuracy);
  REQUIRE(r1.robustness.size() == 2);
  CHECK(r1.robustness[0].second.adversarial_accuracy == r2.robustness[0].second.adversarial_accuracy);

  // attack stage against the stored checkpoint reproduces the attack results
  fs::path dir3 = fs::temp_directory_path() / "mmclab_run3";
  fs::remove_all(dir3);
  ExperimentResult r3 = run_attack_stage(cfg, dir1, dir3);
  CHECK(slurp(dir3 / "robustness_pgd_un.csv") == slurp(dir1 / "robustness_pgd_un.csv"));
  CHECK(r3.clean_test_accuracy == r1.clean_test_accuracy);

  // a different seed changes the trained model outputs
  ExperimentConfig other = cfg;
  other.seed = 4;
  fs::path dir4 = fs::temp_directory_path() / "mmclab_run4";
  fs::remove_all(dir4);
  run_experiment(other, dir4);
  CHECK(slurp(dir4 / "history.csv") != slurp(dir1 / "history.csv"));

  fs::remove_all(dir1);
  fs::remove_all(dir2);
  fs::remove_all(dir3);
  fs::remove_all(dir4);
}

TEST_CASE("density reports cover the quadratic-logit and hyperplane families") {
  // generalized quadratic head: pair groups with the approximation diagnostic
  ExperimentConfig cfg = ExperimentConfig::from_json_string(kSmallConfig);
  cfg.loss = LossSpec{};
  cfg.loss.kind = LossKind::Lgm;
  cfg.loss.margin = 0.5;
  cfg.attacks.clear();
  fs::path dir = fs::temp_directory_path() / "mmclab_run_lgm";
  fs::remove_all(dir);
  run_experiment(cfg, dir);
  std::string doc = slurp(dir / "density.json");
  CHECK(doc.find("pair_groups") != std::string::npos);
  CHECK(doc.find("mean_lse_approximation_gap") != std::string::npos);
  fs::remove_all(dir);

  // pure softmax head: hyperplane contours carry no density supervision
  cfg.loss = LossSpec{};
  cfg.loss.kind = LossKind::Sce;
  fs::path dir2 = fs::temp_directory_path() / "mmclab_run_sce";
  fs::remove_all(dir2);
  run_experiment(cfg, dir2);
  std::string doc2 = slurp(dir2 / "density.json");
  CHECK(doc2.find("no density supervision") != std::string::npos);
  fs::remove_all(dir2);
}

TEST_CASE("training stage tolerates an empty attack list") {
  ExperimentConfig cfg = ExperimentConfig::from_json_string(kSmallConfig);
  cfg.attacks.clear();
  cfg.density.enabled = false;
  fs::path dir = fs::temp_directory_path() / "mmclab_run_noattack";
  fs::remove_all(dir);
  run_experiment(cfg, dir);
  CHECK(fs::exists(dir / "history.csv"));
  CHECK(fs::exists(dir / "summary.csv"));
  CHECK_FALSE(fs::exists(dir / "density.json"));
  fs::remove_all(dir);
}

TEST_CASE("idx ingestion and rotation attacks run end to end") {
  // synthetic image-shaped dataset written through the idx writer
  Dataset blobs = make_blobs(3, 36, 40, 0.08, 17);
  fs::path tr_img = fs::temp_directory_path() / "mmclab_e2e_train_img.idx";
  fs::path tr_lab = fs::temp_directory_path() / "mmclab_e2e_train_lab.idx";
  fs::path te_img = fs::temp_directory_path() / "mmclab_e2e_test_img.idx";
  fs::path te_lab = fs::temp_directory_path() / "mmclab_e2e_test_lab.idx";
  save_idx(blobs, tr_img, tr_lab);
  Dataset test_blobs = make_blobs(3, 36, 15, 0.08, 18);
  save_idx(test_blobs, te_img, te_lab);

  std::string cfg_text = std::string(R"({
    "seed": 2,
    "dataset": {"type": "idx",
      "images": ")") + tr_img.string() + R"(", "labels": ")" + tr_lab.string() +
                         R"(", "test_images": ")" + te_img.string() + R"(", "test_labels": ")" +
                         te_lab.string() + R"(", "max_n": 120, "test_max_n": 45},
    "model": {"hidden": [12], "feature_dim": 4},
    "loss": {"kind": "MMC", "c_mm": 5.0},
    "train": {"epochs": 3, "batch_size": 32},
    "attacks": [
      {"name": "rotate", "family": "ROTATE", "rotate_degrees": 30.0, "seed": 3},
      {"name": "noise", "family": "NOISE", "noise_sigma": 0.05, "seed": 4}
    ],
    "image_rows": 6, "image_cols": 6
  })";
  ExperimentConfig cfg = ExperimentConfig::from_json_string(cfg_text);
  fs::path dir = fs::temp_directory_path() / "mmclab_e2e_idx";
  fs::remove_all(dir);
  ExperimentResult result = run_experiment(cfg, dir);
  CHECK(fs::exists(dir / "robustness_rotate.csv"));
  CHECK(fs::exists(dir / "robustness_noise.csv"));
  REQUIRE(result.robustness.size() == 2);
  CHECK(result.robustness[0].second.evaluated == 45);

  fs::remove_all(dir);
  for (const fs::path& p : {tr_img, tr_lab, te_img, te_lab}) fs::remove(p);
}

TEST_CASE("cli: centers subcommand output and exit codes") {
  fs::path out = fs::temp_directory_path() / "mmclab_cli_centers.json";
  fs::remove(out);
  CHECK(run_cli("centers --cmm 10 --dim 256 --classes 10 --out " + out.string()) == 0);
  REQUIRE(fs::exists(out));
  CenterSet cs = center_set_from_json(slurp(out));
  CHECK(cs.num_classes == 10);
  CHECK(cs.feature_dim == 256);
  CHECK(is_max_mahalanobis(cs));
  fs::remove(out);

  CHECK(run_cli("centers --cmm 1 --dim 10 --classes 300") == 2);
  CHECK(run_cli("centers --cmm -4 --dim 10 --classes 5") == 2);
  CHECK(run_cli("centers") == 2);          // missing required options
  CHECK(run_cli("definitely-not-a-subcommand") == 2);
  CHECK(run_cli("--help") == 0);
}

TEST_CASE("cli: run is byte-deterministic and maps failures to exit codes") {
  fs::path cfg_path = fs::temp_directory_path() / "mmclab_cli_cfg.json";
  {
    std::ofstream os(cfg_path);
    os << kSmallConfig;
  }
  fs::path d1 = fs::temp_directory_path() / "mmclab_cli_run1";
  fs::path d2 = fs::temp_directory_path() / "mmclab_cli_run2";
  fs::remove_all(d1);
  fs::remove_all(d2);

  REQUIRE(run_cli("run --config " + cfg_path.string() + " --out " + d1.string()) == 0);
  REQUIRE(run_cli("run --config " + cfg_path.string() + " --out " + d2.string()) == 0);
  for (const char* name : {"manifest.json", "history.csv", "robustness_pgd_un.csv", "robustness_noise.csv",
                           "density.json", "summary.csv"})
    CHECK(slurp(d1 / name) == slurp(d2 / name));

  // attack and density subcommands against the run directory
  fs::path d3 = fs::temp_directory_path() / "mmclab_cli_attack";
  fs::remove_all(d3);
  CHECK(run_cli("attack --config " + cfg_path.string() + " --model " + d1.string() + " --out " + d3.string()) == 0);
  CHECK(slurp(d3 / "robustness_pgd_un.csv") == slurp(d1 / "robustness_pgd_un.csv"));

  fs::path ds_path = fs::temp_directory_path() / "mmclab_cli_ds.json";
  {
    std::ofstream os(ds_path);
    os << R"({"type": "blobs", "classes": 3, "dim": 8, "per_class": 40, "spread": 0.08})";
  }
  fs::path dj = fs::temp_directory_path() / "mmclab_cli_density.json";
  fs::remove(dj);
  CHECK(run_cli("density --model " + d1.string() + " --dataset " + ds_path.string() +
                " --grid 0.5,1.0 --out " + dj.string()) == 0);
  CHECK(fs::exists(dj));

  // an explicit loss spec overrides the checkpointed head
  fs::path dj2 = fs::temp_directory_path() / "mmclab_cli_density2.json";
  fs::remove(dj2);
  CHECK(run_cli("density --model " + d1.string() + " --loss '{\"kind\":\"MMLDA\",\"c_mm\":5.0}'" +
                " --dataset " + ds_path.string() + " --grid 0.5,1.0 --out " + dj2.string()) == 0);
  CHECK(slurp(dj2).find("MMLDA") != std::string::npos);
  fs::remove(dj2);

  // train-only stage
  fs::path d4 = fs::temp_directory_path() / "mmclab_cli_train";
  fs::remove_all(d4);
  CHECK(run_cli("train --config " + cfg_path.string() + " --out " + d4.string()) == 0);
  CHECK(fs::exists(d4 / "model.bin"));
  CHECK_FALSE(fs::exists(d4 / "robustness_pgd_un.csv"));

  // config errors exit 2
  fs::path bad = fs::temp_directory_path() / "mmclab_cli_bad.json";
  {
    std::ofstream os(bad);
    os << "{\"sead\": 1}";
  }
  CHECK(run_cli("run --config " + bad.string() + " --out " + d1.string()) == 2);
  CHECK(run_cli("run --config /no/such/file.json --out " + d1.string()) == 2);

  // runtime failures exit 3
  fs::path idx_cfg = fs::temp_directory_path() / "mmclab_cli_idx.json";
  {
    std::ofstream os(idx_cfg);
    os << R"({"dataset": {"type": "idx", "images": "/no/such.idx", "labels": "/no/such2.idx",
              "test_images": "/no/such.idx", "test_labels": "/no/such2.idx"},
              "train": {"epochs": 1}})";
  }
  CHECK(run_cli("run --config " + idx_cfg.string() + " --out " + d1.string()) == 3);

  fs::remove(cfg_path);
  fs::remove(ds_path);
  fs::remove(dj);
  fs::remove(bad);
  fs::remove(idx_cfg);
  fs::remove_all(d1);
  fs::remove_all(d2);
  fs::remove_all(d3);
  fs::remove_all(d4);
}
