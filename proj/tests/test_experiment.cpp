#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dir/experiment.hpp"

using namespace dir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json mixture_config(const std::string& out_dir) {
  return {{"kind", "rotated_mixture"},
          {"seed", 7},
          {"out_dir", out_dir},
          {"target", 2},
          {"transform_source", "ground_truth"},
          {"train", {{"epochs", 8}, {"batch_size", 32}, {"lr", 0.01}}},
          {"model", {{"hidden", {16}}, {"z_dim", 8}}},
          {"dataset", {{"n_per_class", 40}, {"angles_deg", {0.0, 30.0, 60.0}}}}};
}

json load_report(const std::string& dir) {
  std::ifstream in(dir + "/report.json");
  REQUIRE(in.good());
  json j;
  in >> j;
  return j;
}

struct TmpDir {
  fs::path path;
  explicit TmpDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("config parsing rejects unknown keys everywhere") {
  auto base = mixture_config("x");
  CHECK_NOTHROW(ExperimentConfig::from_json(base));

  auto j = base;
  j["surprise"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), std::invalid_argument);
  j = base;
  j["train"]["learning_rate"] = 0.1;  // must be "lr"
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), std::invalid_argument);
  j = base;
  j["model"]["depth"] = 3;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), std::invalid_argument);
  j = base;
  j["dataset"]["radii"] = {1.0, 2.0};  // circles-only key
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), std::invalid_argument);
}

TEST_CASE("config parsing rejects invalid values") {
  auto base = mixture_config("x");
  auto j = base;
  j["kind"] = "mystery";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), std::invalid_argument);
  j = base;
  j["target"] = "some";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), std::invalid_argument);
  j = base;
  j["transform_source"] = "magic";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), std::invalid_argument);
  j = base;
  j["method"] = "both";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), std::invalid_argument);
  j = base;
  j["train"]["optimizer"] = "lbfgs";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), std::invalid_argument);
  j = base;
  j["train"]["epochs"] = 0;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), std::invalid_argument);
  // learned transforms only make sense with the gan pipeline
  j = base;
  j["transform_source"] = "learned";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), std::invalid_argument);
  j = base;
  j["kind"] = "gan_pipeline";  // still carries ground_truth transforms
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), std::invalid_argument);
}

TEST_CASE("resolved config echo reparses to the same config") {
  auto c = ExperimentConfig::from_json(mixture_config("echo"));
  auto echoed = ExperimentConfig::from_json(c.to_json());
  CHECK(echoed.to_json() == c.to_json());
  CHECK(echoed.seed == 7);
  CHECK(echoed.target == 2);
  CHECK(echoed.hidden == std::vector<int>{16});
}

TEST_CASE("run writes a complete, reparseable artifact set") {
  TmpDir tmp("dir_exp_run");
  auto c = ExperimentConfig::from_json(mixture_config(tmp.str()));
  auto res = run_experiment(c);
  CHECK(res.target_domain == 2);
  CHECK(res.target_accuracy >= 0.0);

  auto report = load_report(tmp.str());
  CHECK(report.contains("timestamp"));
  CHECK(report["config"]["seed"] == 7);
  CHECK(report["target"]["domain"] == 2);
  CHECK(report["alignment"]["marginal_mmd2"].size() == 1);  // sources 0 and 1
  CHECK(report["seeds"].contains("train"));

  // checkpoint reloads and reproduces the reported target accuracy
  TrainedModel m = TrainedModel::load(tmp.str() + "/model.json");
  auto domains = build_domains(c);
  CHECK(accuracy(m, domains[2]) == doctest::Approx(res.target_accuracy).epsilon(1e-12));

  std::ifstream curves(tmp.str() + "/curves.csv");
  REQUIRE(curves.good());
  std::string header;
  std::getline(curves, header);
  CHECK(header == "epoch,cls_loss,inv_loss,acc");
  int rows = 0;
  for (std::string line; std::getline(curves, line);) ++rows;
  CHECK(rows == 8);

  CHECK(fs::exists(tmp.str() + "/scatter.csv"));
  for (int d = 0; d < 3; ++d)
    CHECK(fs::exists(tmp.str() + "/scatter_d" + std::to_string(d) + ".svg"));
}

TEST_CASE("identical seed gives byte-identical artifacts modulo the timestamp") {
  TmpDir t1("dir_exp_det1"), t2("dir_exp_det2");
  auto cfg = mixture_config(t1.str());
  run_experiment(ExperimentConfig::from_json(cfg));
  cfg["out_dir"] = t2.str();
  run_experiment(ExperimentConfig::from_json(cfg));

  auto r1 = load_report(t1.str()), r2 = load_report(t2.str());
  r1.erase("timestamp");
  r2.erase("timestamp");
  r1["config"].erase("out_dir");
  r2["config"].erase("out_dir");
  CHECK(r1.dump() == r2.dump());

  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(t1.str() + "/curves.csv") == slurp(t2.str() + "/curves.csv"));
  CHECK(slurp(t1.str() + "/scatter.csv") == slurp(t2.str() + "/scatter.csv"));
}

TEST_CASE("swapped-arc circles with identity transforms show the failure mode") {
  TmpDir tmp("dir_exp_circles");
  json cfg = {{"kind", "circles"},
              {"seed", 3},
              {"out_dir", tmp.str()},
              {"target", 1},
              {"transform_source", "identity"},
              {"train", {{"epochs", 30}, {"batch_size", 32}, {"lr", 0.01}}},
              {"model", {{"hidden", {16}}, {"z_dim", 8}}},
              {"dataset",
               {{"n_per_class", 80},
                {"radii", {2.0, 3.0}},
                {"arc_offsets", {0.0, 3.14159265358979}},
                {"num_classes", 2}}}};
  auto res = run_experiment(ExperimentConfig::from_json(cfg));
  CHECK(res.train_report.final_epoch().accuracy > 0.9);  // fits its source
  CHECK(res.target_accuracy <= 0.6);                     // fails to transfer
}

TEST_CASE("sweep produces one report per held-out domain plus an aggregate") {
  TmpDir tmp("dir_exp_sweep");
  auto cfg = mixture_config(tmp.str());
  cfg["target"] = "all";
  cfg["train"]["epochs"] = 4;
  auto results = sweep_experiment(ExperimentConfig::from_json(cfg));
  REQUIRE(results.size() == 3);
  for (int d = 0; d < 3; ++d) {
    CHECK(results[d].target_domain == d);
    auto rep = load_report(tmp.str() + "/target_" + std::to_string(d));
    CHECK(rep["target"]["domain"] == d);
  }
  std::ifstream agg(tmp.str() + "/aggregate.csv");
  REQUIRE(agg.good());
  std::string header, row;
  std::getline(agg, header);
  std::getline(agg, row);
  CHECK(header == "d0,d1,d2,Average");
  double a0, a1, a2, avg;
  char comma;
  std::istringstream(row) >> a0 >> comma >> a1 >> comma >> a2 >> comma >> avg;
  CHECK(avg == doctest::Approx((a0 + a1 + a2) / 3.0).epsilon(1e-12));
}

TEST_CASE("sweep with a single domain is a config error") {
  auto cfg = mixture_config("never");
  cfg["dataset"]["angles_deg"] = {0.0};
  cfg["target"] = "all";
  CHECK_THROWS_AS(sweep_experiment(ExperimentConfig::from_json(cfg)), std::invalid_argument);
}

TEST_CASE("missing mnist files surface as data errors") {
  TmpDir tmp("dir_exp_mnist");
  json cfg = {{"kind", "rotated_mnist"},
              {"seed", 1},
              {"out_dir", tmp.str()},
              {"target", 0},
              {"dataset", {{"data_dir", tmp.str() + "/nowhere"}, {"per_class", 5}}}};
  CHECK_THROWS_AS(run_experiment(ExperimentConfig::from_json(cfg)), DataError);
}

TEST_CASE("gan pipeline runs end to end with learned transforms") {
  TmpDir tmp("dir_exp_gan");
  json cfg = {{"kind", "gan_pipeline"},
              {"seed", 5},
              {"out_dir", tmp.str()},
              {"target", 2},
              {"transform_source", "learned"},
              {"train", {{"epochs", 5}, {"batch_size", 32}, {"lr", 0.01}}},
              {"gan", {{"iterations", 200}, {"batch", 32}, {"lr", 1e-3}}},
              {"model", {{"hidden", {16}}, {"z_dim", 8}}},
              {"dataset", {{"n_per_class", 30}, {"angles_deg", {0.0, 30.0, 60.0}}}}};
  auto res = run_experiment(ExperimentConfig::from_json(cfg));
  CHECK(res.target_domain == 2);
  CHECK(fs::exists(tmp.str() + "/gan.json"));
  CHECK(fs::exists(tmp.str() + "/gan_curves.csv"));
  Generator g = Generator::load(tmp.str() + "/gan.json");
  CHECK(g.domain_ids() == std::vector<int>{0, 1});  // sources only
}

TEST_CASE("missing target domain id is a config error") {
  auto cfg = mixture_config("never");
  cfg["target"] = 9;
  CHECK_THROWS_AS(run_experiment(ExperimentConfig::from_json(cfg)), std::invalid_argument);
}
