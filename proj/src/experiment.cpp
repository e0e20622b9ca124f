#include "dir/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace dir {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& context) {
  if (!j.is_object())
    throw std::invalid_argument("config: " + context + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw std::invalid_argument("config: unknown key \"" + key + "\" in " + context);
}

TrainConfig parse_train(const json& j) {
  check_keys(j, {"epochs", "batch_size", "optimizer", "lr", "momentum", "weight_decay",
                 "invariance_weight"},
             "train");
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.invariance_weight = j.value("invariance_weight", c.invariance_weight);
  const std::string opt = j.value("optimizer", std::string("adam"));
  if (opt == "adam") {
    AdamConfig a;
    a.lr = j.value("lr", a.lr);
    c.optimizer = a;
  } else if (opt == "sgd") {
    SgdConfig s;
    s.lr = j.value("lr", s.lr);
    s.momentum = j.value("momentum", s.momentum);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    c.optimizer = s;
  } else {
    throw std::invalid_argument("config: optimizer must be \"adam\" or \"sgd\"");
  }
  return c;
}

GanConfig parse_gan(const json& j) {
  check_keys(j, {"iterations", "batch", "lr", "w_adv", "w_cls", "w_rec"}, "gan");
  GanConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.batch = j.value("batch", c.batch);
  c.optimizer.lr = j.value("lr", c.optimizer.lr);
  c.w_adv = j.value("w_adv", c.w_adv);
  c.w_cls = j.value("w_cls", c.w_cls);
  c.w_rec = j.value("w_rec", c.w_rec);
  return c;
}

std::string kind_name(ExperimentConfig::Kind k) {
  switch (k) {
    case ExperimentConfig::Kind::circles: return "circles";
    case ExperimentConfig::Kind::rotated_mixture: return "rotated_mixture";
    case ExperimentConfig::Kind::rotated_mnist: return "rotated_mnist";
    case ExperimentConfig::Kind::gan_pipeline: return "gan_pipeline";
  }
  return "?";
}

std::string source_name(ExperimentConfig::TransformSource s) {
  switch (s) {
    case ExperimentConfig::TransformSource::ground_truth: return "ground_truth";
    case ExperimentConfig::TransformSource::learned: return "learned";
    case ExperimentConfig::TransformSource::identity: return "identity";
  }
  return "?";
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j,
             {"kind", "seed", "out_dir", "target", "transform_source", "method", "train", "gan",
              "model", "dataset"},
             "top level");
  ExperimentConfig c;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "circles")
    c.kind = Kind::circles;
  else if (kind == "rotated_mixture")
    c.kind = Kind::rotated_mixture;
  else if (kind == "rotated_mnist")
    c.kind = Kind::rotated_mnist;
  else if (kind == "gan_pipeline")
    c.kind = Kind::gan_pipeline;
  else
    throw std::invalid_argument("config: unknown kind \"" + kind + "\"");

  c.seed = j.value("seed", std::uint64_t{0});
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("target")) {
    if (j["target"].is_string()) {
      if (j["target"].get<std::string>() != "all")
        throw std::invalid_argument("config: target must be a domain id or \"all\"");
      c.target_all = true;
    } else {
      c.target = j["target"].get<int>();
    }
  }
  const std::string src = j.value("transform_source", std::string("ground_truth"));
  if (src == "ground_truth")
    c.transform_source = TransformSource::ground_truth;
  else if (src == "learned")
    c.transform_source = TransformSource::learned;
  else if (src == "identity")
    c.transform_source = TransformSource::identity;
  else
    throw std::invalid_argument("config: unknown transform_source \"" + src + "\"");
  c.method = j.value("method", c.method);
  if (c.method != "dir" && c.method != "deepall")
    throw std::invalid_argument("config: method must be \"dir\" or \"deepall\"");

  if (j.contains("train")) c.train = parse_train(j["train"]);
  if (j.contains("gan")) c.gan = parse_gan(j["gan"]);
  if (j.contains("model")) {
    check_keys(j["model"], {"hidden", "z_dim", "conv_c1", "conv_c2"}, "model");
    c.hidden = j["model"].value("hidden", c.hidden);
    c.z_dim = j["model"].value("z_dim", c.z_dim);
    c.conv_c1 = j["model"].value("conv_c1", c.conv_c1);
    c.conv_c2 = j["model"].value("conv_c2", c.conv_c2);
  }

  const json ds = j.value("dataset", json::object());
  switch (c.kind) {
    case Kind::circles:
      check_keys(ds, {"n_per_class", "radii", "arc_offsets", "num_classes"}, "dataset");
      c.n_per_class = ds.value("n_per_class", c.n_per_class);
      c.radii = ds.value("radii", std::vector<double>{2.0, 3.0});
      c.arc_offsets = ds.value("arc_offsets", std::vector<double>(c.radii.size(), 0.0));
      c.num_classes = ds.value("num_classes", c.num_classes);
      break;
    case Kind::rotated_mixture:
    case Kind::gan_pipeline: {
      check_keys(ds, {"n_per_class", "angles_deg", "components"}, "dataset");
      c.n_per_class = ds.value("n_per_class", c.n_per_class);
      c.angles_deg = ds.value("angles_deg", std::vector<double>{0.0, 30.0, 60.0});
      if (ds.contains("components")) {
        c.components.clear();
        for (const auto& comp : ds["components"]) {
          check_keys(comp, {"weight", "mean", "cov"}, "dataset.components[]");
          DensityModel::GaussianComponent g;
          g.weight = comp.at("weight").get<double>();
          auto mean = comp.at("mean").get<std::vector<double>>();
          auto cov = comp.at("cov").get<std::vector<double>>();
          if (mean.size() != 2 || cov.size() != 4)
            throw std::invalid_argument("config: component mean must be [2], cov [4]");
          g.mean = {mean[0], mean[1]};
          g.cov = {cov[0], cov[1], cov[2], cov[3]};
          c.components.push_back(g);
        }
      } else {
        c.components = {{0.5, {-2.0, 0.0}, {0.08, 0.0, 0.0, 0.08}},
                        {0.5, {2.0, 0.0}, {0.08, 0.0, 0.0, 0.08}}};
      }
      break;
    }
    case Kind::rotated_mnist:
      check_keys(ds, {"data_dir", "per_class", "degrees"}, "dataset");
      c.data_dir = ds.value("data_dir", c.data_dir);
      c.n_per_class = ds.value("per_class", c.n_per_class);
      c.degrees = ds.value("degrees", c.degrees);
      break;
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: invalid JSON in " + path + ": " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::validate() const {
  train.validate();
  gan.validate();
  if (z_dim < 1) throw std::invalid_argument("config: z_dim must be >= 1");
  if (n_per_class < 1) throw std::invalid_argument("config: n_per_class must be >= 1");
  if (kind == Kind::circles && radii.size() != arc_offsets.size())
    throw std::invalid_argument("config: radii and arc_offsets must have equal length");
  if ((kind == Kind::rotated_mixture || kind == Kind::gan_pipeline) && angles_deg.empty())
    throw std::invalid_argument("config: angles_deg must not be empty");
  if (transform_source == TransformSource::learned && kind != Kind::gan_pipeline)
    throw std::invalid_argument("config: learned transforms require kind gan_pipeline");
  if (kind == Kind::gan_pipeline && transform_source == TransformSource::ground_truth)
    throw std::invalid_argument("config: gan_pipeline uses learned or identity transforms");
}

json ExperimentConfig::to_json() const {
  json model = {{"hidden", hidden}, {"z_dim", z_dim}};
  json dataset;
  switch (kind) {
    case Kind::circles:
      dataset = {{"n_per_class", n_per_class},
                 {"radii", radii},
                 {"arc_offsets", arc_offsets},
                 {"num_classes", num_classes}};
      break;
    case Kind::rotated_mixture:
    case Kind::gan_pipeline: {
      json comps = json::array();
      for (const auto& g : components)
        comps.push_back({{"weight", g.weight},
                         {"mean", {g.mean[0], g.mean[1]}},
                         {"cov", {g.cov[0], g.cov[1], g.cov[2], g.cov[3]}}});
      dataset = {{"n_per_class", n_per_class}, {"angles_deg", angles_deg}, {"components", comps}};
      break;
    }
    case Kind::rotated_mnist:
      dataset = {{"data_dir", data_dir}, {"per_class", n_per_class}, {"degrees", degrees}};
      model["conv_c1"] = conv_c1;
      model["conv_c2"] = conv_c2;
      break;
  }
  json train_j = {{"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"invariance_weight", train.invariance_weight}};
  if (std::holds_alternative<AdamConfig>(train.optimizer)) {
    train_j["optimizer"] = "adam";
    train_j["lr"] = std::get<AdamConfig>(train.optimizer).lr;
  } else {
    const auto& s = std::get<SgdConfig>(train.optimizer);
    train_j["optimizer"] = "sgd";
    train_j["lr"] = s.lr;
    train_j["momentum"] = s.momentum;
    train_j["weight_decay"] = s.weight_decay;
  }
  json out = {{"kind", kind_name(kind)},
              {"seed", seed},
              {"out_dir", out_dir},
              {"transform_source", source_name(transform_source)},
              {"method", method},
              {"train", train_j},
              {"model", model},
              {"dataset", dataset}};
  if (target_all)
    out["target"] = "all";
  else
    out["target"] = target;
  if (kind == Kind::gan_pipeline)
    out["gan"] = {{"iterations", gan.iterations}, {"batch", gan.batch},
                  {"lr", gan.optimizer.lr},       {"w_adv", gan.w_adv},
                  {"w_cls", gan.w_cls},           {"w_rec", gan.w_rec}};
  return out;
}

std::vector<LabeledDomain> build_domains(const ExperimentConfig& config) {
  switch (config.kind) {
    case ExperimentConfig::Kind::circles:
      return gen_circles(config.n_per_class, config.radii, config.arc_offsets,
                         config.num_classes, config.seed);
    case ExperimentConfig::Kind::rotated_mixture:
    case ExperimentConfig::Kind::gan_pipeline: {
      std::vector<double> rad;
      for (double deg : config.angles_deg) rad.push_back(deg * kPi / 180.0);
      return gen_rotated_mixture(DensityModel::gaussian_mixture(config.components), rad,
                                 config.n_per_class, config.seed);
    }
    case ExperimentConfig::Kind::rotated_mnist: {
      RawMnist raw = load_mnist(config.data_dir + "/train-images-idx3-ubyte",
                                config.data_dir + "/train-labels-idx1-ubyte");
      return build_rotated_mnist(raw, config.seed, config.n_per_class, config.degrees);
    }
  }
  throw std::invalid_argument("config: unhandled kind");
}

namespace {

std::string config_hash(const json& j) {
  std::ostringstream out;
  out << std::hex << std::hash<std::string>{}(j.dump());
  return out.str();
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

TrainedModel make_model(const ExperimentConfig& config, int num_classes) {
  TrainedModel m;
  if (config.kind == ExperimentConfig::Kind::rotated_mnist)
    m.rep = RepresentationNet::make_smallconv(1, 28, 28, config.conv_c1, config.conv_c2,
                                              config.z_dim, config.seed);
  else
    m.rep = RepresentationNet::make_mlp(2, config.hidden, config.z_dim, config.seed);
  m.head = ClassifierHead(config.z_dim, num_classes, config.seed + 1);
  return m;
}

void write_scatter(const ExperimentConfig& config, const TrainedModel& model,
                   const std::vector<LabeledDomain>& domains) {
  const int zd = model.rep.z_dim();
  std::int64_t total = 0;
  for (const auto& d : domains) total += d.size();
  NdArray z = NdArray::zeros({static_cast<int>(total), zd});
  std::vector<int> classes, dom_ids;
  int at = 0;
  for (const auto& dom : domains) {
    const int chunk = 256;
    for (int start = 0; start < dom.size(); start += chunk) {
      const int stop = std::min(dom.size(), start + chunk);
      std::vector<int> idx(stop - start);
      for (int i = start; i < stop; ++i) idx[i - start] = i;
      Tensor out = model.rep.forward(batch_tensor(dom.xs, idx));
      for (int i = 0; i < stop - start; ++i)
        std::copy_n(out.value().data() + static_cast<size_t>(i) * zd, zd, z.row(at + i));
      at += stop - start;
    }
    classes.insert(classes.end(), dom.ys.begin(), dom.ys.end());
    dom_ids.insert(dom_ids.end(), dom.size(), dom.domain_id);
  }
  NdArray pts = (zd == 2) ? z : pca2(z).project(z);
  const std::string base = config.out_dir + "/scatter";
  export_scatter_csv(base + ".csv", pts, classes, dom_ids);
  export_scatter_svg(base, pts, classes, dom_ids);
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  if (config.target_all)
    throw std::invalid_argument("run: target \"all\" is only valid for sweep");

  auto domains = build_domains(config);
  std::vector<LabeledDomain> sources;
  std::optional<LabeledDomain> target;
  for (auto& d : domains) {
    if (d.domain_id == config.target)
      target = d;
    else
      sources.push_back(d);
  }
  if (!target)
    throw std::invalid_argument("config: target domain " + std::to_string(config.target) +
                                " not found");
  if (sources.empty()) throw std::invalid_argument("config: no source domains left");

  fs::create_directories(config.out_dir);

  TransformProvider provider = identity_provider();
  std::optional<Generator> gen;
  if (config.kind == ExperimentConfig::Kind::gan_pipeline &&
      config.transform_source == ExperimentConfig::TransformSource::learned) {
    std::vector<int> ids;
    for (const auto& s : sources) ids.push_back(s.domain_id);
    gen = Generator(2, ids, {64, 64}, config.seed + 2);
    GanConfig gc = config.gan;
    gc.seed = config.seed + 3;
    GanReport greport = gan_train(sources, *gen, gc);
    greport.write_curves_csv(config.out_dir + "/gan_curves.csv");
    gen->save(config.out_dir + "/gan.json");
    provider = learned_provider(*gen);
  } else if (config.transform_source == ExperimentConfig::TransformSource::ground_truth) {
    provider = ground_truth_provider(domains);
  }

  int num_classes = 0;
  for (const auto& s : sources) num_classes = std::max(num_classes, s.num_classes());
  TrainedModel model = make_model(config, num_classes);
  model.config_hash = config_hash(config.to_json());

  TrainConfig tc = config.train;
  tc.seed = config.seed + 10;
  // A single source has no domain pairs, so "dir" degenerates to the
  // pooled baseline there.
  const bool pooled = config.method == "deepall" || sources.size() < 2;
  TrainReport treport =
      pooled ? deepall_train(sources, model, tc) : dir_train(sources, provider, model, tc);

  RunResult res;
  res.target_domain = target->domain_id;
  res.target_accuracy = accuracy(model, *target);
  if (sources.size() >= 2) res.alignment = compute_alignment(model, sources);
  res.train_report = treport;

  treport.write_curves_csv(config.out_dir + "/curves.csv");
  model.save(config.out_dir + "/model.json");
  write_scatter(config, model, domains);

  json report = {{"config", config.to_json()},
                 {"timestamp", iso_timestamp()},
                 {"seeds", {{"experiment", config.seed}, {"train", tc.seed}}},
                 {"target",
                  {{"domain", res.target_domain}, {"accuracy", res.target_accuracy}}},
                 {"alignment", res.alignment.to_json()},
                 {"final_epoch",
                  {{"cls_loss", treport.final_epoch().cls_loss},
                   {"inv_loss", treport.final_epoch().inv_loss},
                   {"total_loss", treport.final_epoch().total_loss},
                   {"train_accuracy", treport.final_epoch().accuracy}}},
                 {"epochs_run", static_cast<int>(treport.epochs.size())}};
  std::ofstream out(config.out_dir + "/report.json");
  if (!out) throw std::runtime_error("cannot write report.json");
  out << report.dump(2) << "\n";
  return res;
}

std::vector<RunResult> sweep_experiment(const ExperimentConfig& config) {
  config.validate();
  auto domains = build_domains(config);
  if (domains.size() < 2)
    throw std::invalid_argument("sweep: need at least 2 domains to hold one out");

  fs::create_directories(config.out_dir);
  std::vector<RunResult> results;
  for (const auto& dom : domains) {
    ExperimentConfig sub = config;
    sub.target_all = false;
    sub.target = dom.domain_id;
    sub.out_dir = config.out_dir + "/target_" + std::to_string(dom.domain_id);
    results.push_back(run_experiment(sub));
  }

  std::ofstream out(config.out_dir + "/aggregate.csv");
  if (!out) throw std::runtime_error("cannot write aggregate.csv");
  out.precision(17);
  for (const auto& r : results) out << "d" << r.target_domain << ",";
  out << "Average\n";
  double sum = 0.0;
  for (const auto& r : results) {
    out << r.target_accuracy << ",";
    sum += r.target_accuracy;
  }
  out << sum / static_cast<double>(results.size()) << "\n";
  return results;
}

}  // namespace dir
