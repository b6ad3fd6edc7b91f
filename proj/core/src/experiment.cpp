#include "mmclab/experiment.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmclab/csv.hpp"
#include "mmclab/density.hpp"

namespace mmc {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& ctx, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config: " + ctx + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("config: unknown key \"" + it.key() + "\" in " + ctx);
  }
}

template <class T>
T get_or(const json& obj, const char* key, T def) {
  if (!obj.contains(key)) return def;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for \"") + key + "\": " + e.what());
  }
}

template <class T>
T get_req(const json& obj, const char* key, const std::string& ctx) {
  if (!obj.contains(key)) throw ConfigError("config: missing key \"" + std::string(key) + "\" in " + ctx);
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for \"") + key + "\": " + e.what());
  }
}

DatasetSpec parse_dataset(const json& obj) {
  DatasetSpec spec;
  std::string type = get_req<std::string>(obj, "type", "dataset");
  if (type == "blobs") {
    check_keys(obj, "dataset", {"type", "classes", "dim", "per_class", "test_per_class", "spread", "simplex_scale"});
    spec.kind = DatasetSpec::Kind::Blobs;
    spec.classes = get_or(obj, "classes", spec.classes);
    spec.dim = get_or(obj, "dim", spec.dim);
    spec.per_class = get_or(obj, "per_class", spec.per_class);
    spec.test_per_class = get_or(obj, "test_per_class", spec.test_per_class);
    spec.spread = get_or(obj, "spread", spec.spread);
    spec.simplex_scale = get_or(obj, "simplex_scale", spec.simplex_scale);
  } else if (type == "idx") {
    check_keys(obj, "dataset", {"type", "images", "labels", "max_n", "test_images", "test_labels", "test_max_n"});
    spec.kind = DatasetSpec::Kind::Idx;
    spec.images = get_req<std::string>(obj, "images", "dataset");
    spec.labels = get_req<std::string>(obj, "labels", "dataset");
    spec.max_n = get_or<std::size_t>(obj, "max_n", spec.max_n);
    spec.test_images = get_or<std::string>(obj, "test_images", "");
    spec.test_labels = get_or<std::string>(obj, "test_labels", "");
    spec.test_max_n = get_or<std::size_t>(obj, "test_max_n", spec.test_max_n);
  } else {
    throw ConfigError("config: unknown dataset type \"" + type + "\"");
  }
  return spec;
}

LossSpec parse_loss(const json& obj) {
  LossSpec spec;
  std::string kind = get_req<std::string>(obj, "kind", "loss");
  try {
    spec.kind = loss_kind_from_string(kind);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  switch (spec.kind) {
    case LossKind::Sce:
    case LossKind::Gsce:
      check_keys(obj, "loss", {"kind"});
      break;
    case LossKind::Lgm:
      check_keys(obj, "loss", {"kind", "margin"});
      spec.margin = get_or(obj, "margin", spec.margin);
      break;
    case LossKind::Mmlda:
    case LossKind::Mmc:
      check_keys(obj, "loss", {"kind", "c_mm"});
      spec.c_mm = get_or(obj, "c_mm", spec.c_mm);
      break;
    case LossKind::Center:
      check_keys(obj, "loss", {"kind", "lambda"});
      spec.lambda = get_or(obj, "lambda", spec.lambda);
      break;
    case LossKind::Emc:
      check_keys(obj, "loss", {"kind", "c_mm", "alpha"});
      spec.c_mm = get_or(obj, "c_mm", spec.c_mm);
      spec.alpha = get_or(obj, "alpha", spec.alpha);
      break;
  }
  return spec;
}

TrainConfig parse_train(const json& obj) {
  TrainConfig cfg;
  check_keys(obj, "train", {"epochs", "batch_size", "lr", "beta1", "beta2", "eps_opt", "at"});
  cfg.epochs = get_or(obj, "epochs", cfg.epochs);
  cfg.batch_size = get_or(obj, "batch_size", cfg.batch_size);
  cfg.lr = get_or(obj, "lr", cfg.lr);
  cfg.beta1 = get_or(obj, "beta1", cfg.beta1);
  cfg.beta2 = get_or(obj, "beta2", cfg.beta2);
  cfg.eps_opt = get_or(obj, "eps_opt", cfg.eps_opt);
  if (obj.contains("at")) {
    const json& at = obj.at("at");
    check_keys(at, "train.at", {"enabled", "mode", "pgd_steps", "epsilon", "step_size"});
    cfg.at.enabled = get_or(at, "enabled", cfg.at.enabled);
    if (at.contains("mode")) cfg.at.mode = attack_mode_from_string(at.at("mode").get<std::string>());
    cfg.at.pgd_steps = get_or(at, "pgd_steps", cfg.at.pgd_steps);
    cfg.at.epsilon = get_or(at, "epsilon", cfg.at.epsilon);
    cfg.at.step_size = get_or(at, "step_size", cfg.at.step_size);
  }
  return cfg;
}

AttackConfig parse_attack(const json& obj, std::size_t index) {
  AttackConfig cfg;
  check_keys(obj, "attacks[" + std::to_string(index) + "]",
             {"name", "family", "mode", "objective", "epsilon", "step_size", "steps", "cw", "spsa",
              "noise_sigma", "rotate_degrees", "random_start", "mim_decay", "seed"});
  try {
    cfg.family = attack_family_from_string(get_req<std::string>(obj, "family", "attack"));
    if (obj.contains("mode")) cfg.mode = attack_mode_from_string(obj.at("mode").get<std::string>());
    if (obj.contains("objective")) cfg.objective = attack_objective_from_string(obj.at("objective").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  cfg.name = get_or<std::string>(obj, "name", "");
  if (cfg.name.empty()) {
    cfg.name = to_string(cfg.family);
    for (char& ch : cfg.name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    cfg.name += "_" + std::to_string(index);
  }
  cfg.epsilon = get_or(obj, "epsilon", cfg.epsilon);
  cfg.step_size = get_or(obj, "step_size", cfg.step_size);
  cfg.steps = get_or(obj, "steps", cfg.steps);
  if (obj.contains("cw")) {
    const json& cw = obj.at("cw");
    check_keys(cw, "attack.cw", {"binary_steps", "c_init", "lr", "iters"});
    cfg.cw.binary_steps = get_or(cw, "binary_steps", cfg.cw.binary_steps);
    cfg.cw.c_init = get_or(cw, "c_init", cfg.cw.c_init);
    cfg.cw.lr = get_or(cw, "lr", cfg.cw.lr);
    cfg.cw.iters = get_or(cw, "iters", cfg.cw.iters);
  }
  if (obj.contains("spsa")) {
    const json& sp = obj.at("spsa");
    check_keys(sp, "attack.spsa", {"batch", "lr", "delta"});
    cfg.spsa.batch = get_or(sp, "batch", cfg.spsa.batch);
    cfg.spsa.lr = get_or(sp, "lr", cfg.spsa.lr);
    cfg.spsa.delta = get_or(sp, "delta", cfg.spsa.delta);
  }
  cfg.noise_sigma = get_or(obj, "noise_sigma", cfg.noise_sigma);
  cfg.rotate_degrees = get_or(obj, "rotate_degrees", cfg.rotate_degrees);
  cfg.random_start = get_or(obj, "random_start", cfg.random_start);
  cfg.mim_decay = get_or(obj, "mim_decay", cfg.mim_decay);
  cfg.seed = get_or<std::uint64_t>(obj, "seed", cfg.seed);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

json dataset_to_json(const DatasetSpec& s) {
  json j;
  if (s.kind == DatasetSpec::Kind::Blobs) {
    j["type"] = "blobs";
    j["classes"] = s.classes;
    j["dim"] = s.dim;
    j["per_class"] = s.per_class;
    j["test_per_class"] = s.test_per_class;
    j["spread"] = s.spread;
    j["simplex_scale"] = s.simplex_scale;
  } else {
    j["type"] = "idx";
    j["images"] = s.images.string();
    j["labels"] = s.labels.string();
    j["max_n"] = s.max_n;
    j["test_images"] = s.test_images.string();
    j["test_labels"] = s.test_labels.string();
    j["test_max_n"] = s.test_max_n;
  }
  return j;
}

json loss_to_json(const LossSpec& s) {
  json j;
  j["kind"] = to_string(s.kind);
  switch (s.kind) {
    case LossKind::Sce:
    case LossKind::Gsce: break;
    case LossKind::Lgm: j["margin"] = s.margin; break;
    case LossKind::Mmlda:
    case LossKind::Mmc: j["c_mm"] = s.c_mm; break;
    case LossKind::Center: j["lambda"] = s.lambda; break;
    case LossKind::Emc:
      j["c_mm"] = s.c_mm;
      j["alpha"] = s.alpha;
      break;
  }
  return j;
}

json attack_to_json(const AttackConfig& a) {
  json j;
  j["name"] = a.name;
  j["family"] = to_string(a.family);
  j["mode"] = to_string(a.mode);
  j["objective"] = to_string(a.objective);
  j["epsilon"] = a.epsilon;
  j["step_size"] = a.step_size;
  j["steps"] = a.steps;
  j["cw"] = {{"binary_steps", a.cw.binary_steps}, {"c_init", a.cw.c_init}, {"lr", a.cw.lr}, {"iters", a.cw.iters}};
  j["spsa"] = {{"batch", a.spsa.batch}, {"lr", a.spsa.lr}, {"delta", a.spsa.delta}};
  j["noise_sigma"] = a.noise_sigma;
  j["rotate_degrees"] = a.rotate_degrees;
  j["random_start"] = a.random_start;
  j["mim_decay"] = a.mim_decay;
  j["seed"] = a.seed;
  return j;
}

}  // namespace

Dataset DatasetSpec::build_train(std::uint64_t seed) const {
  if (kind == Kind::Blobs) {
    Dataset ds = make_blobs(classes, dim, per_class, spread, seed, simplex_scale);
    ds.split = "train";
    return ds;
  }
  Dataset ds = load_idx(images, labels, max_n);
  ds.split = "train";
  return ds;
}

Dataset DatasetSpec::build_test(std::uint64_t seed) const {
  if (kind == Kind::Blobs) {
    Dataset ds = make_blobs(classes, dim, test_per_class, spread, seed ^ 0x7E57DA7AULL, simplex_scale);
    ds.split = "test";
    return ds;
  }
  if (test_images.empty()) throw ConfigError("config: idx dataset has no test files");
  Dataset ds = load_idx(test_images, test_labels, test_max_n);
  ds.split = "test";
  return ds;
}

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse failure: ") + e.what());
  }
  check_keys(doc, "config root",
             {"seed", "dataset", "model", "loss", "train", "attacks", "density", "log_wall_time", "image_rows",
              "image_cols"});
  ExperimentConfig cfg;
  cfg.seed = get_or<std::uint64_t>(doc, "seed", 0);
  if (doc.contains("dataset")) cfg.dataset = parse_dataset(doc.at("dataset"));
  if (doc.contains("model")) {
    const json& m = doc.at("model");
    check_keys(m, "model", {"hidden", "feature_dim"});
    cfg.model.hidden = get_or(m, "hidden", cfg.model.hidden);
    cfg.model.feature_dim = get_or(m, "feature_dim", cfg.model.feature_dim);
  }
  if (doc.contains("loss")) cfg.loss = parse_loss(doc.at("loss"));
  if (doc.contains("train")) cfg.train = parse_train(doc.at("train"));
  if (doc.contains("attacks")) {
    const json& arr = doc.at("attacks");
    if (!arr.is_array()) throw ConfigError("config: attacks must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) cfg.attacks.push_back(parse_attack(arr[i], i));
  }
  if (doc.contains("density")) {
    const json& d = doc.at("density");
    check_keys(d, "density", {"enabled", "grid", "delta_c_factor"});
    cfg.density.enabled = get_or(d, "enabled", true);
    cfg.density.grid = get_or(d, "grid", cfg.density.grid);
    cfg.density.delta_c_factor = get_or(d, "delta_c_factor", cfg.density.delta_c_factor);
  }
  cfg.log_wall_time = get_or(doc, "log_wall_time", cfg.log_wall_time);
  cfg.image_rows = get_or(doc, "image_rows", cfg.image_rows);
  cfg.image_cols = get_or(doc, "image_cols", cfg.image_cols);
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_string(ss.str());
}

std::string ExperimentConfig::canonical_json() const {
  json doc;
  doc["seed"] = seed;
  doc["dataset"] = dataset_to_json(dataset);
  doc["model"] = {{"hidden", model.hidden}, {"feature_dim", model.feature_dim}};
  doc["loss"] = loss_to_json(loss);
  doc["train"] = {{"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"lr", train.lr},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"eps_opt", train.eps_opt},
                  {"at",
                   {{"enabled", train.at.enabled},
                    {"mode", to_string(train.at.mode)},
                    {"pgd_steps", train.at.pgd_steps},
                    {"epsilon", train.at.epsilon},
                    {"step_size", train.at.step_size}}}};
  doc["attacks"] = json::array();
  for (const AttackConfig& a : attacks) doc["attacks"].push_back(attack_to_json(a));
  doc["density"] = {{"enabled", density.enabled}, {"grid", density.grid}, {"delta_c_factor", density.delta_c_factor}};
  doc["log_wall_time"] = log_wall_time;
  doc["image_rows"] = image_rows;
  doc["image_cols"] = image_cols;
  return doc.dump(2);
}

void ExperimentConfig::validate() const {
  try {
    loss.validate();
    TrainConfig tc = train;
    tc.seed = seed;
    tc.validate();
    for (const AttackConfig& a : attacks) a.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (model.feature_dim <= 0) throw ConfigError("config: feature_dim must be positive");
  for (int h : model.hidden)
    if (h <= 0) throw ConfigError("config: hidden sizes must be positive");
  if (density.delta_c_factor <= 0.0) throw ConfigError("config: delta_c_factor must be positive");
  for (const AttackConfig& a : attacks)
    if (a.family == AttackFamily::Rotate) {
      if (image_rows <= 0 || image_cols <= 0)
        throw ConfigError("config: rotate attacks need image_rows/image_cols");
    }
  std::vector<std::string> names;
  for (const AttackConfig& a : attacks) names.push_back(a.name);
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end())
    throw ConfigError("config: duplicate attack names");
}

std::uint64_t fnv1a_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr char kHeadMagic[4] = {'M', 'M', 'C', 'H'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("head checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("head checkpoint: truncated file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_head(const LossHead& head, const LossSpec& spec, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("head checkpoint: cannot open " + path.string());
  os.write(kHeadMagic, 4);
  put_u32(os, 1);
  put_u32(os, static_cast<std::uint32_t>(spec.kind));
  put_f64(os, spec.c_mm);
  put_f64(os, spec.lambda);
  put_f64(os, spec.alpha);
  put_f64(os, spec.margin);
  put_u32(os, static_cast<std::uint32_t>(head.num_classes()));
  put_u32(os, static_cast<std::uint32_t>(head.feature_dim()));
  auto params = const_cast<LossHead&>(head).parameters();
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const Tensor* t : params) {
    put_u32(os, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t s : t->shape()) put_u32(os, static_cast<std::uint32_t>(s));
    for (double v : t->values()) put_f64(os, v);
  }
  if (!os) throw std::runtime_error("head checkpoint: write failed");
}

std::unique_ptr<LossHead> load_head(const std::filesystem::path& path, int feature_dim, LossSpec* spec_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("head checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kHeadMagic, 4) != 0)
    throw std::runtime_error("head checkpoint: bad magic");
  if (get_u32(is) != 1) throw std::runtime_error("head checkpoint: unsupported version");
  LossSpec spec;
  spec.kind = static_cast<LossKind>(get_u32(is));
  spec.c_mm = get_f64(is);
  spec.lambda = get_f64(is);
  spec.alpha = get_f64(is);
  spec.margin = get_f64(is);
  int L = static_cast<int>(get_u32(is));
  int d = static_cast<int>(get_u32(is));
  if (feature_dim > 0 && d != feature_dim)
    throw std::runtime_error("head checkpoint: feature dim mismatch");
  auto head = make_loss_head(spec, d, L, 0);
  std::uint32_t n_params = get_u32(is);
  auto params = head->parameters();
  if (n_params != params.size()) throw std::runtime_error("head checkpoint: parameter count mismatch");
  for (Tensor* t : params) {
    std::uint32_t rank = get_u32(is);
    if (rank != t->rank()) throw std::runtime_error("head checkpoint: parameter rank mismatch");
    for (std::size_t si = 0; si < rank; ++si)
      if (get_u32(is) != t->shape()[si]) throw std::runtime_error("head checkpoint: parameter shape mismatch");
    for (double& v : t->values()) v = get_f64(is);
  }
  if (spec_out) *spec_out = spec;
  return head;
}

std::string density_report_json(const Mlp& model, const LossHead& head, const Dataset& data,
                                const std::vector<double>& grid, double delta_c_factor) {
  Tensor z = model.forward(data.inputs);
  int L = head.num_classes();
  int d = head.feature_dim();
  json doc;
  doc["loss"] = to_string(head.kind());
  doc["feature_dim"] = d;
  doc["examples"] = data.size();
  doc["grid"] = grid;
  doc["delta_c_factor"] = delta_c_factor;

  if (head.has_centers()) {
    // class-conditional center-distance losses
    std::vector<double> losses(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      losses[i] = head.center_distance_loss(z.row(i), data.labels[i]).value;
    auto stats = fit_class_loss_stats(losses, data.labels, L);
    json groups = json::array();
    for (const ClassLossStats& s : stats) {
      json g;
      g["label"] = s.label;
      g["count"] = s.count;
      g["mean"] = s.mean;
      g["stddev"] = s.stddev;
      g["degenerate"] = s.degenerate;
      json points = json::array();
      if (!s.degenerate) {
        double delta_c = delta_c_factor * s.stddev;
        for (double C : grid) {
          json pt;
          pt["C"] = C;
          pt["delta_c"] = delta_c;
          try {
            pt["analytic"] = density_mmc(C, s, d);
            double vol = mmc_shell_volume(C, delta_c, d);
            std::vector<int> labels_view(data.labels.begin(), data.labels.end());
            EmpiricalDensity e = empirical_density(
                z, labels_view,
                [&](std::span<const double> feat, int label) {
                  return label == s.label ? head.center_distance_loss(feat, label).value
                                          : std::numeric_limits<double>::quiet_NaN();
                },
                C, delta_c, vol);
            pt["empirical"] = e.density;
            pt["band_count"] = e.count;
          } catch (const std::exception& e) {
            pt["error"] = e.what();
          }
          points.push_back(pt);
        }
      }
      g["points"] = points;
      groups.push_back(g);
    }
    doc["class_groups"] = groups;
  } else if (head.kind() == LossKind::Gsce || head.kind() == LossKind::Lgm) {
    std::vector<double> losses(data.size());
    std::vector<int> runner_ups(data.size());
    double lse_gap_sum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      ScalarGrad lg = head.loss(z.row(i), data.labels[i]);
      losses[i] = lg.value;
      std::vector<double> h = head.prediction_logits(z.row(i));
      lse_gap_sum += lg.value - lse_pair_loss(h, data.labels[i]);
      int best = -1;
      for (int l = 0; l < L; ++l) {
        if (l == data.labels[i]) continue;
        if (best < 0 || h[static_cast<std::size_t>(l)] > h[static_cast<std::size_t>(best)]) best = l;
      }
      runner_ups[i] = best;
    }
    // diagnostic only: how far the smooth-max contour approximation sits
    // below the exact loss on this dataset
    doc["mean_lse_approximation_gap"] = data.size() ? lse_gap_sum / static_cast<double>(data.size()) : 0.0;
    auto stats = fit_pair_loss_stats(losses, data.labels, runner_ups, L);
    json groups = json::array();
    // quadratic parameters live in the head's tensors
    QuadraticLogitParams q;
    auto params = const_cast<LossHead&>(head).parameters();
    q.mus = *params[0];
    q.sigmas.assign(params[1]->values().begin(), params[1]->values().end());
    if (params.size() > 2)
      q.biases.assign(params[2]->values().begin(), params[2]->values().end());
    else
      q.biases.assign(q.sigmas.size(), 0.0);
    for (const PairLossStats& s : stats) {
      json g;
      g["label"] = s.label;
      g["runner_up"] = s.runner_up;
      g["count"] = s.count;
      g["mean"] = s.mean;
      g["stddev"] = s.stddev;
      g["degenerate"] = s.degenerate;
      json points = json::array();
      if (!s.degenerate) {
        double delta_c = delta_c_factor * s.stddev;
        for (double C : grid) {
          json pt;
          pt["C"] = C;
          pt["delta_c"] = delta_c;
          try {
            pt["analytic"] = density_gsce(C, s, q, d);
            double vol = gsce_shell_volume(C, s.label, s.runner_up, q, delta_c, d);
            std::size_t band = 0;
            for (std::size_t i = 0; i < data.size(); ++i)
              if (data.labels[i] == s.label && runner_ups[i] == s.runner_up && losses[i] >= C &&
                  losses[i] < C + delta_c)
                ++band;
            pt["empirical"] = static_cast<double>(band) / vol;
            pt["band_count"] = band;
          } catch (const std::exception& e) {
            pt["error"] = e.what();
          }
          points.push_back(pt);
        }
      }
      g["points"] = points;
      groups.push_back(g);
    }
    doc["pair_groups"] = groups;
  } else {
    doc["note"] = "equal covariance scalars: contours are hyperplanes and carry no density supervision";
  }
  return doc.dump(2);
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

void write_manifest(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  std::string canonical = cfg.canonical_json();
  json manifest;
  manifest["tool"] = "mmclab";
  manifest["version"] = kVersion;
  manifest["seed"] = cfg.seed;
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a_hash(canonical)));
  manifest["config_fnv1a"] = hex;
  manifest["config"] = json::parse(canonical);
  write_text(out_dir / "manifest.json", manifest.dump(2));
}

void write_summary(const ExperimentConfig& cfg, const ExperimentResult& result,
                   const std::filesystem::path& out_dir) {
  std::ostringstream os;
  os << "loss,clean_acc";
  for (const auto& [name, rep] : result.robustness) os << "," << name;
  os << "\n";
  os << to_string(cfg.loss.kind) << "," << csv_double(result.clean_test_accuracy);
  for (const auto& [name, rep] : result.robustness) os << "," << csv_double(rep.adversarial_accuracy);
  os << "\n";
  write_text(out_dir / "summary.csv", os.str());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  write_manifest(cfg, out_dir);

  Dataset train_set = cfg.dataset.build_train(cfg.seed);
  Dataset test_set = cfg.dataset.build_test(cfg.seed);
  train_set.validate();
  test_set.validate();

  std::vector<int> sizes;
  sizes.push_back(train_set.input_dim());
  for (int h : cfg.model.hidden) sizes.push_back(h);
  sizes.push_back(cfg.model.feature_dim);
  Mlp model(sizes, cfg.seed);
  auto head = make_loss_head(cfg.loss, cfg.model.feature_dim, train_set.num_classes, cfg.seed ^ 0x4EADULL);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;

  ExperimentResult result;
  result.history = tc.at.enabled ? adversarial_train(model, *head, train_set, &test_set, tc)
                                 : train(model, *head, train_set, &test_set, tc);
  write_history_csv(result.history, out_dir / "history.csv", cfg.log_wall_time);
  model.save(out_dir / "model.bin");
  save_head(*head, cfg.loss, out_dir / "head.bin");
  result.clean_test_accuracy = clean_accuracy(model, *head, test_set);

  for (const AttackConfig& a : cfg.attacks) {
    RobustnessReport rep = evaluate_robustness(model, *head, test_set, a, cfg.image_rows, cfg.image_cols);
    write_robustness_csv(rep, out_dir / ("robustness_" + a.name + ".csv"));
    result.robustness.emplace_back(a.name, std::move(rep));
  }

  if (cfg.density.enabled && !cfg.density.grid.empty())
    write_text(out_dir / "density.json",
               density_report_json(model, *head, train_set, cfg.density.grid, cfg.density.delta_c_factor));

  write_summary(cfg, result, out_dir);
  return result;
}

ExperimentResult run_attack_stage(const ExperimentConfig& cfg, const std::filesystem::path& model_dir,
                                  const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  write_manifest(cfg, out_dir);

  Mlp model = Mlp::load(model_dir / "model.bin");
  LossSpec spec;
  auto head = load_head(model_dir / "head.bin", model.feature_dim(), &spec);

  Dataset test_set = cfg.dataset.build_test(cfg.seed);
  test_set.validate();

  ExperimentResult result;
  result.clean_test_accuracy = clean_accuracy(model, *head, test_set);
  for (const AttackConfig& a : cfg.attacks) {
    RobustnessReport rep = evaluate_robustness(model, *head, test_set, a, cfg.image_rows, cfg.image_cols);
    write_robustness_csv(rep, out_dir / ("robustness_" + a.name + ".csv"));
    result.robustness.emplace_back(a.name, std::move(rep));
  }
  if (cfg.density.enabled && !cfg.density.grid.empty()) {
    Dataset train_set = cfg.dataset.build_train(cfg.seed);
    write_text(out_dir / "density.json",
               density_report_json(model, *head, train_set, cfg.density.grid, cfg.density.delta_c_factor));
  }
  ExperimentConfig summary_cfg = cfg;
  summary_cfg.loss = spec;
  write_summary(summary_cfg, result, out_dir);
  return result;
}

}  // namespace mmc
