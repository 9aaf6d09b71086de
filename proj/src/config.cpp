#include "reident/config.hpp"

#include <fstream>
#include <set>

#include "reident/error.hpp"

namespace reident {

using nlohmann::json;

namespace {

void allow_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown key `" + key + "` in " + where);
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

TrainConfig parse_train(const json& obj, TrainConfig cfg, const std::string& where) {
  allow_keys(obj, where, {"margin", "learning_rate", "batch_size", "epochs", "optimizer", "beta1", "beta2", "epsilon"});
  cfg.margin = get_or(obj, "margin", cfg.margin, where);
  cfg.learning_rate = get_or(obj, "learning_rate", cfg.learning_rate, where);
  cfg.batch_size = get_or(obj, "batch_size", cfg.batch_size, where);
  cfg.epochs = get_or(obj, "epochs", cfg.epochs, where);
  cfg.beta1 = get_or(obj, "beta1", cfg.beta1, where);
  cfg.beta2 = get_or(obj, "beta2", cfg.beta2, where);
  cfg.epsilon = get_or(obj, "epsilon", cfg.epsilon, where);
  if (obj.contains("optimizer")) {
    try {
      cfg.optimizer = optimizer_from_string(get_or<std::string>(obj, "optimizer", "adam", where));
    } catch (const ValidationError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return cfg;
}

SyntheticParams parse_synthetic(const json& obj) {
  const std::string where = "dataset.synthetic";
  allow_keys(obj, where, {"subjects", "views", "width", "height", "noise_sigma", "shift_max", "seed"});
  SyntheticParams p;
  p.n_subjects = get_or(obj, "subjects", p.n_subjects, where);
  p.views_per_subject = get_or(obj, "views", p.views_per_subject, where);
  p.width = get_or(obj, "width", p.width, where);
  p.height = get_or(obj, "height", p.height, where);
  p.noise_sigma = get_or(obj, "noise_sigma", p.noise_sigma, where);
  p.shift_max = get_or(obj, "shift_max", p.shift_max, where);
  p.seed = get_or(obj, "seed", p.seed, where);
  if (p.n_subjects < 2 || p.views_per_subject < 2 || p.width < 32 || p.height < 32 || p.noise_sigma < 0 ||
      p.shift_max < 0) {
    throw ConfigError("dataset.synthetic: need >= 2 subjects, >= 2 views, >= 32x32 images, non-negative noise/shift");
  }
  return p;
}

std::optional<std::pair<int, int>> parse_resize(const json& obj, std::optional<std::pair<int, int>> fallback,
                                                const std::string& where) {
  if (!obj.contains("resize")) return fallback;
  const json& r = obj.at("resize");
  if (r.is_null()) return std::nullopt;
  if (!r.is_array() || r.size() != 2 || !r[0].is_number_integer() || !r[1].is_number_integer()) {
    throw ConfigError(where + ".resize must be null or [width, height]");
  }
  const int w = r[0].get<int>();
  const int h = r[1].get<int>();
  if (w < kMinImageExtent || h < kMinImageExtent) throw ConfigError(where + ".resize must be at least 16x16");
  return std::pair{w, h};
}

SubModelConfig parse_sub_model(const json& obj, std::size_t index, const std::filesystem::path& base_dir) {
  const std::string where = "sub_models[" + std::to_string(index) + "]";
  allow_keys(obj, where,
             {"name", "method", "resize", "patch", "overlap", "quantiles", "import_path", "hidden", "output_dim",
              "conv_layers", "train"});
  if (!obj.contains("method")) throw ConfigError(where + ".method is required");
  FeatureMethod method;
  try {
    method = feature_method_from_string(get_or<std::string>(obj, "method", "", where));
  } catch (const ValidationError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  SubModelConfig m = default_sub_model(get_or<std::string>(obj, "name", to_string(method), where), method);
  m.features.resize = parse_resize(obj, m.features.resize, where);
  m.features.patch = get_or(obj, "patch", m.features.patch, where);
  m.features.overlap_fraction = get_or(obj, "overlap", m.features.overlap_fraction, where);
  m.features.quantiles = get_or(obj, "quantiles", m.features.quantiles, where);
  if (obj.contains("import_path")) {
    std::filesystem::path p = get_or<std::string>(obj, "import_path", "", where);
    if (p.is_relative()) p = base_dir / p;
    m.features.import_path = p;
  }
  m.hidden = get_or(obj, "hidden", m.hidden, where);
  m.output_dim = get_or(obj, "output_dim", m.output_dim, where);
  m.conv_layers = get_or(obj, "conv_layers", m.conv_layers, where);
  if (obj.contains("train")) m.train = parse_train(obj.at("train"), m.train, where + ".train");

  if (m.name.empty()) throw ConfigError(where + ".name must not be empty");
  if (m.output_dim < 1) throw ConfigError(where + ".output_dim must be >= 1");
  for (int h : m.hidden) {
    if (h < 1) throw ConfigError(where + ".hidden entries must be >= 1");
  }
  if (m.features.patch < 1) throw ConfigError(where + ".patch must be >= 1");
  if (m.features.overlap_fraction < 0 || m.features.overlap_fraction >= 1) {
    throw ConfigError(where + ".overlap must lie in [0, 1)");
  }
  for (double q : m.features.quantiles) {
    if (!(q >= 0 && q <= 1)) throw ConfigError(where + ".quantiles must lie in [0, 1]");
  }
  if (method == FeatureMethod::imported) {
    if (m.features.import_path.empty()) throw ConfigError(where + ": imported features need import_path");
    if (!std::filesystem::exists(m.features.import_path)) {
      throw ConfigError(where + ": import_path does not exist: " + m.features.import_path.string());
    }
  }
  if (method == FeatureMethod::raw_image && !m.features.resize) {
    throw ConfigError(where + ": raw_image needs a fixed resize target");
  }
  return m;
}

}  // namespace

SubModelConfig default_sub_model(const std::string& name, FeatureMethod method) {
  SubModelConfig m;
  m.name = name;
  m.features.method = method;
  switch (method) {
    case FeatureMethod::raw_image:
      m.features.resize = std::pair{100, 58};
      m.hidden = {100, 100};
      m.output_dim = 100;
      m.train.epochs = 30;
      break;
    case FeatureMethod::imported:
      m.features.resize = std::nullopt;
      m.hidden = {100, 100, 100};
      break;
    default:
      m.features.resize = std::pair{264, 200};
      m.hidden = {100, 100, 100};
      break;
  }
  return m;
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  allow_keys(doc, "config",
             {"dataset", "sub_models", "ensembles", "nn_triplet", "weighted_triplet", "weighted_accuracy", "folds",
              "analyses", "seed", "output_dir", "save_models", "dump_embeddings"});
  ExperimentConfig c;

  if (!doc.contains("dataset")) throw ConfigError("config.dataset is required");
  const json& ds = doc.at("dataset");
  allow_keys(ds, "dataset", {"manifest", "synthetic"});
  if (ds.contains("manifest") == ds.contains("synthetic")) {
    throw ConfigError("dataset needs exactly one of `manifest` or `synthetic`");
  }
  if (ds.contains("manifest")) {
    std::filesystem::path p = get_or<std::string>(ds, "manifest", "", "dataset");
    if (p.is_relative()) p = base_dir / p;
    if (!std::filesystem::exists(p)) throw ConfigError("dataset.manifest does not exist: " + p.string());
    c.dataset.manifest = p;
  } else {
    c.dataset.synthetic = parse_synthetic(ds.at("synthetic"));
  }

  if (!doc.contains("sub_models") || !doc.at("sub_models").is_array() || doc.at("sub_models").empty()) {
    throw ConfigError("at least one sub-model required");
  }
  std::set<std::string> names;
  for (std::size_t i = 0; i < doc.at("sub_models").size(); ++i) {
    SubModelConfig m = parse_sub_model(doc.at("sub_models")[i], i, base_dir);
    if (!names.insert(m.name).second) throw ConfigError("duplicate sub-model name `" + m.name + "`");
    c.sub_models.push_back(std::move(m));
  }

  if (doc.contains("ensembles")) {
    if (!doc.at("ensembles").is_array()) throw ConfigError("ensembles must be a list");
    for (const auto& e : doc.at("ensembles")) {
      if (!e.is_string()) throw ConfigError("ensembles entries must be strings");
      EnsembleKind kind;
      try {
        kind = ensemble_kind_from_string(e.get<std::string>());
      } catch (const ValidationError& err) {
        throw ConfigError(err.what());
      }
      if (std::find(c.ensembles.begin(), c.ensembles.end(), kind) != c.ensembles.end()) {
        throw ConfigError("ensemble `" + e.get<std::string>() + "` listed twice");
      }
      if (names.contains(to_string(kind))) {
        throw ConfigError("sub-model name `" + to_string(kind) + "` collides with an ensemble name");
      }
      c.ensembles.push_back(kind);
    }
  } else {
    c.ensembles = all_ensemble_kinds();
  }

  if (doc.contains("nn_triplet")) {
    const json& nn = doc.at("nn_triplet");
    allow_keys(nn, "nn_triplet", {"hidden", "output_dim", "train"});
    c.nn_triplet_hidden = get_or(nn, "hidden", c.nn_triplet_hidden, "nn_triplet");
    c.nn_triplet_output_dim = get_or(nn, "output_dim", c.nn_triplet_output_dim, "nn_triplet");
    if (c.nn_triplet_hidden < 1 || c.nn_triplet_output_dim < 1) throw ConfigError("nn_triplet layer sizes must be >= 1");
    if (nn.contains("train")) c.nn_triplet_train = parse_train(nn.at("train"), c.nn_triplet_train, "nn_triplet.train");
  }
  if (doc.contains("weighted_triplet")) {
    const json& wt = doc.at("weighted_triplet");
    allow_keys(wt, "weighted_triplet", {"train"});
    if (wt.contains("train")) {
      c.weighted_triplet_train = parse_train(wt.at("train"), c.weighted_triplet_train, "weighted_triplet.train");
    }
  }
  if (doc.contains("weighted_accuracy")) {
    const json& wa = doc.at("weighted_accuracy");
    allow_keys(wa, "weighted_accuracy", {"budget"});
    c.weighted_accuracy_budget = get_or(wa, "budget", c.weighted_accuracy_budget, "weighted_accuracy");
    if (c.weighted_accuracy_budget < static_cast<int>(c.sub_models.size())) {
      throw ConfigError("weighted_accuracy.budget must be >= the number of sub-models");
    }
  }

  if (doc.contains("folds")) {
    const json& f = doc.at("folds");
    allow_keys(f, "folds", {"k", "holdout"});
    c.folds.k_folds = get_or(f, "k", c.folds.k_folds, "folds");
    c.folds.holdout_fold = get_or(f, "holdout", c.folds.k_folds - 1, "folds");
  }
  if (c.folds.k_folds < 3) throw ConfigError("folds.k must be >= 3");
  if (c.folds.holdout_fold < 0 || c.folds.holdout_fold >= c.folds.k_folds) {
    throw ConfigError("folds.holdout must lie in [0, k)");
  }

  if (doc.contains("analyses")) {
    const json& a = doc.at("analyses");
    allow_keys(a, "analyses", {"pairwise", "leave_one_out", "correlation_trials", "max_rank"});
    c.analyses.pairwise = get_or(a, "pairwise", c.analyses.pairwise, "analyses");
    c.analyses.leave_one_out = get_or(a, "leave_one_out", c.analyses.leave_one_out, "analyses");
    c.analyses.correlation_trials = get_or(a, "correlation_trials", c.analyses.correlation_trials, "analyses");
    c.analyses.max_rank = get_or(a, "max_rank", c.analyses.max_rank, "analyses");
    if (c.analyses.max_rank < 1) throw ConfigError("analyses.max_rank must be >= 1");
  }

  c.seed = get_or(doc, "seed", c.seed, "config");
  if (doc.contains("output_dir")) {
    std::filesystem::path p = get_or<std::string>(doc, "output_dir", "out", "config");
    c.output_dir = p.is_relative() ? base_dir / p : p;
  } else {
    c.output_dir = base_dir / "out";
  }
  c.save_models = get_or(doc, "save_models", c.save_models, "config");
  c.dump_embeddings = get_or(doc, "dump_embeddings", c.dump_embeddings, "config");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

json to_json(const TrainConfig& cfg) {
  return json{{"margin", cfg.margin},       {"learning_rate", cfg.learning_rate},
              {"batch_size", cfg.batch_size}, {"epochs", cfg.epochs},
              {"optimizer", to_string(cfg.optimizer)}, {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},         {"epsilon", cfg.epsilon}};
}

json to_json(const SyntheticParams& p) {
  return json{{"subjects", p.n_subjects}, {"views", p.views_per_subject}, {"width", p.width},
              {"height", p.height},       {"noise_sigma", p.noise_sigma},  {"shift_max", p.shift_max},
              {"seed", p.seed}};
}

json to_json(const ExperimentConfig& c) {
  json doc;
  if (c.dataset.manifest) {
    doc["dataset"] = {{"manifest", c.dataset.manifest->string()}};
  } else {
    doc["dataset"] = {{"synthetic", to_json(*c.dataset.synthetic)}};
  }
  json subs = json::array();
  for (const SubModelConfig& m : c.sub_models) {
    json s{{"name", m.name},
           {"method", to_string(m.features.method)},
           {"patch", m.features.patch},
           {"overlap", m.features.overlap_fraction},
           {"quantiles", m.features.quantiles},
           {"hidden", m.hidden},
           {"output_dim", m.output_dim},
           {"conv_layers", m.conv_layers},
           {"train", to_json(m.train)}};
    s["resize"] = m.features.resize ? json::array({m.features.resize->first, m.features.resize->second}) : json(nullptr);
    if (!m.features.import_path.empty()) s["import_path"] = m.features.import_path.string();
    subs.push_back(std::move(s));
  }
  doc["sub_models"] = std::move(subs);
  json ens = json::array();
  for (EnsembleKind k : c.ensembles) ens.push_back(to_string(k));
  doc["ensembles"] = std::move(ens);
  doc["nn_triplet"] = {{"hidden", c.nn_triplet_hidden}, {"output_dim", c.nn_triplet_output_dim},
                       {"train", to_json(c.nn_triplet_train)}};
  doc["weighted_triplet"] = {{"train", to_json(c.weighted_triplet_train)}};
  doc["weighted_accuracy"] = {{"budget", c.weighted_accuracy_budget}};
  doc["folds"] = {{"k", c.folds.k_folds}, {"holdout", c.folds.holdout_fold}};
  doc["analyses"] = {{"pairwise", c.analyses.pairwise},
                     {"leave_one_out", c.analyses.leave_one_out},
                     {"correlation_trials", c.analyses.correlation_trials},
                     {"max_rank", c.analyses.max_rank}};
  doc["seed"] = c.seed;
  doc["output_dir"] = c.output_dir.string();
  doc["save_models"] = c.save_models;
  doc["dump_embeddings"] = c.dump_embeddings;
  return doc;
}

}  // namespace reident
