#include <fstream>
#include <map>
#include <set>

#include "einv/error.hpp"
#include "einv/experiment.hpp"
#include "einv/model.hpp"

namespace einv {

namespace {

// Reads one JSON object, naming fields by their dotted path in errors and
// rejecting keys nobody asked for.
class FieldReader {
 public:
  FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ValidationError((path_.empty() ? "spec" : path_) + ": expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError(field(key) + ": wrong type (" + j_.at(key).dump() + ")");
    }
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ValidationError(field(key) + ": unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Augment augment_from_string(const std::string& s, const std::string& where) {
  if (s == "none") return Augment::none;
  if (s == "affine") return Augment::affine;
  throw ValidationError(where + ": unknown augmentation '" + s + "' (none | affine)");
}

ClassifierSpec read_classifier(const json& j, const std::string& path, ClassifierSpec c) {
  FieldReader r(j, path);
  c.dataset = r.get("dataset", c.dataset);
  c.arch = r.get("arch", c.arch);
  c.epochs = r.get("epochs", c.epochs);
  c.seed = r.get("seed", c.seed);
  c.augment = augment_from_string(r.get<std::string>("augment", c.augment == Augment::affine ? "affine" : "none"),
                                  r.field("augment"));
  c.learning_rate = r.get("learning_rate", c.learning_rate);
  c.batch_size = r.get("batch_size", c.batch_size);
  c.accuracy_floor = r.get("accuracy_floor", c.accuracy_floor);
  r.finish();
  return c;
}

void check_classifier(const ClassifierSpec& c, const std::string& path) {
  const auto& archs = supported_archs();
  if (std::find(archs.begin(), archs.end(), c.arch) == archs.end()) {
    throw ValidationError(path + ".arch: unknown architecture '" + c.arch + "'");
  }
  if (c.epochs <= 0) throw ValidationError(path + ".epochs must be positive");
  if (c.batch_size <= 0) throw ValidationError(path + ".batch_size must be positive");
  if (!(c.learning_rate > 0)) throw ValidationError(path + ".learning_rate must be positive");
  const auto colon = c.dataset.find(':');
  if (colon == std::string::npos || (c.dataset.substr(colon + 1) != "train" && c.dataset.substr(colon + 1) != "test")) {
    throw ValidationError(path + ".dataset must look like <name>:train or <name>:test");
  }
}

std::int64_t zoo_size(const ZooSpec& z) {
  return z.plan.strategy == PartitionStrategy::snapshots ? static_cast<std::int64_t>(z.snapshot_epochs.size())
                                                         : z.plan.num_models;
}

}  // namespace

ExperimentSpec ExperimentSpec::from_json(const json& j) {
  ExperimentSpec s;
  s.source = j;
  FieldReader r(j, "");
  s.name = r.get<std::string>("name", "experiment");
  if (r.has("data")) {
    FieldReader d(r.raw("data"), "data");
    s.train_dataset = d.get("train", s.train_dataset);
    s.aux_dataset = d.get("aux", s.aux_dataset);
    d.finish();
  }
  if (r.has("zoo")) {
    FieldReader z(r.raw("zoo"), "zoo");
    s.zoo.plan.strategy = partition_strategy_from_string(z.get<std::string>("strategy", "disjoint_split"));
    s.zoo.plan.num_models = z.get("num_models", s.zoo.plan.num_models);
    s.zoo.plan.samples_per_model = z.get("samples_per_model", s.zoo.plan.samples_per_model);
    s.zoo.plan.shuffle_seed = z.get("shuffle_seed", s.zoo.plan.shuffle_seed);
    s.zoo.arch = z.get("arch", s.zoo.arch);
    s.zoo.epochs = z.get("epochs", s.zoo.epochs);
    s.zoo.snapshot_epochs = z.get("snapshot_epochs", s.zoo.snapshot_epochs);
    s.zoo.seed = z.get("seed", s.zoo.seed);
    s.zoo.learning_rate = z.get("learning_rate", s.zoo.learning_rate);
    s.zoo.batch_size = z.get("batch_size", s.zoo.batch_size);
    s.zoo.accuracy_floor = z.get("accuracy_floor", s.zoo.accuracy_floor);
    z.finish();
  }
  s.evaluator = {"mnist:test", "resnet18-eval", 20, 7, Augment::affine, 1e-3, 64, 0.9};
  s.generic = {"natural-patches:train", "generic-cnn", 10, 11, Augment::none, 1e-3, 64, 0.5};
  if (r.has("evaluator")) s.evaluator = read_classifier(r.raw("evaluator"), "evaluator", s.evaluator);
  if (r.has("generic")) s.generic = read_classifier(r.raw("generic"), "generic", s.generic);
  if (r.has("selection")) {
    FieldReader sel(r.raw("selection"), "selection");
    s.selection.methods = sel.get("methods", s.selection.methods);
    s.selection.sizes = sel.get("sizes", s.selection.sizes);
    s.selection.pairs = sel.get("pairs", s.selection.pairs);
    s.selection.groups = sel.get("groups", s.selection.groups);
    s.selection.probe_size = sel.get("probe_size", s.selection.probe_size);
    s.selection.probe_seed = sel.get("probe_seed", s.selection.probe_seed);
    s.selection.start_rule = sel.get("start_rule", s.selection.start_rule);
    sel.finish();
  }
  if (r.has("alignment")) {
    FieldReader a(r.raw("alignment"), "alignment");
    s.alignment.method = a.get("method", s.alignment.method);
    s.alignment.probe = a.get("probe", s.alignment.probe);
    if (a.has("threshold")) s.alignment.threshold = a.get<double>("threshold", 0.0);
    s.alignment.score = a.get("score", s.alignment.score);
    a.finish();
  }
  if (r.has("attack")) s.attack = AttackConfig::from_json(r.raw("attack"));
  if (r.has("loss_types")) {
    const auto& lt = r.raw("loss_types");
    if (!lt.is_object()) throw ValidationError("loss_types: expected an object of name -> attack overrides");
    for (const auto& [name, overrides] : lt.items()) s.loss_types[name] = overrides;
  } else {
    s.loss_types["base"] = json::object();
  }
  if (r.has("modes")) {
    s.modes.clear();
    const auto& modes = r.raw("modes");
    if (!modes.is_array()) throw ValidationError("modes: expected a list");
    for (std::size_t i = 0; i < modes.size(); ++i) {
      try {
        s.modes.push_back(attack_mode_from_string(modes[i].get<std::string>()));
      } catch (const std::exception& e) {
        throw ValidationError("modes[" + std::to_string(i) + "]: " + e.what());
      }
    }
  }
  s.aux_beta2 = r.get("aux_beta2", s.aux_beta2);
  if (r.has("synthesis")) {
    FieldReader sy(r.raw("synthesis"), "synthesis");
    s.synthesis.per_class = sy.get("per_class", s.synthesis.per_class);
    s.synthesis.oversample = sy.get("oversample", s.synthesis.oversample);
    s.synthesis.keep_fraction = sy.get("keep_fraction", s.synthesis.keep_fraction);
    s.synthesis.combiner = score_combiner_from_string(sy.get<std::string>("combiner", "mean"));
    sy.finish();
  }
  s.seeds = r.get("seeds", s.seeds);
  s.persist_samples = r.get("persist_samples", s.persist_samples);
  r.finish();
  s.validate();
  return s;
}

void ExperimentSpec::validate() const {
  if (name.empty()) throw ValidationError("name must not be empty");
  if (seeds.empty()) throw ValidationError("seeds must list at least one seed");
  if (modes.empty()) throw ValidationError("modes must list at least one mode");
  if (loss_types.empty()) throw ValidationError("loss_types must not be empty");
  if (zoo.plan.num_models <= 0) throw ValidationError("zoo.num_models must be positive");
  if (zoo.epochs <= 0) throw ValidationError("zoo.epochs must be positive");
  if (zoo.plan.strategy == PartitionStrategy::bootstrap && zoo.plan.samples_per_model <= 0) {
    throw ValidationError("zoo.samples_per_model must be positive for bootstrap");
  }
  if (zoo.plan.strategy == PartitionStrategy::snapshots) {
    if (zoo.snapshot_epochs.empty()) throw ValidationError("zoo.snapshot_epochs must be set for snapshots");
    for (std::size_t i = 0; i < zoo.snapshot_epochs.size(); ++i) {
      if (zoo.snapshot_epochs[i] <= 0 || (i > 0 && zoo.snapshot_epochs[i] <= zoo.snapshot_epochs[i - 1])) {
        throw ValidationError("zoo.snapshot_epochs[" + std::to_string(i) + "]: epochs must be positive and strictly increasing");
      }
    }
  }
  check_classifier(evaluator, "evaluator");
  check_classifier(generic, "generic");
  if (evaluator.arch == zoo.arch) {
    throw ValidationError("evaluator.arch must differ from zoo.arch (independent evaluation classifier)");
  }

  const auto n = zoo_size(zoo);
  static const std::set<std::string> known_methods{"first", "fms", "rs", "distance_pairs", "groups"};
  if (selection.methods.empty()) throw ValidationError("selection.methods must not be empty");
  for (std::size_t i = 0; i < selection.methods.size(); ++i) {
    if (!known_methods.count(selection.methods[i])) {
      throw ValidationError("selection.methods[" + std::to_string(i) + "]: unknown method '" + selection.methods[i] + "'");
    }
  }
  for (std::size_t i = 0; i < selection.sizes.size(); ++i) {
    const auto k = selection.sizes[i];
    if (k < 1 || k > n) {
      throw ValidationError("selection.sizes[" + std::to_string(i) + "]: k=" + std::to_string(k) +
                            " must lie in [1, zoo size " + std::to_string(n) + "]");
    }
  }
  const auto uses = [&](const char* m) {
    return std::find(selection.methods.begin(), selection.methods.end(), m) != selection.methods.end();
  };
  if ((uses("first") || uses("fms") || uses("rs")) && selection.sizes.empty()) {
    throw ValidationError("selection.sizes must not be empty");
  }
  if (uses("distance_pairs") && (selection.pairs < 1 || n < 2 || selection.pairs > n * (n - 1) / 2)) {
    throw ValidationError("selection.pairs must lie in [1, number of model pairs]");
  }
  if (uses("groups")) {
    if (selection.groups.empty()) throw ValidationError("selection.groups must not be empty");
    for (const auto& [g, idx] : selection.groups) {
      if (idx.empty()) throw ValidationError("selection.groups." + g + ": empty group");
      for (const auto i : idx) {
        if (i < 0 || i >= n) throw ValidationError("selection.groups." + g + ": index " + std::to_string(i) + " outside the zoo");
      }
    }
  }
  if (selection.probe_size <= 0) throw ValidationError("selection.probe_size must be positive");
  if (selection.start_rule != "centroid" && selection.start_rule != "first") {
    throw ValidationError("selection.start_rule must be centroid or first");
  }
  if (alignment.method != "identity" && alignment.method != "covariance") {
    throw ValidationError("alignment.method must be identity or covariance");
  }
  if (alignment.score != "covariance" && alignment.score != "correlation") {
    throw ValidationError("alignment.score must be covariance or correlation");
  }
  for (const auto& [lname, overrides] : loss_types) {
    try {
      auto merged = attack.to_json();
      merged.merge_patch(overrides);
      merged["mode"] = "auxiliary";  // beta2 is checked per mode when cells are built
      AttackConfig::from_json(merged);
    } catch (const ValidationError& e) {
      throw ValidationError("loss_types." + lname + ": " + e.what());
    }
  }
  attack.validate();
  if (!(aux_beta2 >= 0)) throw ValidationError("aux_beta2 must be >= 0");
  if (synthesis.per_class <= 0) throw ValidationError("synthesis.per_class must be positive");
  if (synthesis.oversample < 1) throw ValidationError("synthesis.oversample must be >= 1");
  if (!(synthesis.keep_fraction > 0 && synthesis.keep_fraction <= 1)) {
    throw ValidationError("synthesis.keep_fraction must lie in (0,1]");
  }
}

namespace detail {
const std::map<std::string, std::string>& preset_texts();
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : detail::preset_texts()) names.push_back(name);
  return names;
}

json preset(const std::string& name) {
  const auto& texts = detail::preset_texts();
  const auto it = texts.find(name);
  if (it == texts.end()) throw ValidationError("unknown preset '" + name + "'");
  return json::parse(it->second);
}

ExperimentSpec load_spec(const std::string& name_or_path) {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) {
    return ExperimentSpec::from_json(preset(name_or_path));
  }
  std::ifstream in(name_or_path);
  if (!in) {
    std::string known;
    for (const auto& n : names) known += " " + n;
    throw ValidationError("spec '" + name_or_path + "' is neither a file nor a preset (presets:" + known + ")");
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("spec " + name_or_path + " is not valid JSON: " + e.what());
  }
  return ExperimentSpec::from_json(j);
}

}  // namespace einv
