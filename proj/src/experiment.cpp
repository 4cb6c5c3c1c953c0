#include "einv/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "einv/correspondence.hpp"
#include "einv/dataset.hpp"
#include "einv/ensemble.hpp"
#include "einv/error.hpp"
#include "einv/evaluation.hpp"
#include "einv/hash.hpp"
#include "einv/image.hpp"
#include "einv/log.hpp"
#include "einv/rng.hpp"
#include "einv/selection.hpp"

namespace einv {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMetricsSchema = "einv-metrics/1";

std::string key_of(const json& slice) { return sha256_hex(slice.dump()); }
std::string short_key(const std::string& key) { return key.substr(0, 16); }

json classifier_json(const ClassifierSpec& c) {
  return {{"dataset", c.dataset},         {"arch", c.arch},
          {"epochs", c.epochs},           {"seed", c.seed},
          {"augment", c.augment == Augment::affine ? "affine" : "none"},
          {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"accuracy_floor", c.accuracy_floor}};
}

json zoo_json(const ZooSpec& z) {
  return {{"strategy", to_string(z.plan.strategy)},
          {"num_models", z.plan.num_models},
          {"samples_per_model", z.plan.samples_per_model},
          {"shuffle_seed", z.plan.shuffle_seed},
          {"arch", z.arch},
          {"epochs", z.epochs},
          {"snapshot_epochs", z.snapshot_epochs},
          {"seed", z.seed},
          {"learning_rate", z.learning_rate},
          {"batch_size", z.batch_size},
          {"accuracy_floor", z.accuracy_floor}};
}

ArtifactEntry text_artifact(const fs::path& path, const std::string& text, const std::string& kind) {
  write_text_file(path, text);
  return {path.string(), sha256_file(path), kind};
}

// Stage cache on top of the manifest. A stage entry is reused when it completed
// and every output it lists is present with its recorded hash. A missing output
// re-runs the stage; a present output with a different hash is corruption.
class StageCache {
 public:
  StageCache(RunManifest& manifest, fs::path root) : m_(manifest), root_(std::move(root)) {}

  struct Outcome {
    std::vector<ArtifactEntry> outputs;
    json result = json::object();
  };

  template <typename Fn>
  json run(const std::string& stage, const std::string& key, Fn&& fn) {
    if (auto hit = lookup(key)) {
      ++skipped_;
      log_info("stage ", stage, " ", short_key(key), ": cached");
      return *hit;
    }
    log_info("stage ", stage, " ", short_key(key), ": running");
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      m_.stages[key] = {{"stage", stage}, {"status", "failed"}, {"error", e.what()}};
      m_.status = {{"state", "failed"}, {"failed_stage", stage}, {"stage_key", key}, {"error", e.what()}};
      m_.save(root_);
      if (dynamic_cast<const CorruptionError*>(&e)) throw;
      throw StageFailure(stage, e.what());
    }
    json outputs = json::array();
    for (auto a : out.outputs) {
      const fs::path p(a.path);
      if (p.is_absolute() || a.path.rfind(root_.string(), 0) == 0) a.path = fs::relative(p, root_).generic_string();
      outputs.push_back(a.path);
      m_.record(root_, a);
    }
    m_.stages[key] = {{"stage", stage}, {"status", "complete"}, {"outputs", outputs}, {"result", out.result}};
    ++executed_;
    m_.save(root_);
    return out.result;
  }

  fs::path path(const std::string& relative) const { return root_ / relative; }
  const ArtifactEntry& entry(const std::string& relative) const {
    const auto* a = m_.find(relative);
    if (!a) throw CorruptionError("manifest lists no artifact " + relative);
    return *a;
  }
  std::size_t executed() const { return executed_; }
  std::size_t skipped() const { return skipped_; }

 private:
  std::optional<json> lookup(const std::string& key) {
    if (!m_.stages.contains(key)) return std::nullopt;
    const auto& s = m_.stages[key];
    if (s.value("status", "") != "complete") return std::nullopt;
    for (const auto& p : s.at("outputs")) {
      const auto rel = p.get<std::string>();
      const auto* a = m_.find(rel);
      if (!a || !fs::exists(root_ / rel)) return std::nullopt;
      verify_file_hash(root_ / rel, a->sha256);
    }
    return s.at("result");
  }

  RunManifest& m_;
  fs::path root_;
  std::size_t executed_ = 0;
  std::size_t skipped_ = 0;
};

class DataCache {
 public:
  explicit DataCache(fs::path dir) : dir_(std::move(dir)) {}

  // "name:train" / "name:test", or a bare name meaning the train split.
  std::shared_ptr<const ImageSet> get(const std::string& ref) {
    auto it = sets_.find(ref);
    if (it != sets_.end()) return it->second;
    const auto colon = ref.find(':');
    const auto name = ref.substr(0, colon);
    const auto split = colon == std::string::npos || ref.substr(colon + 1) == "train" ? Split::train : Split::test;
    auto set = std::make_shared<const ImageSet>(load_dataset(name, split, dir_));
    sets_[ref] = set;
    return set;
  }

  // The other split of the same dataset.
  std::shared_ptr<const ImageSet> held_out(const std::string& ref) {
    const auto colon = ref.find(':');
    const auto name = ref.substr(0, colon);
    const bool is_test = colon != std::string::npos && ref.substr(colon + 1) == "test";
    return get(name + (is_test ? ":train" : ":test"));
  }

 private:
  fs::path dir_;
  std::map<std::string, std::shared_ptr<const ImageSet>> sets_;
};

struct Group {
  std::string name;
  std::string method;
  std::int64_t k = 0;
  std::vector<std::int64_t> fixed;  // zoo indices, unless drawn per seed
  bool per_seed = false;
  std::optional<double> distance;  // distance_pairs only

  std::vector<std::int64_t> members(std::uint64_t seed, const std::vector<std::string>& ids) const {
    if (!per_seed) return fixed;
    const auto picked = random_select(ids, static_cast<std::size_t>(k), derive_seed(seed, static_cast<std::uint64_t>(k)));
    std::vector<std::int64_t> out;
    for (const auto& id : picked) {
      out.push_back(std::find(ids.begin(), ids.end(), id) - ids.begin());
    }
    return out;
  }
};

double min_distance(const Matrix& d, const std::vector<std::int64_t>& idx) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = a + 1; b < idx.size(); ++b) best = std::min(best, d(idx[a], idx[b]));
  }
  return best;
}

json mean_std(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (const double x : v) ss += (x - mean) * (x - mean);
  const double std = v.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  return {{"mean", mean}, {"std", std}, {"per_seed", v}};
}

const std::vector<std::pair<std::string, std::vector<std::string>>>& report_metrics() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> m{
      {"attack_accuracy", {"attack_accuracy", "overall"}},
      {"feature_distance_eva", {"feature_distance", "eva"}},
      {"knn_distance_eva", {"knn_distance", "eva"}},
      {"feature_distance_generic", {"feature_distance", "generic"}},
      {"knn_distance_generic", {"knn_distance", "generic"}},
  };
  return m;
}

AttackConfig cell_config(const ExperimentSpec& spec, const json& overrides, AttackMode mode, std::uint64_t seed) {
  auto merged = spec.attack.to_json();
  merged.merge_patch(overrides);
  merged["mode"] = "auxiliary";
  auto cfg = AttackConfig::from_json(merged);
  cfg.mode = mode;
  if (mode == AttackMode::data_free) {
    cfg.beta2 = 0.0;
  } else if (!overrides.contains("beta2")) {
    cfg.beta2 = spec.aux_beta2;
  }
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

}  // namespace

RunManifest run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
  spec.validate();
  const RunLayout layout{options.out / spec.name};
  layout.create();
  RunManifest manifest = RunManifest::exists(layout.root) ? RunManifest::load(layout.root) : RunManifest{};
  manifest.run_id = spec.name;
  manifest.config = {{"spec", spec.source}, {"seeds", spec.seeds}, {"deterministic", options.deterministic}};
  manifest.status = {{"state", "running"}};
  manifest.metrics = json::object();
  manifest.save(layout.root);

  seed_all(0, options.deterministic);
  StageCache stages(manifest, layout.root);
  DataCache data(options.data_dir.empty() ? resolve_data_dir() : options.data_dir);
  const auto load_data = [&](const std::string& ref) {
    try {
      return data.get(ref);
    } catch (const std::exception& e) {
      manifest.status = {{"state", "failed"}, {"failed_stage", "data"}, {"error", e.what()}};
      manifest.save(layout.root);
      throw StageFailure("data", e.what());
    }
  };

  // zoo
  const auto train = load_data(spec.train_dataset + ":train");
  const auto train_held = load_data(spec.train_dataset + ":test");
  manifest.inputs["dataset:" + spec.train_dataset + ":train"] = train->hash();
  const auto zkey = key_of({{"stage", "zoo"}, {"zoo", zoo_json(spec.zoo)}, {"data", train->hash()}, {"held_out", train_held->hash()}});
  const auto zoo_result = stages.run("zoo", zkey, [&] {
    TrainOptions o;
    o.batch_size = spec.zoo.batch_size;
    o.learning_rate = spec.zoo.learning_rate;
    o.held_out = train_held;
    o.accuracy_floor = spec.zoo.accuracy_floor;
    const auto views = build_partitions(train, spec.zoo.plan);
    std::vector<FrozenModel> trained;
    if (spec.zoo.plan.strategy == PartitionStrategy::snapshots) {
      trained = snapshot_train(views.front(), spec.zoo.arch, spec.zoo.snapshot_epochs, spec.zoo.seed, o);
    } else {
      std::vector<std::optional<FrozenModel>> slots(views.size());
      parallel_for(views.size(), options.jobs, [&](std::size_t i) {
        slots[i] = train_classifier(views[i], spec.zoo.arch, spec.zoo.epochs, spec.zoo.seed + i, o);
      });
      for (auto& s : slots) trained.push_back(std::move(*s));
    }
    StageCache::Outcome out;
    json models = json::array();
    for (std::size_t i = 0; i < trained.size(); ++i) {
      const auto rel = "models/zoo-" + short_key(zkey) + "-" + std::to_string(i) + ".einv";
      out.outputs.push_back(save_model(trained[i], layout.root / rel));
      models.push_back({{"path", rel},
                        {"id", trained[i].id()},
                        {"weights_sha256", trained[i].weights_hash()},
                        {"heldout_accuracy", trained[i].metadata().value("heldout_accuracy", 0.0)},
                        {"below_accuracy_floor", trained[i].metadata().value("below_accuracy_floor", false)}});
    }
    out.result = {{"models", models}};
    return out;
  });
  std::vector<ModelPtr> zoo;
  std::vector<std::string> zoo_ids;
  for (const auto& m : zoo_result.at("models")) {
    const auto rel = m.at("path").get<std::string>();
    zoo.push_back(std::make_shared<const FrozenModel>(load_model(layout.root / rel, stages.entry(rel).sha256)));
    zoo_ids.push_back(zoo.back()->id());
  }
  manifest.metrics["zoo"] = zoo_result.at("models");

  // evaluator and generic feature extractor
  const auto train_side_classifier = [&](const std::string& stage, const ClassifierSpec& c) {
    const auto set = load_data(c.dataset);
    const auto held = data.held_out(c.dataset);
    const auto key = key_of({{"stage", stage}, {"spec", classifier_json(c)}, {"data", set->hash()}, {"held_out", held->hash()}});
    const auto result = stages.run(stage, key, [&] {
      TrainOptions o;
      o.batch_size = c.batch_size;
      o.learning_rate = c.learning_rate;
      o.augment = c.augment;
      o.held_out = held;
      o.accuracy_floor = c.accuracy_floor;
      o.model_id = stage + "-" + c.arch;
      auto model = train_classifier(full_view(set, c.dataset), c.arch, c.epochs, c.seed, o);
      const auto rel = "models/" + stage + "-" + short_key(key) + ".einv";
      StageCache::Outcome out;
      out.outputs.push_back(save_model(model, layout.root / rel));
      out.result = {{"path", rel},
                    {"id", model.id()},
                    {"heldout_accuracy", model.metadata().value("heldout_accuracy", 0.0)},
                    {"below_accuracy_floor", model.metadata().value("below_accuracy_floor", false)}};
      return out;
    });
    manifest.metrics[stage] = result;
    const auto rel = result.at("path").get<std::string>();
    return std::make_shared<const FrozenModel>(load_model(layout.root / rel, stages.entry(rel).sha256));
  };
  const auto eva = train_side_classifier("evaluator", spec.evaluator);
  const auto generic = train_side_classifier("generic", spec.generic);
  const auto eval_ctx = EvaluationContext::build(eva, generic, *train);

  // model distances on the noise probe
  const auto& methods = spec.selection.methods;
  const auto uses = [&](const char* m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  std::optional<Matrix> distances;
  std::vector<ModelEmbedding> embeddings;
  if (uses("fms") || uses("rs") || uses("distance_pairs")) {
    json zoo_hashes = json::array();
    for (const auto& m : zoo) zoo_hashes.push_back(m->weights_hash());
    const auto key = key_of({{"stage", "distances"}, {"zoo", zoo_hashes},
                             {"probe_size", spec.selection.probe_size}, {"probe_seed", spec.selection.probe_seed}});
    const auto probe = ProbeSet::uniform_noise(spec.selection.probe_size, spec.selection.probe_seed);
    for (const auto& m : zoo) embeddings.push_back(embed_model(*m, probe));
    const auto result = stages.run("distances", key, [&] {
      const auto d = pairwise_distances(embeddings);
      const auto rel = "reports/distances-" + short_key(key) + ".json";
      StageCache::Outcome out;
      const json body = {{"ids", zoo_ids}, {"probe_hash", probe.hash}, {"distances", d.to_json()}};
      out.outputs.push_back(text_artifact(layout.root / rel, rounded(body).dump(2) + "\n", "report"));
      out.result = body;
      return out;
    });
    distances = Matrix::from_json(result.at("distances"));
  }

  // ensembles
  std::vector<Group> groups;
  const auto n = static_cast<std::int64_t>(zoo.size());
  for (const auto& method : methods) {
    if (method == "first" || method == "fms" || method == "rs") {
      for (const auto k : spec.selection.sizes) {
        Group g{method + "-k" + std::to_string(k), method, k, {}, false, std::nullopt};
        if (method == "first") {
          g.fixed.resize(k);
          std::iota(g.fixed.begin(), g.fixed.end(), 0);
        } else if (method == "fms") {
          FmsOptions o;
          o.start_rule = spec.selection.start_rule == "first" ? StartRule::first_index : StartRule::farthest_from_centroid;
          for (const auto& id : fms_select(embeddings, static_cast<std::size_t>(k), o)) {
            g.fixed.push_back(std::find(zoo_ids.begin(), zoo_ids.end(), id) - zoo_ids.begin());
          }
        } else {
          g.per_seed = true;
        }
        groups.push_back(g);
      }
    } else if (method == "distance_pairs") {
      // Pairs sorted by distance; picks at evenly spaced ranks span the range.
      std::vector<std::tuple<double, std::int64_t, std::int64_t>> pairs;
      for (std::int64_t a = 0; a < n; ++a) {
        for (std::int64_t b = a + 1; b < n; ++b) pairs.emplace_back((*distances)(a, b), a, b);
      }
      std::sort(pairs.begin(), pairs.end());
      const auto count = spec.selection.pairs;
      for (std::int64_t i = 0; i < count; ++i) {
        const auto rank = count == 1 ? 0
                                     : static_cast<std::size_t>(std::llround(static_cast<double>(i) *
                                                                             static_cast<double>(pairs.size() - 1) /
                                                                             static_cast<double>(count - 1)));
        const auto& [d, a, b] = pairs[rank];
        Group g{"pair-" + std::to_string(i), method, 2, {a, b}, false, d};
        groups.push_back(g);
      }
    } else if (method == "groups") {
      for (const auto& [name, idx] : spec.selection.groups) {
        groups.push_back({name, method, static_cast<std::int64_t>(idx.size()), idx, false, std::nullopt});
      }
    }
  }

  const bool any_aux = std::find(spec.modes.begin(), spec.modes.end(), AttackMode::auxiliary) != spec.modes.end();
  std::shared_ptr<const ImageSet> aux;
  if (any_aux) {
    aux = load_data(spec.aux_dataset + ":train");
    manifest.inputs["dataset:" + spec.aux_dataset + ":train"] = aux->hash();
  }

  // Canonical classes. Identity: the zoo's label order. Covariance: matched
  // against the first member on the probe set, threshold calibrated from a
  // pair of models trained on disjoint halves of the classes.
  std::optional<double> align_threshold = spec.alignment.threshold;
  if (spec.alignment.method == "covariance" && !align_threshold) {
    const auto key = key_of({{"stage", "null-threshold"}, {"data", train->hash()}, {"zoo", zoo_json(spec.zoo)},
                             {"probe", spec.alignment.probe}, {"score", spec.alignment.score}});
    const auto probe_set = load_data(spec.alignment.probe + ":train");
    const auto result = stages.run("null-threshold", key, [&] {
      const auto half = train->num_classes / 2;
      std::vector<std::int64_t> lo(train->num_classes, -1), hi(train->num_classes, -1);
      for (std::int64_t c = 0; c < train->num_classes; ++c) (c < half ? lo : hi)[c] = c < half ? c : c - half;
      TrainOptions o;
      o.accuracy_floor = 0.0;
      auto a = train_classifier(full_view(std::make_shared<const ImageSet>(remap_labels(*train, lo, half, "lower-half"))),
                                spec.zoo.arch, spec.zoo.epochs, spec.zoo.seed, o);
      auto b = train_classifier(
          full_view(std::make_shared<const ImageSet>(remap_labels(*train, hi, train->num_classes - half, "upper-half"))),
          spec.zoo.arch, spec.zoo.epochs, spec.zoo.seed + 1, o);
      const auto kind = spec.alignment.score == "correlation" ? ScoreKind::correlation : ScoreKind::covariance;
      const auto scores = covariance_matrix(a, b, probe_set->images, kind);
      StageCache::Outcome out;
      out.result = {{"threshold", null_threshold(scores)}, {"null_scores", scores.to_json()}};
      return out;
    });
    align_threshold = result.at("threshold").get<double>();
    manifest.metrics["alignment_threshold"] = *align_threshold;
  }
  const auto build_ensemble = [&](const std::vector<std::int64_t>& idx, const std::string& group) {
    std::vector<ModelPtr> members;
    for (const auto i : idx) members.push_back(zoo[i]);
    if (spec.alignment.method == "identity") return identity_ensemble(members);
    json hashes = json::array();
    for (const auto& m : members) hashes.push_back(m->weights_hash());
    const auto probe_set = load_data(spec.alignment.probe + ":train");
    AlignOptions o;
    o.threshold = *align_threshold;
    o.score = spec.alignment.score == "correlation" ? ScoreKind::correlation : ScoreKind::covariance;
    const auto key = key_of({{"stage", "align"}, {"members", hashes}, {"probe", probe_set->hash()},
                             {"threshold", o.threshold}, {"score", spec.alignment.score}});
    const auto result = stages.run("align", key, [&] {
      auto aligned = align_ensemble(members, *members.front(), probe_set->images, o);
      StageCache::Outcome out;
      const auto rel = "reports/ensemble-" + short_key(key) + ".json";
      json per = json::array();
      for (const auto& r : aligned.per_member) per.push_back(r.to_json());
      const json body = {{"group", group}, {"ensemble", aligned.ensemble.to_json()}, {"correspondence", per}};
      out.outputs.push_back(text_artifact(layout.root / rel, rounded(body).dump(2) + "\n", "report"));
      out.result = {{"class_maps", aligned.ensemble.class_maps},
                    {"shared_class_count", aligned.ensemble.shared_class_count},
                    {"canonical_labels", aligned.ensemble.canonical_labels}};
      return out;
    });
    Ensemble e;
    e.members = members;
    e.class_maps = result.at("class_maps").get<std::vector<std::vector<std::int64_t>>>();
    e.shared_class_count = result.at("shared_class_count").get<std::int64_t>();
    e.canonical_labels = result.at("canonical_labels").get<std::vector<std::int64_t>>();
    e.validate();
    return e;
  };

  // attack, synthesis and evaluation cells
  json cells = json::object();
  for (const auto mode : spec.modes) {
    for (const auto& [loss, overrides] : spec.loss_types) {
      for (const auto& group : groups) {
        for (const auto seed : spec.seeds) {
          const auto cell = to_string(mode) + "/" + loss + "/" + group.name + "/s" + std::to_string(seed);
          const auto idx = group.members(seed, zoo_ids);
          const auto ensemble = build_ensemble(idx, group.name);
          const auto config = cell_config(spec, overrides, mode, seed);
          json member_hashes = json::array();
          for (const auto& m : ensemble.members) member_hashes.push_back(m->weights_hash());

          const auto akey = key_of({{"stage", "attack"},
                                    {"config", config.to_json()},
                                    {"members", member_hashes},
                                    {"class_maps", ensemble.class_maps},
                                    {"aux", mode == AttackMode::auxiliary ? json(aux->hash()) : json(nullptr)}});
          const auto gen_rel = "models/gen-" + short_key(akey) + ".einv";
          const auto attack_result = stages.run("attack", akey, [&] {
            auto r = run_attack(ensemble, config, mode == AttackMode::auxiliary ? aux.get() : nullptr);
            StageCache::Outcome out;
            out.outputs.push_back(save_generator(*r.generator, config, layout.root / gen_rel,
                                                 {{"cell", cell}, {"members", member_hashes}}));
            const auto trace_rel = "reports/trace-" + short_key(akey) + ".csv";
            write_loss_trace(layout.root / trace_rel, r.trace);
            out.outputs.push_back({trace_rel, sha256_file(layout.root / trace_rel), "report"});
            const auto& last = r.trace.empty() ? LossBreakdown{} : r.trace.back();
            out.result = {{"generator", gen_rel},
                          {"generator_hash", generator_hash(*r.generator)},
                          {"final", {{"l_oh", last.l_oh}, {"l_mr", last.l_mr}, {"l_class", last.l_class},
                                     {"l_adv", last.l_adv}, {"l_g_total", last.l_g_total}, {"l_d", last.l_d}}}};
            return out;
          });

          const auto& gen_entry = stages.entry(gen_rel);
          const auto ekey = key_of({{"stage", "eval"},
                                    {"generator", gen_entry.sha256},
                                    {"eva", eva->weights_hash()},
                                    {"generic", generic->weights_hash()},
                                    {"training_set", train->hash()},
                                    {"members", member_hashes},
                                    {"class_maps", ensemble.class_maps},
                                    {"canonical_labels", ensemble.canonical_labels},
                                    {"synthesis", {{"per_class", spec.synthesis.per_class},
                                                   {"oversample", spec.synthesis.oversample},
                                                   {"keep_fraction", spec.synthesis.keep_fraction},
                                                   {"combiner", to_string(spec.synthesis.combiner)}}},
                                    {"persist", spec.persist_samples},
                                    {"seed", seed}});
          const auto eval_result = stages.run("eval", ekey, [&] {
            auto g = load_generator(layout.root / gen_rel, gen_entry.sha256).generator;
            std::vector<std::int64_t> classes = config.target_classes;
            if (classes.empty()) {
              classes.resize(ensemble.shared_class_count);
              std::iota(classes.begin(), classes.end(), 0);
            }
            const auto raw = generate(*g, classes, spec.synthesis.per_class, derive_seed(seed, "raw-samples"));
            const auto pool = score_samples(
                generate(*g, classes, spec.synthesis.per_class * spec.synthesis.oversample, derive_seed(seed, "oversample")),
                ensemble, spec.synthesis.combiner);
            const auto filtered = filter_top(pool, spec.synthesis.keep_fraction);
            const auto raw_report = build_report(raw, eval_ctx, ensemble.shared_class_count, ensemble.canonical_labels, &ensemble);
            const auto filt_report =
                build_report(filtered, eval_ctx, ensemble.shared_class_count, ensemble.canonical_labels, &ensemble);
            StageCache::Outcome out;
            const auto k16 = short_key(ekey);
            const json body = {{"cell", cell}, {"raw", raw_report.to_json()}, {"filtered", filt_report.to_json()}};
            out.outputs.push_back(text_artifact(layout.root / ("reports/cell-" + k16 + ".json"),
                                                rounded(body).dump(2) + "\n", "report"));
            // First ten raw samples of every class, one class per row.
            std::vector<torch::Tensor> rows;
            for (std::size_t c = 0; c < classes.size(); ++c) {
              rows.push_back(raw.images.narrow(0, static_cast<std::int64_t>(c) * spec.synthesis.per_class,
                                               std::min<std::int64_t>(10, spec.synthesis.per_class)));
            }
            const auto png_rel = "plots/samples-" + k16 + ".png";
            save_image_grid(layout.root / png_rel, torch::cat(rows), std::min<std::int64_t>(10, spec.synthesis.per_class));
            out.outputs.push_back({png_rel, sha256_file(layout.root / png_rel), "plot"});
            if (spec.persist_samples) {
              out.outputs.push_back(save_sample_batch(raw, layout.root / ("samples/raw-" + k16 + ".einv")));
              out.outputs.push_back(save_sample_batch(filtered, layout.root / ("samples/filtered-" + k16 + ".einv")));
            }
            out.result = rounded(json{{"raw", raw_report.to_json()}, {"filtered", filt_report.to_json()}});
            return out;
          });

          json c = {{"mode", to_string(mode)},
                    {"loss", loss},
                    {"group", group.name},
                    {"method", group.method},
                    {"k", group.k},
                    {"seed", seed},
                    {"members", ensemble.member_ids()},
                    {"member_indices", idx},
                    {"attack", attack_result},
                    {"raw", eval_result.at("raw")},
                    {"filtered", eval_result.at("filtered")}};
          if (group.distance) c["pair_distance"] = *group.distance;
          if (distances && idx.size() > 1) c["min_pairwise_distance"] = min_distance(*distances, idx);
          cells[cell] = c;
          manifest.metrics["cells"] = cells;
          manifest.save(layout.root);
        }
      }
    }
  }

  // Aggregates: one entry per (mode, loss, group), mean and sample std over seeds.
  json summary = json::object();
  for (const auto mode : spec.modes) {
    for (const auto& [loss, _] : spec.loss_types) {
      for (const auto& group : groups) {
        const auto key = to_string(mode) + "/" + loss + "/" + group.name;
        json entry = {{"mode", to_string(mode)}, {"loss", loss}, {"group", group.name},
                      {"method", group.method}, {"k", group.k}, {"seeds", spec.seeds}};
        if (group.distance) entry["pair_distance"] = *group.distance;
        for (const char* kind : {"raw", "filtered"}) {
          json agg = json::object();
          for (const auto& [metric, path] : report_metrics()) {
            std::vector<double> v;
            for (const auto seed : spec.seeds) {
              v.push_back(cells.at(key + "/s" + std::to_string(seed)).at(kind).at(path[0]).at(path[1]).get<double>());
            }
            agg[metric] = mean_std(v);
          }
          entry[kind] = agg;
        }
        if (distances && group.k > 1) {
          std::vector<double> v;
          for (const auto seed : spec.seeds) {
            v.push_back(cells.at(key + "/s" + std::to_string(seed)).at("min_pairwise_distance").get<double>());
          }
          entry["min_pairwise_distance"] = mean_std(v);
        }
        summary[key] = entry;
      }
    }
  }
  manifest.metrics["schema"] = kMetricsSchema;
  manifest.metrics["summary"] = summary;
  manifest.status = {{"state", "complete"}, {"executed_stages", stages.executed()}, {"skipped_stages", stages.skipped()}};
  manifest.metrics = rounded(manifest.metrics);
  manifest.save(layout.root);

  for (const auto& p : render_figures({manifest}, layout.plots())) {
    manifest.record(layout.root, {p.string(), sha256_file(p), "plot"});
  }
  manifest.save(layout.root);
  return manifest;
}

}  // namespace einv
