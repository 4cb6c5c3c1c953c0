// einv: command-line front end for the ensemble inversion pipeline.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <numeric>

#include "einv/correspondence.hpp"
#include "einv/dataset.hpp"
#include "einv/ensemble.hpp"
#include "einv/error.hpp"
#include "einv/evaluation.hpp"
#include "einv/experiment.hpp"
#include "einv/hash.hpp"
#include "einv/image.hpp"
#include "einv/log.hpp"
#include "einv/rng.hpp"
#include "einv/selection.hpp"

namespace fs = std::filesystem;
using namespace einv;

namespace {

struct Globals {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string data_dir;
  bool deterministic = true;

  // Output directory of a single-step command.
  fs::path dir() const { return out.empty() ? fs::path("runs/cli") : fs::path(out); }
  fs::path data() const { return data_dir.empty() ? resolve_data_dir() : fs::path(data_dir); }
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, rounded(j).dump(2) + "\n"); }

// Dataset references: "mnist", "mnist:test" or "mnist-test".
// "mnist", "mnist:test" or "mnist-test" -> (name, split); bare names mean train.
std::pair<std::string, Split> parse_ref(const std::string& ref) {
  for (const std::string sep : {":", "-"}) {
    for (const auto& [suffix, s] : {std::pair{"train", Split::train}, std::pair{"test", Split::test}}) {
      const auto tail = sep + suffix;
      if (ref.size() > tail.size() && ref.compare(ref.size() - tail.size(), tail.size(), tail) == 0) {
        return {ref.substr(0, ref.size() - tail.size()), s};
      }
    }
  }
  return {ref, Split::train};
}

ImageSet load_ref(const std::string& ref, const fs::path& dir) {
  const auto [name, split] = parse_ref(ref);
  return load_dataset(name, split, dir);
}

Augment parse_augment(const std::string& s) {
  if (s == "none") return Augment::none;
  if (s == "affine") return Augment::affine;
  throw ValidationError("--augment must be none or affine");
}

// Every subcommand leaves a manifest next to its outputs.
void record(const Globals& g, const std::string& command, const json& config, const std::vector<ArtifactEntry>& outputs,
            const json& metrics = json::object(), const std::map<std::string, std::string>& inputs = {}) {
  const fs::path root(g.dir());
  RunManifest m = RunManifest::exists(root) ? RunManifest::load(root) : RunManifest{};
  if (m.run_id.empty()) m.run_id = root.filename().string();
  m.config[command] = config;
  m.config["seed"] = g.seed;
  m.config["deterministic"] = g.deterministic;
  for (const auto& [k, v] : inputs) m.inputs[k] = v;
  for (const auto& a : outputs) m.record(root, a);
  if (!metrics.empty()) m.metrics[command] = metrics;
  m.status = {{"state", "complete"}, {"command", command}};
  m.save(root);
}

ArtifactEntry text_entry(const fs::path& path, const std::string& kind) { return {path.string(), sha256_file(path), kind}; }

// zoo.json lists models by path relative to the zoo directory.
std::vector<std::pair<fs::path, std::string>> zoo_listing(const fs::path& dir) {
  const auto j = read_json(dir / "zoo.json");
  std::vector<std::pair<fs::path, std::string>> out;
  for (const auto& m : j.at("models")) out.emplace_back(dir / m.at("path").get<std::string>(), m.at("sha256").get<std::string>());
  return out;
}

ModelPtr load_shared(const fs::path& path, const std::optional<std::string>& sha = std::nullopt) {
  return std::make_shared<const FrozenModel>(load_model(path, sha));
}

// ensemble.json: members with paths and hashes plus the class maps.
Ensemble load_ensemble(const fs::path& path) {
  const auto j = read_json(path);
  Ensemble e;
  for (const auto& m : j.at("members")) {
    e.members.push_back(load_shared(path.parent_path() / m.at("path").get<std::string>(), m.at("file_sha256").get<std::string>()));
  }
  e.class_maps = j.at("class_maps").get<std::vector<std::vector<std::int64_t>>>();
  e.shared_class_count = j.at("shared_class_count").get<std::int64_t>();
  e.canonical_labels = j.value("canonical_labels", std::vector<std::int64_t>{});
  e.validate();
  return e;
}

json ensemble_json(const Ensemble& e, const std::vector<fs::path>& paths, const fs::path& base) {
  json members = json::array();
  for (std::size_t i = 0; i < e.members.size(); ++i) {
    members.push_back({{"id", e.members[i]->id()},
                       {"path", fs::relative(fs::absolute(paths[i]), fs::absolute(base)).generic_string()},
                       {"file_sha256", sha256_file(paths[i])},
                       {"weights_sha256", e.members[i]->weights_hash()}});
  }
  return {{"members", members},
          {"class_maps", e.class_maps},
          {"shared_class_count", e.shared_class_count},
          {"canonical_labels", e.canonical_labels}};
}

std::vector<std::int64_t> parse_int_list(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw ValidationError("'" + s + "' is not a comma-separated list of integers");
    }
  }
  return out;
}

void save_grid(const fs::path& path, const SampleBatch& batch, std::int64_t per_row_max = 10) {
  // up to ten samples per class, one class per row
  std::vector<torch::Tensor> rows;
  const auto labels = batch.labels.contiguous();
  const auto* lp = labels.data_ptr<std::int64_t>();
  std::map<std::int64_t, std::vector<std::int64_t>> by_class;
  for (std::int64_t i = 0; i < batch.size(); ++i) {
    if (static_cast<std::int64_t>(by_class[lp[i]].size()) < per_row_max) by_class[lp[i]].push_back(i);
  }
  std::int64_t columns = 1;
  for (auto& [_, idx] : by_class) columns = std::max<std::int64_t>(columns, idx.size());
  for (auto& [_, idx] : by_class) {
    auto row = batch.images.index_select(0, torch::tensor(idx, torch::kInt64));
    if (row.size(0) < columns) row = torch::cat({row, torch::full({columns - row.size(0), 1, 28, 28}, -1.0f)});
    rows.push_back(row);
  }
  save_image_grid(path, torch::cat(rows), columns);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"einv: model inversion attacks against ensembles of frozen classifiers"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--out", g.out, "Output directory (default runs/cli; experiment run: parent of run dirs, default runs)");
  app.add_option("--seed", g.seed, "Base seed")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Parallel training jobs")->capture_default_str();
  app.add_option("--data-dir", g.data_dir, "Dataset directory (default: $EIL_DATA_DIR, then ./data)");
  app.add_flag("--deterministic,!--no-deterministic", g.deterministic, "Bitwise-reproducible kernels (default on)");
  app.fallthrough();

  // zoo
  auto* zoo = app.add_subcommand("zoo", "Train models under attack");
  zoo->require_subcommand(1);
  struct {
    std::string dataset = "mnist", strategy = "disjoint", arch = "lenet5", augment = "none", snapshot_epochs = "5,10,15,20";
    std::int64_t num_models = 4, samples_per_model = 0, epochs = 15, batch = 64;
    std::uint64_t shuffle_seed = 1;
    double lr = 1e-3, floor = 0.9;
  } zo;
  auto add_train_opts = [&](CLI::App* c) {
    c->add_option("--dataset", zo.dataset, "Training data, e.g. mnist or mnist:test")->capture_default_str();
    c->add_option("--arch", zo.arch, "Architecture")->capture_default_str();
    c->add_option("--augment", zo.augment, "none | affine")->capture_default_str();
    c->add_option("--batch-size", zo.batch)->capture_default_str();
    c->add_option("--lr", zo.lr)->capture_default_str();
    c->add_option("--accuracy-floor", zo.floor, "Held-out accuracy below this is flagged")->capture_default_str();
    c->add_option("--shuffle-seed", zo.shuffle_seed)->capture_default_str();
  };
  auto* zoo_train = zoo->add_subcommand("train", "Partition the data and train one model per partition");
  add_train_opts(zoo_train);
  zoo_train->add_option("--strategy", zo.strategy, "disjoint | bootstrap")->capture_default_str();
  zoo_train->add_option("--num-models", zo.num_models)->capture_default_str();
  zoo_train->add_option("--samples-per-model", zo.samples_per_model, "Bootstrap draw size");
  zoo_train->add_option("--epochs", zo.epochs)->capture_default_str();
  auto* zoo_snap = zoo->add_subcommand("snapshots", "One training run, one model per listed epoch");
  add_train_opts(zoo_snap);
  zoo_snap->add_option("--epochs", zo.snapshot_epochs, "Comma-separated snapshot epochs")->capture_default_str();

  auto run_zoo = [&](bool snapshots) {
    auto full = std::make_shared<const ImageSet>(load_ref(zo.dataset, g.data()));
    const auto [zoo_name, zoo_split] = parse_ref(zo.dataset);
    auto held = std::make_shared<const ImageSet>(
        load_dataset(zoo_name, zoo_split == Split::test ? Split::train : Split::test, g.data()));
    seed_all(g.seed, g.deterministic);
    TrainOptions o;
    o.batch_size = zo.batch;
    o.learning_rate = zo.lr;
    o.augment = parse_augment(zo.augment);
    o.held_out = held;
    o.accuracy_floor = zo.floor;
    std::vector<FrozenModel> models;
    if (snapshots) {
      const auto views = build_partitions(full, {PartitionStrategy::snapshots, 1, 0, zo.shuffle_seed});
      models = snapshot_train(views.front(), zo.arch, parse_int_list(zo.snapshot_epochs), g.seed, o);
    } else {
      const auto strategy = zo.strategy == "disjoint" ? PartitionStrategy::disjoint_split
                                                      : partition_strategy_from_string(zo.strategy);
      const auto views = build_partitions(full, {strategy, zo.num_models, zo.samples_per_model, zo.shuffle_seed});
      std::vector<std::optional<FrozenModel>> slots(views.size());
      parallel_for(views.size(), g.jobs, [&](std::size_t i) {
        slots[i] = train_classifier(views[i], zo.arch, zo.epochs, g.seed + i, o);
      });
      for (auto& s : slots) models.push_back(std::move(*s));
    }
    const fs::path root(g.dir());
    RunLayout{root}.create();
    json listing = json::array();
    std::vector<ArtifactEntry> outputs;
    for (const auto& m : models) {
      const auto rel = "models/" + m.id() + ".einv";
      auto entry = save_model(m, root / rel);
      outputs.push_back(entry);
      listing.push_back({{"id", m.id()},
                         {"path", rel},
                         {"sha256", entry.sha256},
                         {"heldout_accuracy", m.metadata().value("heldout_accuracy", 0.0)},
                         {"below_accuracy_floor", m.metadata().value("below_accuracy_floor", false)}});
      std::cout << m.id() << "  held-out accuracy " << m.metadata().value("heldout_accuracy", 0.0) << "\n";
    }
    write_json(root / "zoo.json", {{"dataset", zo.dataset}, {"arch", zo.arch}, {"models", listing}});
    outputs.push_back(text_entry(root / "zoo.json", "report"));
    record(g, snapshots ? "zoo snapshots" : "zoo train",
           {{"dataset", zo.dataset}, {"arch", zo.arch}, {"strategy", snapshots ? "snapshots" : zo.strategy},
            {"num_models", zo.num_models}, {"epochs", snapshots ? json(zo.snapshot_epochs) : json(zo.epochs)}},
           outputs, {{"models", listing}}, {{"dataset:" + zo.dataset, full->hash()}});
  };
  zoo_train->callback([&] { run_zoo(false); });
  zoo_snap->callback([&] { run_zoo(true); });

  // select
  auto* sel = app.add_subcommand("select", "Choose an ensemble from a zoo");
  sel->require_subcommand(1);
  std::string sel_zoo;
  std::size_t sel_k = 2;
  std::uint64_t probe_seed = 7;
  std::int64_t probe_size = 10000;
  for (const char* method : {"fms", "rs"}) {
    auto* c = sel->add_subcommand(method, method == std::string("fms") ? "Farthest model sampling" : "Random sampling");
    c->add_option("--zoo", sel_zoo, "Zoo directory (holds zoo.json)")->required();
    c->add_option("--k", sel_k, "Ensemble size")->required();
    c->add_option("--probe-seed", probe_seed)->capture_default_str();
    c->add_option("--probe-size", probe_size)->capture_default_str();
    c->callback([&, m = std::string(method)] {
      const auto listing = zoo_listing(sel_zoo);
      if (sel_k < 1 || sel_k > listing.size()) {
        throw ValidationError("--k " + std::to_string(sel_k) + " must lie in [1, " + std::to_string(listing.size()) + "]");
      }
      seed_all(g.seed, g.deterministic);
      std::vector<ModelPtr> models;
      std::vector<std::string> ids;
      for (const auto& [p, sha] : listing) {
        models.push_back(load_shared(p, sha));
        ids.push_back(models.back()->id());
      }
      const auto probe = ProbeSet::uniform_noise(probe_size, probe_seed);
      std::vector<ModelEmbedding> emb;
      for (const auto& mp : models) emb.push_back(embed_model(*mp, probe));
      const auto picked = m == "fms" ? fms_select(emb, sel_k) : random_select(ids, sel_k, g.seed);
      json paths = json::array();
      for (const auto& id : picked) {
        const auto i = std::find(ids.begin(), ids.end(), id) - ids.begin();
        paths.push_back(fs::absolute(listing[i].first).string());
      }
      const json out = {{"method", m},
                        {"k", sel_k},
                        {"model_ids", picked},
                        {"model_paths", paths},
                        {"probe_seed", probe_seed},
                        {"probe_size", probe_size},
                        {"min_pairwise_distance", sel_k > 1 ? json(min_pairwise_distance(emb, picked)) : json(nullptr)}};
      fs::create_directories(g.dir());
      write_json(g.dir() / "selection.json", out);
      std::cout << rounded(out).dump(2) << "\n";
      record(g, "select " + m, {{"zoo", sel_zoo}, {"k", sel_k}, {"probe_seed", probe_seed}},
             {text_entry(g.dir() / "selection.json", "report")}, out);
    });
  }

  // align
  auto* align = app.add_subcommand("align", "Match output classes across models and write ensemble.json");
  std::vector<std::string> align_models;
  std::string align_selection, align_reference, align_probe = "letters-synth", align_score = "covariance";
  std::optional<double> align_threshold;
  bool align_identity = false;
  align->add_option("--models", align_models, "Model files")->delimiter(',');
  align->add_option("--selection", align_selection, "selection.json from `select` instead of --models");
  align->add_option("--reference", align_reference, "Reference model file or id (default: first model)");
  align->add_option("--probe", align_probe, "Probe dataset (any images; classes are ignored)")->capture_default_str();
  align->add_option("--threshold", align_threshold, "Sharedness threshold on the score (default: 0)");
  align->add_option("--score", align_score, "covariance | correlation")->capture_default_str();
  align->add_flag("--identity", align_identity, "Models already share one label order");
  align->callback([&] {
    std::vector<fs::path> paths;
    if (!align_selection.empty()) {
      const auto sel_json = read_json(align_selection);
      for (const auto& p : sel_json.at("model_paths")) paths.emplace_back(p.get<std::string>());
    }
    for (const auto& p : align_models) paths.emplace_back(p);
    if (paths.empty()) throw ValidationError("align needs --models or --selection");
    seed_all(g.seed, g.deterministic);
    std::vector<ModelPtr> models;
    for (const auto& p : paths) models.push_back(load_shared(p));
    std::size_t ref = 0;
    if (!align_reference.empty()) {
      for (std::size_t i = 0; i < models.size(); ++i) {
        if (models[i]->id() == align_reference || fs::weakly_canonical(paths[i]) == fs::weakly_canonical(align_reference)) ref = i;
      }
    }
    const fs::path root(g.dir());
    fs::create_directories(root);
    std::vector<ArtifactEntry> outputs;
    json out;
    if (align_identity) {
      out = ensemble_json(identity_ensemble(models), paths, root);
    } else {
      if (align_score != "covariance" && align_score != "correlation") throw ValidationError("--score must be covariance or correlation");
      const auto probe = load_ref(align_probe, g.data());
      AlignOptions o;
      o.threshold = align_threshold.value_or(0.0);
      o.score = align_score == "correlation" ? ScoreKind::correlation : ScoreKind::covariance;
      const auto result = align_ensemble(models, *models[ref], probe.images, o);
      out = ensemble_json(result.ensemble, paths, root);
      json per = json::array();
      for (std::size_t i = 0; i < result.per_member.size(); ++i) {
        per.push_back(result.per_member[i].to_json());
        const auto& s = result.per_member[i].score_matrix;
        std::vector<std::vector<double>> rows(s.rows, std::vector<double>(s.cols));
        for (std::size_t r = 0; r < s.rows; ++r) {
          for (std::size_t c = 0; c < s.cols; ++c) rows[r][c] = s(r, c);
        }
        const auto png = root / ("scores-" + std::to_string(i) + ".png");
        save_heatmap(png, rows);
        outputs.push_back(text_entry(png, "plot"));
      }
      out["correspondence"] = per;
      out["reference"] = models[ref]->id();
      out["threshold"] = o.threshold;
    }
    write_json(root / "ensemble.json", out);
    outputs.push_back(text_entry(root / "ensemble.json", "report"));
    std::cout << "shared classes: " << out.at("shared_class_count") << "\n";
    record(g, "align", {{"models", align_models}, {"selection", align_selection}, {"identity", align_identity},
                        {"probe", align_probe}, {"threshold", align_threshold.value_or(0.0)}},
           outputs, {{"shared_class_count", out.at("shared_class_count")}});
  });

  // attack
  auto* attack = app.add_subcommand("attack", "Train a conditional generator against an ensemble");
  attack->require_subcommand(1);
  auto* attack_run = attack->add_subcommand("run", "Run one attack");
  std::string att_ensemble, att_mode = "data-free", att_config, att_aux = "letters-synth", att_name = "generator";
  std::optional<double> a1, a2, b1, b2, att_lr;
  std::optional<std::int64_t> att_steps, att_batch;
  attack_run->add_option("--ensemble", att_ensemble, "ensemble.json")->required();
  attack_run->add_option("--mode", att_mode, "data-free | auxiliary")->capture_default_str();
  attack_run->add_option("--config", att_config, "AttackConfig JSON; flags override it");
  attack_run->add_option("--alpha1", a1);
  attack_run->add_option("--alpha2", a2);
  attack_run->add_option("--beta1", b1);
  attack_run->add_option("--beta2", b2, "Auxiliary mode only (default 1)");
  attack_run->add_option("--steps", att_steps);
  attack_run->add_option("--batch-size", att_batch);
  attack_run->add_option("--lr", att_lr);
  attack_run->add_option("--aux", att_aux, "Auxiliary dataset")->capture_default_str();
  attack_run->add_option("--name", att_name, "Checkpoint file stem")->capture_default_str();
  attack_run->callback([&] {
    json cfg = att_config.empty() ? json::object() : read_json(att_config);
    cfg["mode"] = att_mode;
    if (a1) cfg["alpha1"] = *a1;
    if (a2) cfg["alpha2"] = *a2;
    if (b1) cfg["beta1"] = *b1;
    if (b2) cfg["beta2"] = *b2;
    else if (attack_mode_from_string(att_mode) == AttackMode::auxiliary && !cfg.contains("beta2")) cfg["beta2"] = 1.0;
    if (att_steps) cfg["steps"] = *att_steps;
    if (att_batch) cfg["batch_size"] = *att_batch;
    if (att_lr) cfg["optimizer"]["learning_rate"] = *att_lr;
    cfg["seed"] = g.seed;
    const auto config = AttackConfig::from_json(cfg);
    const auto ensemble = load_ensemble(att_ensemble);
    seed_all(g.seed, g.deterministic);
    std::optional<ImageSet> aux;
    std::map<std::string, std::string> inputs;
    if (config.mode == AttackMode::auxiliary) {
      aux = load_ref(att_aux, g.data());
      inputs["dataset:" + att_aux] = aux->hash();
    }
    const auto result = run_attack(ensemble, config, aux ? &*aux : nullptr);
    const fs::path root(g.dir());
    RunLayout{root}.create();
    json members = json::array();
    for (const auto& m : ensemble.members) members.push_back(m->weights_hash());
    std::vector<ArtifactEntry> outputs{save_generator(*result.generator, config, root / "models" / (att_name + ".einv"),
                                                      {{"members", members}, {"class_maps", ensemble.class_maps}})};
    write_loss_trace(root / "loss_trace.csv", result.trace);
    outputs.push_back(text_entry(root / "loss_trace.csv", "report"));
    const auto& last = result.trace.back();
    std::cout << "final l_g_total " << last.l_g_total << "  l_class " << last.l_class << "\n";
    record(g, "attack run", config.to_json(), outputs, {{"final_l_g_total", last.l_g_total}}, inputs);
  });

  // synth
  auto* synth = app.add_subcommand("synth", "Sample and filter synthetic images");
  synth->require_subcommand(1);
  std::string syn_g, syn_samples, syn_ensemble, syn_classes, syn_combiner = "mean";
  std::string gen_name = "samples", filter_name = "filtered";
  std::int64_t per_class = 100;
  double keep = 0.1;
  auto* synth_gen = synth->add_subcommand("generate", "Draw samples from a generator checkpoint");
  synth_gen->add_option("--g", syn_g, "Generator checkpoint")->required();
  synth_gen->add_option("--per-class", per_class)->capture_default_str();
  synth_gen->add_option("--classes", syn_classes, "Comma-separated canonical classes (default: all)");
  synth_gen->add_option("--ensemble", syn_ensemble, "Score samples against this ensemble.json");
  synth_gen->add_option("--name", gen_name, "Output stem")->capture_default_str();
  synth_gen->callback([&] {
    const auto loaded = load_generator(syn_g);
    std::vector<std::int64_t> classes = syn_classes.empty() ? std::vector<std::int64_t>{} : parse_int_list(syn_classes);
    if (classes.empty()) {
      classes.resize(loaded.generator->num_classes());
      std::iota(classes.begin(), classes.end(), 0);
    }
    seed_all(g.seed, g.deterministic);
    auto batch = generate(*loaded.generator, classes, per_class, g.seed);
    if (!syn_ensemble.empty()) batch = score_samples(batch, load_ensemble(syn_ensemble), score_combiner_from_string(syn_combiner));
    const fs::path root(g.dir());
    RunLayout{root}.create();
    std::vector<ArtifactEntry> outputs{save_sample_batch(batch, root / "samples" / (gen_name + ".einv"))};
    save_grid(root / "plots" / (gen_name + ".png"), batch);
    outputs.push_back(text_entry(root / "plots" / (gen_name + ".png"), "plot"));
    std::cout << batch.size() << " samples -> " << (root / "samples" / (gen_name + ".einv")).string() << "\n";
    record(g, "synth generate", {{"generator", syn_g}, {"per_class", per_class}, {"classes", classes}}, outputs);
  });
  auto* synth_filter = synth->add_subcommand("filter", "Keep the top-scoring fraction per class");
  synth_filter->add_option("--samples", syn_samples, "Sample batch")->required();
  synth_filter->add_option("--ensemble", syn_ensemble, "ensemble.json (needed when the batch is unscored)");
  synth_filter->add_option("--keep", keep, "Fraction kept per class")->capture_default_str();
  synth_filter->add_option("--combiner", syn_combiner, "mean | min")->capture_default_str();
  synth_filter->add_option("--name", filter_name, "Output stem")->capture_default_str();
  synth_filter->callback([&] {
    auto batch = load_sample_batch(syn_samples);
    if (!batch.scored() || (!syn_ensemble.empty())) {
      if (syn_ensemble.empty()) throw ValidationError("batch carries no scores; pass --ensemble");
      batch = score_samples(batch, load_ensemble(syn_ensemble), score_combiner_from_string(syn_combiner));
    }
    const auto kept = filter_top(batch, keep);
    const fs::path root(g.dir());
    RunLayout{root}.create();
    std::vector<ArtifactEntry> outputs{save_sample_batch(kept, root / "samples" / (filter_name + ".einv"))};
    save_grid(root / "plots" / (filter_name + ".png"), kept);
    outputs.push_back(text_entry(root / "plots" / (filter_name + ".png"), "plot"));
    std::cout << "kept " << kept.size() << " of " << batch.size() << "\n";
    record(g, "synth filter", {{"samples", syn_samples}, {"keep", keep}, {"combiner", syn_combiner}}, outputs);
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Score synthetic samples");
  eval->require_subcommand(1);
  auto* eval_report = eval->add_subcommand("report", "Attack accuracy and feature/kNN distances");
  std::string ev_samples, ev_eva, ev_generic, ev_train = "mnist-train", ev_ensemble;
  eval_report->add_option("--samples", ev_samples, "Sample batch")->required();
  eval_report->add_option("--eva", ev_eva, "Evaluation classifier")->required();
  eval_report->add_option("--generic", ev_generic, "Generic feature extractor")->required();
  eval_report->add_option("--train", ev_train, "Training set of the attacked models")->capture_default_str();
  eval_report->add_option("--ensemble", ev_ensemble, "ensemble.json: refuses an evaluator inside it, supplies class labels");
  eval_report->callback([&] {
    const auto batch = load_sample_batch(ev_samples);
    const auto eva = load_shared(ev_eva);
    const auto generic = load_shared(ev_generic);
    const auto train = load_ref(ev_train, g.data());
    std::optional<Ensemble> ens;
    if (!ev_ensemble.empty()) ens = load_ensemble(ev_ensemble);
    seed_all(g.seed, g.deterministic);
    const auto ctx = EvaluationContext::build(eva, generic, train);
    const auto shared = ens ? ens->shared_class_count : batch.labels.max().item<std::int64_t>() + 1;
    const auto report = build_report(batch, ctx, shared, ens ? ens->canonical_labels : std::vector<std::int64_t>{},
                                     ens ? &*ens : nullptr);
    const fs::path root(g.dir());
    RunLayout{root}.create();
    const auto j = report.to_json();
    write_json(root / "reports" / "report.json", j);
    std::ostringstream csv, txt;
    csv << "metric,value,metric_key\n";
    const std::vector<std::tuple<std::string, double, std::string>> rows{
        {"attack_accuracy", report.accuracy.overall, "attack_accuracy.overall"},
        {"feature_distance_eva", report.feature_distance_eva, "feature_distance.eva"},
        {"knn_distance_eva", report.knn_distance_eva, "knn_distance.eva"},
        {"feature_distance_generic", report.feature_distance_generic, "feature_distance.generic"},
        {"knn_distance_generic", report.knn_distance_generic, "knn_distance.generic"}};
    for (const auto& [name, v, key] : rows) {
      csv << name << "," << round6(v) << "," << key << "\n";
      char line[96];
      std::snprintf(line, sizeof line, "%-26s %12.6f\n", name.c_str(), v);
      txt << line;
    }
    for (std::size_t c = 0; c < report.accuracy.per_class.size(); ++c) {
      csv << "accuracy_class_" << c << "," << round6(report.accuracy.per_class[c]) << ",attack_accuracy.per_class[" << c << "]\n";
    }
    write_text_file(root / "reports" / "report.csv", csv.str());
    write_text_file(root / "reports" / "report.txt", txt.str());
    std::cout << txt.str();
    // per-class accuracy bars
    const int n = static_cast<int>(report.accuracy.per_class.size());
    Canvas canvas(std::max(320, 80 + 40 * n), 300);
    const int base = 250, top = 40;
    canvas.text(10, 10, "PER-CLASS ATTACK ACCURACY", {30, 30, 30}, 2);
    canvas.line(50, base, 50 + 40 * n, base, {30, 30, 30});
    for (int c = 0; c < n; ++c) {
      const int h = static_cast<int>((base - top) * report.accuracy.per_class[c]);
      canvas.fill_rect(56 + 40 * c, base - h, 84 + 40 * c, base, {31, 119, 180});
      canvas.text(66 + 40 * c, base + 8, std::to_string(c), {30, 30, 30});
    }
    canvas.save_png(root / "plots" / "report.png");
    std::vector<ArtifactEntry> outputs;
    for (const auto& p : {root / "reports" / "report.json", root / "reports" / "report.csv", root / "reports" / "report.txt"}) {
      outputs.push_back(text_entry(p, "report"));
    }
    outputs.push_back(text_entry(root / "plots" / "report.png", "plot"));
    record(g, "eval report", {{"samples", ev_samples}, {"eva", ev_eva}, {"generic", ev_generic}, {"train", ev_train}},
           outputs, j, {{"dataset:" + ev_train, train.hash()}});
  });

  // experiment
  auto* exp = app.add_subcommand("experiment", "Declarative end-to-end runs");
  exp->require_subcommand(1);
  auto* exp_run = exp->add_subcommand("run", "Run a spec file or preset; completed stages are skipped");
  std::string spec_ref;
  std::string exp_seeds;
  exp_run->add_option("spec", spec_ref, "Spec JSON file or preset name")->required();
  exp_run->add_option("--seeds", exp_seeds, "Comma-separated seeds overriding the spec");
  exp_run->callback([&] {
    auto spec = load_spec(spec_ref);
    if (!exp_seeds.empty()) {
      spec.seeds.clear();
      for (const auto s : parse_int_list(exp_seeds)) spec.seeds.push_back(static_cast<std::uint64_t>(s));
      spec.source["seeds"] = spec.seeds;
    }
    RunOptions o;
    o.out = g.out.empty() ? fs::path("runs") : fs::path(g.out);
    o.data_dir = g.data();
    o.jobs = g.jobs;
    o.deterministic = g.deterministic;
    const auto m = run_experiment(spec, o);
    std::cout << "run " << m.run_id << " complete: " << m.status.at("executed_stages") << " stages executed, "
              << m.status.at("skipped_stages") << " cached\n";
    std::ifstream summary(o.out / spec.name / "plots" / "summary.txt");
    std::cout << summary.rdbuf();
  });
  auto* exp_render = exp->add_subcommand("render", "Tables and figures from one or more run directories");
  std::vector<std::string> run_dirs;
  exp_render->add_option("runs", run_dirs, "Run directories")->required();
  exp_render->callback([&] {
    std::vector<RunManifest> ms;
    for (const auto& d : run_dirs) {
      auto m = RunManifest::load(d);
      m.verify(d);
      ms.push_back(std::move(m));
    }
    for (const auto& p : render_figures(ms, g.out.empty() ? fs::path("plots") : fs::path(g.out))) std::cout << p.string() << "\n";
  });
  auto* exp_presets = exp->add_subcommand("presets", "List the shipped presets, or print one");
  std::string preset_name;
  exp_presets->add_option("name", preset_name);
  exp_presets->callback([&] {
    if (preset_name.empty()) {
      for (const auto& n : preset_names()) std::cout << n << "\n";
    } else {
      std::cout << preset(preset_name).dump(2) << "\n";
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const CorruptionError& e) {
    std::cerr << "artifact corruption: " << e.what() << "\n";
    return 4;
  } catch (const StageFailure& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
