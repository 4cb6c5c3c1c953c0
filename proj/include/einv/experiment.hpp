#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "einv/attack.hpp"
#include "einv/manifest.hpp"
#include "einv/synthesis.hpp"
#include "einv/zoo.hpp"

namespace einv {

// A stage threw; the manifest already records the partial run.
class StageFailure : public Error {
 public:
  StageFailure(std::string stage, const std::string& what) : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct ClassifierSpec {
  std::string dataset;
  std::string arch;
  std::int64_t epochs = 10;
  std::uint64_t seed = 0;
  Augment augment = Augment::none;
  double learning_rate = 1e-3;
  std::int64_t batch_size = 64;
  double accuracy_floor = 0.0;
};

struct ZooSpec {
  PartitionPlan plan;
  std::string arch = "lenet5";
  std::int64_t epochs = 15;
  std::vector<std::int64_t> snapshot_epochs;  // snapshots strategy only
  std::uint64_t seed = 100;
  double learning_rate = 1e-3;
  std::int64_t batch_size = 64;
  double accuracy_floor = 0.9;
};

// How ensembles are drawn from the zoo.
//   first           the first k zoo models, one ensemble per size
//   fms / rs        farthest model sampling / random sampling per size (rs redraws per seed)
//   distance_pairs  `pairs` two-model ensembles at evenly spaced ranks of pairwise distance
//   groups          explicit named lists of zoo indices
struct SelectionSpec {
  std::vector<std::string> methods{"first"};
  std::vector<std::int64_t> sizes{1};
  std::int64_t pairs = 5;
  std::map<std::string, std::vector<std::int64_t>> groups;
  std::int64_t probe_size = 10000;
  std::uint64_t probe_seed = 7;
  std::string start_rule = "centroid";  // centroid | first
};

// identity: zoo models share one label order. covariance: align_ensemble
// against the first member, threshold calibrated from a disjoint-class null pair
// unless given.
struct AlignmentSpec {
  std::string method = "identity";
  std::string probe = "letters-synth";
  std::optional<double> threshold;
  std::string score = "covariance";
};

struct SynthesisSpec {
  std::int64_t per_class = 100;
  std::int64_t oversample = 10;  // filtered batch drawn from oversample x per_class per class
  double keep_fraction = 0.1;
  ScoreCombiner combiner = ScoreCombiner::mean;
};

struct ExperimentSpec {
  std::string name;
  std::string train_dataset = "mnist";
  std::string aux_dataset = "letters-synth";
  ZooSpec zoo;
  ClassifierSpec evaluator;
  ClassifierSpec generic;
  SelectionSpec selection;
  AlignmentSpec alignment;
  AttackConfig attack;
  std::map<std::string, json> loss_types;  // name -> attack overrides
  std::vector<AttackMode> modes{AttackMode::data_free};
  double aux_beta2 = 1.0;  // beta2 used for auxiliary-mode cells
  SynthesisSpec synthesis;
  std::vector<std::uint64_t> seeds{0};
  bool persist_samples = false;
  json source = json::object();

  // Field errors name the offending path, e.g. "selection.sizes[2]".
  static ExperimentSpec from_json(const json& j);
  void validate() const;
};

// Presets shipped with the library (same content as presets/*.json).
std::vector<std::string> preset_names();
json preset(const std::string& name);
ExperimentSpec load_spec(const std::string& name_or_path);

struct RunOptions {
  std::filesystem::path out;
  std::filesystem::path data_dir;
  std::size_t jobs = 1;
  bool deterministic = true;
};

// Executes zoo -> select -> align -> attack -> generate -> filter -> evaluate.
// Every stage is keyed by a content hash and skipped when its outputs verify.
RunManifest run_experiment(const ExperimentSpec& spec, const RunOptions& options);

// Writes the comparison table (text + CSV) and the figure PNGs for the given runs.
std::vector<std::filesystem::path> render_figures(const std::vector<RunManifest>& manifests,
                                                  const std::filesystem::path& out_dir);

}  // namespace einv
