#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "einv/attack.hpp"
#include "einv/correspondence.hpp"
#include "einv/dataset.hpp"
#include "einv/ensemble.hpp"
#include "einv/error.hpp"
#include "einv/evaluation.hpp"
#include "einv/experiment.hpp"
#include "einv/hash.hpp"
#include "einv/model.hpp"
#include "einv/rng.hpp"
#include "einv/selection.hpp"
#include "einv/synthesis.hpp"
#include "einv/zoo.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace einv;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IndexArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

std::vector<std::int64_t> shape_of(const py::array& a) { return {a.shape(), a.shape() + a.ndim()}; }

torch::Tensor to_tensor(const FloatArray& a) {
  return torch::from_blob(const_cast<float*>(a.data()), shape_of(a), torch::kFloat32).clone();
}
torch::Tensor to_tensor(const DoubleArray& a) {
  return torch::from_blob(const_cast<double*>(a.data()), shape_of(a), torch::kFloat64).clone();
}
torch::Tensor to_tensor(const IndexArray& a) {
  return torch::from_blob(const_cast<std::int64_t*>(a.data()), shape_of(a), torch::kInt64).clone();
}

template <typename T>
py::array_t<T> to_numpy(const torch::Tensor& t) {
  const auto c = t.detach().contiguous();
  py::array_t<T> out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
  std::memcpy(out.mutable_data(), c.data_ptr<T>(), sizeof(T) * static_cast<std::size_t>(c.numel()));
  return out;
}

// JSON crosses the boundary as text; the Python side wraps these with json.loads/dumps.
json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad JSON: ") + e.what());
  }
}

SampleBatch make_batch(const FloatArray& images, const IndexArray& labels) {
  SampleBatch b;
  b.images = to_tensor(images);
  b.labels = to_tensor(labels);
  if (b.images.dim() != 4 || b.labels.dim() != 1 || b.images.size(0) != b.labels.size(0)) {
    throw ValidationError("images must be [N,1,28,28] and labels [N]");
  }
  return b;
}

py::tuple batch_tuple(const SampleBatch& b) {
  py::object agg = py::none();
  if (b.aggregate) agg = to_numpy<float>(b.aggregate->to(torch::kFloat32));
  return py::make_tuple(to_numpy<float>(b.images), to_numpy<std::int64_t>(b.labels), agg);
}

std::vector<torch::Tensor> logits_list(const std::vector<DoubleArray>& arrays) {
  std::vector<torch::Tensor> out;
  for (const auto& a : arrays) out.push_back(to_tensor(a));
  return out;
}

struct PyGenerator {
  std::shared_ptr<ConditionalGenerator> g;
  AttackConfig config;
  std::vector<LossBreakdown> trace;
};

}  // namespace

PYBIND11_MODULE(_einv, m) {
  m.doc() = "Model inversion against ensembles of frozen classifiers (C++ core)";

  // Translators run most recent first, so the base class goes in first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<CorruptionError>(m, "CorruptionError", PyExc_RuntimeError);
  py::register_exception<StageFailure>(m, "StageFailure", PyExc_RuntimeError);
  py::register_exception<AttackDiverged>(m, "AttackDiverged", PyExc_ArithmeticError);

  m.def("sha256", [](const py::bytes& b) { return sha256_hex(std::string_view(b)); });
  m.def("derive_seed", py::overload_cast<std::uint64_t, std::string_view>(&derive_seed), py::arg("base"),
        py::arg("stream"));

  m.def(
      "load_dataset",
      [](const std::string& name, const std::string& split, const std::optional<std::string>& data_dir) {
        const auto s = load_dataset(name, split == "test" ? Split::test : Split::train, resolve_data_dir(data_dir));
        return py::make_tuple(to_numpy<float>(s.images), to_numpy<std::int64_t>(s.labels), s.num_classes);
      },
      py::arg("name"), py::arg("split") = "train", py::arg("data_dir") = py::none(),
      "(images [N,1,28,28] float32 in [-1,1], labels [N] int64, num_classes)");

  py::class_<FrozenModel, std::shared_ptr<FrozenModel>>(m, "Model")
      .def_property_readonly("id", &FrozenModel::id)
      .def_property_readonly("arch", &FrozenModel::arch_id)
      .def_property_readonly("num_classes", &FrozenModel::num_classes)
      .def_property_readonly("weights_hash", &FrozenModel::weights_hash)
      .def("logits", [](const FrozenModel& f, const FloatArray& x) { return to_numpy<float>(f.predict_logits(to_tensor(x))); })
      .def("probabilities",
           [](const FrozenModel& f, const FloatArray& x) { return to_numpy<float>(f.predict_probabilities(to_tensor(x))); })
      .def("features",
           [](const FrozenModel& f, const FloatArray& x) { return to_numpy<float>(f.extract_features(to_tensor(x))); })
      .def("save", [](const FrozenModel& f, const fs::path& p) { return save_model(f, p).sha256; })
      .def("__repr__", [](const FrozenModel& f) { return "<Model " + f.id() + " (" + f.arch_id() + ")>"; });

  m.def("load_model", [](const fs::path& p) { return std::make_shared<FrozenModel>(load_model(p)); });
  m.def(
      "random_model",
      [](const std::string& arch, std::int64_t classes, std::uint64_t seed, const std::string& id) {
        auto gen = make_generator(seed);
        return std::make_shared<FrozenModel>(id.empty() ? arch + "-random-" + std::to_string(seed) : id,
                                             make_classifier(arch, classes, gen), Provenance{"", 0, seed});
      },
      py::arg("arch"), py::arg("num_classes") = 10, py::arg("seed") = 0, py::arg("id") = "");
  m.def(
      "train_classifier",
      [](const FloatArray& images, const IndexArray& labels, std::int64_t num_classes, const std::string& arch,
         std::int64_t epochs, std::uint64_t seed, bool augment) {
        auto set = std::make_shared<ImageSet>();
        set->name = "python";
        set->images = to_tensor(images);
        set->labels = to_tensor(labels);
        set->num_classes = num_classes;
        TrainOptions o;
        o.augment = augment ? Augment::affine : Augment::none;
        py::gil_scoped_release nogil;
        return std::make_shared<FrozenModel>(train_classifier(full_view(set), arch, epochs, seed, o));
      },
      py::arg("images"), py::arg("labels"), py::arg("num_classes"), py::arg("arch") = "lenet5",
      py::arg("epochs") = 1, py::arg("seed") = 0, py::arg("augment") = false);
  m.def("supported_archs", &supported_archs);

  // losses on plain logits
  m.def("one_hot_loss", [](const std::vector<DoubleArray>& l) { return one_hot_loss(logits_list(l)).item<double>(); });
  m.def("max_response_loss",
        [](const std::vector<DoubleArray>& l) { return max_response_loss(logits_list(l)).item<double>(); });
  m.def(
      "class_loss",
      [](const std::vector<DoubleArray>& l, const IndexArray& targets,
         std::optional<std::vector<std::vector<std::int64_t>>> maps) {
        auto logits = logits_list(l);
        if (logits.empty()) throw ValidationError("class_loss: no models");
        if (!maps) {
          std::vector<std::int64_t> id(static_cast<std::size_t>(logits.front().size(1)));
          std::iota(id.begin(), id.end(), 0);
          maps = std::vector<std::vector<std::int64_t>>(logits.size(), id);
        }
        return class_loss(logits, to_tensor(targets), *maps).item<double>();
      },
      py::arg("logits"), py::arg("targets"), py::arg("class_maps") = py::none());

  // selection
  m.def(
      "fms_select",
      [](const FloatArray& points, std::size_t k, std::optional<std::vector<std::string>> ids) {
        const auto t = to_tensor(points);
        if (t.dim() != 2) throw ValidationError("points must be [n, d]");
        std::vector<ModelEmbedding> emb;
        for (std::int64_t i = 0; i < t.size(0); ++i) {
          emb.push_back({ids ? ids->at(static_cast<std::size_t>(i)) : std::to_string(i), t[i].contiguous(), "points"});
        }
        return fms_select(emb, k);
      },
      py::arg("points"), py::arg("k"), py::arg("ids") = py::none(),
      "Greedy farthest point sampling over the rows of `points`; returns ids in pick order");
  m.def(
      "select_models",
      [](const std::vector<std::shared_ptr<FrozenModel>>& models, std::size_t k, std::int64_t probe_size,
         std::uint64_t probe_seed) {
        const auto probe = ProbeSet::uniform_noise(probe_size, probe_seed);
        std::vector<ModelEmbedding> emb;
        for (const auto& mm : models) emb.push_back(embed_model(*mm, probe));
        return fms_select(emb, k);
      },
      py::arg("models"), py::arg("k"), py::arg("probe_size") = 10000, py::arg("probe_seed") = 7);
  m.def("random_select",
        [](const std::vector<std::string>& ids, std::size_t k, std::uint64_t seed) { return random_select(ids, k, seed); },
        py::arg("ids"), py::arg("k"), py::arg("seed"));

  // correspondence
  m.def(
      "match_classes",
      [](const DoubleArray& score, double threshold) {
        if (score.ndim() != 2) throw ValidationError("score must be a 2-D array");
        Matrix s(static_cast<std::size_t>(score.shape(0)), static_cast<std::size_t>(score.shape(1)));
        std::copy(score.data(), score.data() + score.size(), s.data.begin());
        return match_classes(s, threshold).to_json().dump();
      },
      py::arg("score"), py::arg("threshold") = 0.0);
  m.def(
      "covariance_matrix",
      [](const FrozenModel& a, const FrozenModel& b, const FloatArray& probe, bool correlation) {
        const auto s = covariance_matrix(a, b, to_tensor(probe), correlation ? ScoreKind::correlation : ScoreKind::covariance);
        py::array_t<double> out({static_cast<py::ssize_t>(s.rows), static_cast<py::ssize_t>(s.cols)});
        std::copy(s.data.begin(), s.data.end(), out.mutable_data());
        return out;
      },
      py::arg("a"), py::arg("b"), py::arg("probe"), py::arg("correlation") = false);

  // attack and synthesis
  py::class_<PyGenerator>(m, "Generator")
      .def_property_readonly("hash", [](const PyGenerator& g) { return generator_hash(*g.g); })
      .def_property_readonly("num_classes", [](const PyGenerator& g) { return g.g->num_classes(); })
      .def_property_readonly("config", [](const PyGenerator& g) { return g.config.to_json().dump(); })
      .def_property_readonly("trace",
                             [](const PyGenerator& g) {
                               std::vector<std::map<std::string, double>> rows;
                               for (const auto& r : g.trace) {
                                 rows.push_back({{"step", static_cast<double>(r.step)},
                                                 {"l_oh", r.l_oh},
                                                 {"l_mr", r.l_mr},
                                                 {"l_class", r.l_class},
                                                 {"l_adv", r.l_adv},
                                                 {"l_g_total", r.l_g_total},
                                                 {"l_d", r.l_d}});
                               }
                               return rows;
                             })
      .def(
          "sample",
          [](PyGenerator& g, const std::vector<std::int64_t>& classes, std::int64_t per_class, std::uint64_t seed) {
            return batch_tuple(generate(*g.g, classes, per_class, seed));
          },
          py::arg("classes"), py::arg("per_class"), py::arg("seed") = 0)
      .def("save", [](const PyGenerator& g, const fs::path& p) { return save_generator(*g.g, g.config, p).sha256; });

  m.def("load_generator", [](const fs::path& p) {
    auto l = load_generator(p);
    return PyGenerator{l.generator, l.config, {}};
  });
  m.def(
      "run_attack",
      [](const std::vector<std::shared_ptr<FrozenModel>>& models, const std::string& config_json,
         std::optional<FloatArray> aux_images) {
        std::vector<ModelPtr> members(models.begin(), models.end());
        const auto ens = identity_ensemble(members);
        const auto config = AttackConfig::from_json(parse_json(config_json));
        std::optional<ImageSet> aux;
        if (aux_images) {
          aux = ImageSet{};
          aux->name = "python-aux";
          aux->images = to_tensor(*aux_images);
          aux->labels = torch::zeros({aux->images.size(0)}, torch::kInt64);
        }
        py::gil_scoped_release nogil;
        auto r = run_attack(ens, config, aux ? &*aux : nullptr);
        return PyGenerator{r.generator, r.config, r.trace};
      },
      py::arg("models"), py::arg("config") = "{}", py::arg("aux_images") = py::none(),
      "Attack models that share one label order; config is AttackConfig JSON");
  m.def(
      "score_samples",
      [](const FloatArray& images, const IndexArray& labels, const std::vector<std::shared_ptr<FrozenModel>>& models,
         const std::string& combiner) {
        std::vector<ModelPtr> members(models.begin(), models.end());
        return batch_tuple(
            score_samples(make_batch(images, labels), identity_ensemble(members), score_combiner_from_string(combiner)));
      },
      py::arg("images"), py::arg("labels"), py::arg("models"), py::arg("combiner") = "mean");
  m.def(
      "filter_top",
      [](const FloatArray& images, const IndexArray& labels, const FloatArray& scores, double keep) {
        auto b = make_batch(images, labels);
        b.aggregate = to_tensor(scores);
        b.scores = b.aggregate->unsqueeze(1);
        return batch_tuple(filter_top(b, keep));
      },
      py::arg("images"), py::arg("labels"), py::arg("scores"), py::arg("keep_fraction"));

  // evaluation
  m.def(
      "evaluate",
      [](const FloatArray& images, const IndexArray& labels, std::shared_ptr<FrozenModel> eva,
         std::shared_ptr<FrozenModel> generic, const FloatArray& train_images, const IndexArray& train_labels,
         std::int64_t shared_class_count) {
        ImageSet train;
        train.name = "python-train";
        train.images = to_tensor(train_images);
        train.labels = to_tensor(train_labels);
        train.num_classes = shared_class_count;
        const auto ctx = EvaluationContext::build(eva, generic, train);
        return build_report(make_batch(images, labels), ctx, shared_class_count).to_json().dump();
      },
      py::arg("images"), py::arg("labels"), py::arg("eva"), py::arg("generic"), py::arg("train_images"),
      py::arg("train_labels"), py::arg("shared_class_count") = 10);

  // experiments
  m.def("preset_names", &preset_names);
  m.def("preset", [](const std::string& name) { return preset(name).dump(); });
  m.def(
      "run_experiment",
      [](const std::string& spec_json, const fs::path& out, const std::optional<std::string>& data_dir, std::size_t jobs,
         bool deterministic) {
        auto spec = ExperimentSpec::from_json(parse_json(spec_json));
        spec.validate();
        py::gil_scoped_release nogil;
        return run_experiment(spec, {out, resolve_data_dir(data_dir), jobs, deterministic}).to_json().dump();
      },
      py::arg("spec"), py::arg("out"), py::arg("data_dir") = py::none(), py::arg("jobs") = 1,
      py::arg("deterministic") = true);
  m.def(
      "render_figures",
      [](const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
        std::vector<RunManifest> ms;
        for (const auto& d : run_dirs) ms.push_back(RunManifest::load(d));
        return render_figures(ms, out_dir);
      },
      py::arg("run_dirs"), py::arg("out_dir"));
}
