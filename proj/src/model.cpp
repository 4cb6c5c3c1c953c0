#include "einv/model.hpp"

#include <cmath>

#include "einv/error.hpp"
#include "einv/hash.hpp"
#include "einv/serialize.hpp"

namespace einv {

namespace F = torch::nn::functional;

namespace {

class LeNet5 : public ClassifierNet {
 public:
  explicit LeNet5(std::int64_t nc) : ClassifierNet("lenet5", nc) {
    c1_ = register_module("c1", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, 6, 5)));
    c2_ = register_module("c2", torch::nn::Conv2d(torch::nn::Conv2dOptions(6, 16, 5)));
    f1_ = register_module("f1", torch::nn::Linear(256, 120));
    f2_ = register_module("f2", torch::nn::Linear(120, 84));
    head_ = register_module("head", torch::nn::Linear(84, nc));
  }
  torch::Tensor features(const torch::Tensor& x) override {
    auto h = F::max_pool2d(torch::relu(c1_(x)), F::MaxPool2dFuncOptions(2));
    h = F::max_pool2d(torch::relu(c2_(h)), F::MaxPool2dFuncOptions(2));
    h = torch::relu(f1_(h.flatten(1)));
    return torch::relu(f2_(h));
  }

 private:
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr};
  torch::nn::Linear f1_{nullptr}, f2_{nullptr};
};

// Residual block without normalization; 1x1 projection when the shape changes.
class PlainBlock : public torch::nn::Module {
 public:
  PlainBlock(std::int64_t in, std::int64_t out, std::int64_t stride) {
    a_ = register_module("a", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)));
    b_ = register_module("b", torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
    if (in != out || stride != 1) {
      shortcut_ = register_module("sc", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride)));
    }
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto y = b_(torch::relu(a_(x)));
    return torch::relu(y + (shortcut_ ? shortcut_(x) : x));
  }

 private:
  torch::nn::Conv2d a_{nullptr}, b_{nullptr}, shortcut_{nullptr};
};

// BatchNorm is deliberately absent: with it, an evaluator trained on natural
// digits reacts to the activation statistics of synthetic images rather than
// their shape, and attack accuracy stops measuring anything.
class ResEval : public ClassifierNet {
 public:
  explicit ResEval(std::int64_t nc, std::int64_t w = 16) : ClassifierNet("resnet18-eval", nc) {
    stem_ = register_module("stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, w, 3).padding(1)));
    l1_ = register_module("l1", std::make_shared<PlainBlock>(w, w, 1));
    l2_ = register_module("l2", std::make_shared<PlainBlock>(w, 2 * w, 2));
    l3_ = register_module("l3", std::make_shared<PlainBlock>(2 * w, 2 * w, 2));
    f1_ = register_module("f1", torch::nn::Linear(2 * w * 49, 128));
    head_ = register_module("head", torch::nn::Linear(128, nc));
    dropout_p_ = 0.3;
  }
  torch::Tensor features(const torch::Tensor& x) override {
    auto h = l3_->forward(l2_->forward(l1_->forward(torch::relu(stem_(x)))));
    return torch::relu(f1_(dropout(h.flatten(1))));
  }

 private:
  torch::nn::Conv2d stem_{nullptr};
  std::shared_ptr<PlainBlock> l1_, l2_, l3_;
  torch::nn::Linear f1_{nullptr};
};

class GenericCnn : public ClassifierNet {
 public:
  explicit GenericCnn(std::int64_t nc) : ClassifierNet("generic-cnn", nc) {
    c1_ = register_module("c1", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, 32, 3).padding(1)));
    c2_ = register_module("c2", torch::nn::Conv2d(torch::nn::Conv2dOptions(32, 64, 3).padding(1)));
    f1_ = register_module("f1", torch::nn::Linear(64 * 49, 128));
    head_ = register_module("head", torch::nn::Linear(128, nc));
  }
  torch::Tensor features(const torch::Tensor& x) override {
    auto h = F::max_pool2d(torch::relu(c1_(x)), F::MaxPool2dFuncOptions(2));
    h = F::max_pool2d(torch::relu(c2_(h)), F::MaxPool2dFuncOptions(2));
    return torch::relu(f1_(h.flatten(1)));
  }

 private:
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr};
  torch::nn::Linear f1_{nullptr};
};

class LogReg : public ClassifierNet {
 public:
  explicit LogReg(std::int64_t nc) : ClassifierNet("logreg", nc) {
    head_ = register_module("head", torch::nn::Linear(784, nc));
  }
  torch::Tensor features(const torch::Tensor& x) override { return x.flatten(1); }
  bool has_feature_tap() const override { return false; }
};

std::int64_t fan_in(const torch::Tensor& weight) {
  std::int64_t receptive = 1;
  for (std::int64_t d = 2; d < weight.dim(); ++d) receptive *= weight.size(d);
  return weight.size(1) * receptive;
}

std::shared_ptr<ClassifierNet> instantiate(const std::string& arch_id, std::int64_t nc) {
  if (nc <= 0) throw ValidationError("num_classes must be positive");
  if (arch_id == "lenet5") return std::make_shared<LeNet5>(nc);
  if (arch_id == "resnet18-eval") return std::make_shared<ResEval>(nc);
  if (arch_id == "generic-cnn") return std::make_shared<GenericCnn>(nc);
  if (arch_id == "logreg") return std::make_shared<LogReg>(nc);
  throw ValidationError("unknown arch_id '" + arch_id + "'");
}

}  // namespace

torch::Tensor ClassifierNet::dropout(const torch::Tensor& x) {
  if (!is_training() || dropout_p_ <= 0.0) return x;
  if (!dropout_gen_) throw Error(arch_id_ + ": dropout needs a generator in training mode");
  const auto keep = at::bernoulli(torch::full_like(x, 1.0 - dropout_p_), *dropout_gen_);
  return x * keep / (1.0 - dropout_p_);
}

const std::vector<std::string>& supported_archs() {
  static const std::vector<std::string> archs{"lenet5", "resnet18-eval", "generic-cnn", "logreg"};
  return archs;
}

void init_parameters(torch::nn::Module& module, at::Generator& gen) {
  torch::NoGradGuard no_grad;
  for (auto& m : module.modules(/*include_self=*/true)) {
    const bool affine = m->as<torch::nn::Linear>() || m->as<torch::nn::Conv2d>() ||
                        m->as<torch::nn::ConvTranspose2d>();
    if (affine) {
      auto w = m->named_parameters(false)["weight"];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in(w)));
      w.uniform_(-bound, bound, gen);
      if (auto* b = m->named_parameters(false).find("bias"); b != nullptr && b->defined()) {
        b->uniform_(-bound, bound, gen);
      }
    } else if (auto* emb = m->as<torch::nn::Embedding>()) {
      emb->weight.normal_(0.0, 1.0, gen);
    } else if (auto* bn = m->as<torch::nn::BatchNorm1d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
    } else if (auto* bn2 = m->as<torch::nn::BatchNorm2d>()) {
      bn2->weight.fill_(1.0);
      bn2->bias.zero_();
    }
  }
}

std::shared_ptr<ClassifierNet> make_classifier(const std::string& arch_id, std::int64_t num_classes,
                                               at::Generator& gen) {
  auto net = instantiate(arch_id, num_classes);
  init_parameters(*net, gen);
  return net;
}

std::shared_ptr<ClassifierNet> clone_classifier(const ClassifierNet& net) {
  auto copy = instantiate(net.arch_id(), net.num_classes());
  load_module(*copy, serialize_module(net), net.arch_id());
  return copy;
}

FrozenModel::FrozenModel(std::string model_id, std::shared_ptr<ClassifierNet> net, Provenance provenance,
                         json metadata)
    : id_(std::move(model_id)), net_(std::move(net)), provenance_(std::move(provenance)),
      metadata_(std::move(metadata)) {
  if (!net_) throw ValidationError("FrozenModel needs a network");
  net_->eval();
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
  weights_hash_ = current_weights_hash();
}

std::int64_t FrozenModel::feature_dim() const {
  if (!net_->has_feature_tap()) throw ValidationError("arch '" + arch_id() + "' declares no penultimate tap");
  return net_->feature_dim();
}

torch::Tensor FrozenModel::logits(const torch::Tensor& x) const { return net_->forward(x); }

torch::Tensor FrozenModel::predict_logits(const torch::Tensor& x, std::int64_t chunk) const {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < x.size(0); i += chunk) {
    parts.push_back(net_->forward(x.slice(0, i, std::min(i + chunk, x.size(0)))));
  }
  if (parts.empty()) return torch::empty({0, num_classes()});
  return torch::cat(parts);
}

torch::Tensor FrozenModel::predict_probabilities(const torch::Tensor& x, std::int64_t chunk) const {
  return torch::softmax(predict_logits(x, chunk), 1);
}

torch::Tensor FrozenModel::extract_features(const torch::Tensor& x, std::int64_t chunk) const {
  const auto dim = feature_dim();
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < x.size(0); i += chunk) {
    parts.push_back(net_->features(x.slice(0, i, std::min(i + chunk, x.size(0)))));
  }
  if (parts.empty()) return torch::empty({0, dim});
  return torch::cat(parts);
}

double FrozenModel::accuracy(const torch::Tensor& images, const torch::Tensor& labels) const {
  if (images.size(0) == 0) throw ValidationError("accuracy of an empty batch");
  return predict_logits(images).argmax(1).eq(labels).to(torch::kFloat64).mean().item<double>();
}

std::vector<std::byte> FrozenModel::weights_blob() const { return serialize_module(*net_); }

std::string FrozenModel::current_weights_hash() const { return sha256_hex(weights_blob()); }

FrozenModel FrozenModel::with_permuted_outputs(const std::vector<std::int64_t>& perm, std::string new_id) const {
  if (static_cast<std::int64_t>(perm.size()) != num_classes()) {
    throw ValidationError("permutation length must equal num_classes");
  }
  std::vector<bool> seen(perm.size(), false);
  for (const auto p : perm) {
    if (p < 0 || p >= num_classes() || seen[p]) throw ValidationError("not a permutation");
    seen[p] = true;
  }
  auto copy = instantiate(arch_id(), num_classes());
  load_module(*copy, weights_blob(), id_);
  {
    torch::NoGradGuard no_grad;
    const auto idx = torch::tensor(perm, torch::kInt64);
    auto& head = copy->head();
    head->weight.copy_(head->weight.index_select(0, idx));
    head->bias.copy_(head->bias.index_select(0, idx));
  }
  auto meta = metadata_;
  meta["permuted_from"] = id_;
  return FrozenModel(std::move(new_id), std::move(copy), provenance_, std::move(meta));
}

FrozenModel FrozenModel::with_metadata(json metadata) const {
  FrozenModel copy = *this;
  copy.metadata_ = std::move(metadata);
  return copy;
}

ArtifactEntry save_model(const FrozenModel& model, const std::filesystem::path& path) {
  ArtifactFile file;
  file.kind = ArtifactKind::model;
  file.header = {{"model_id", model.id()},
                 {"arch_id", model.arch_id()},
                 {"num_classes", model.num_classes()},
                 {"provenance",
                  {{"partition_id", model.provenance().partition_id},
                   {"epoch", model.provenance().epoch},
                   {"seed", model.provenance().seed}}},
                 {"weights_sha256", model.weights_hash()},
                 {"metadata", model.metadata()}};
  file.payload = model.weights_blob();
  return write_artifact(path, file);
}

FrozenModel load_model(const std::filesystem::path& path, const std::optional<std::string>& expected_sha256) {
  const auto file = read_artifact(path, expected_sha256);
  if (file.kind != ArtifactKind::model) throw CorruptionError(path.string() + " is not a model artifact");
  const auto& h = file.header;
  const auto actual = sha256_hex(file.payload);
  const auto expected = h.at("weights_sha256").get<std::string>();
  if (actual != expected) throw CorruptionError(path.string(), expected, actual);
  auto net = instantiate(h.at("arch_id").get<std::string>(), h.at("num_classes").get<std::int64_t>());
  load_module(*net, file.payload, path.string());
  Provenance prov{h.at("provenance").at("partition_id").get<std::string>(),
                  h.at("provenance").at("epoch").get<std::int64_t>(),
                  h.at("provenance").at("seed").get<std::uint64_t>()};
  return FrozenModel(h.at("model_id").get<std::string>(), std::move(net), std::move(prov),
                     h.value("metadata", json::object()));
}

}  // namespace einv
