#include "einv/attack.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "einv/hash.hpp"
#include "einv/log.hpp"
#include "einv/model.hpp"
#include "einv/rng.hpp"
#include "einv/serialize.hpp"

namespace einv {

namespace F = torch::nn::functional;

std::string to_string(AttackMode mode) { return mode == AttackMode::data_free ? "data_free" : "auxiliary"; }

AttackMode attack_mode_from_string(const std::string& name) {
  if (name == "data_free" || name == "data-free") return AttackMode::data_free;
  if (name == "auxiliary" || name == "aux") return AttackMode::auxiliary;
  throw ValidationError("attack.mode: unknown mode '" + name + "' (data_free | auxiliary)");
}

namespace {

std::string to_string(Conditioning c) { return c == Conditioning::multiply ? "multiply" : "concat"; }

Conditioning conditioning_from_string(const std::string& name) {
  if (name == "multiply") return Conditioning::multiply;
  if (name == "concat") return Conditioning::concat;
  throw ValidationError("attack.conditioning: unknown value '" + name + "' (multiply | concat)");
}

void check_batch(const std::vector<torch::Tensor>& per_model, const char* what) {
  if (per_model.empty()) throw ValidationError(std::string(what) + ": no models");
  for (const auto& t : per_model) {
    if (t.dim() != 2 || t.size(0) == 0) throw ValidationError(std::string(what) + ": empty batch");
  }
}

float value(const torch::Tensor& t) { return t.defined() ? t.detach().item<float>() : 0.0f; }

}  // namespace

void AttackConfig::validate() const {
  const std::pair<const char*, double> weights[] = {
      {"alpha1", alpha1}, {"alpha2", alpha2}, {"beta1", beta1}, {"beta2", beta2}};
  for (const auto& [name, w] : weights) {
    if (!std::isfinite(w) || w < 0) throw ValidationError(std::string("attack.") + name + " must be finite and >= 0");
  }
  if (mode == AttackMode::data_free && beta2 != 0.0) {
    throw ValidationError("attack.beta2 must be 0 in data_free mode");
  }
  if (latent_dim <= 0) throw ValidationError("attack.latent_dim must be positive");
  if (batch_size <= 0) throw ValidationError("attack.batch_size must be positive");
  if (steps < 0) throw ValidationError("attack.steps must be >= 0");
  if (generator_width <= 0) throw ValidationError("attack.generator_width must be positive");
  if (optimizer.name != "adam" && optimizer.name != "sgd") {
    throw ValidationError("attack.optimizer.name: unknown optimizer '" + optimizer.name + "' (adam | sgd)");
  }
  if (!(optimizer.learning_rate > 0) || !std::isfinite(optimizer.learning_rate)) {
    throw ValidationError("attack.optimizer.learning_rate must be positive");
  }
}

json AttackConfig::to_json() const {
  return {{"alpha1", alpha1},
          {"alpha2", alpha2},
          {"beta1", beta1},
          {"beta2", beta2},
          {"mode", einv::to_string(mode)},
          {"latent_dim", latent_dim},
          {"batch_size", batch_size},
          {"steps", steps},
          {"optimizer",
           {{"name", optimizer.name},
            {"learning_rate", optimizer.learning_rate},
            {"beta1", optimizer.beta1},
            {"beta2", optimizer.beta2}}},
          {"target_classes", target_classes},
          {"seed", seed},
          {"conditioning", to_string(conditioning)},
          {"generator_width", generator_width}};
}

AttackConfig AttackConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("attack: expected an object");
  static const std::set<std::string> known{"alpha1",     "alpha2", "beta1",          "beta2", "mode",
                                           "latent_dim", "batch_size", "steps",      "optimizer",
                                           "target_classes", "seed", "conditioning", "generator_width"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError("attack." + key + ": unknown field");
  }
  AttackConfig c;
  try {
    c.alpha1 = j.value("alpha1", c.alpha1);
    c.alpha2 = j.value("alpha2", c.alpha2);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    if (j.contains("mode")) c.mode = attack_mode_from_string(j.at("mode").get<std::string>());
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      c.optimizer.name = o.value("name", c.optimizer.name);
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
    }
    c.target_classes = j.value("target_classes", c.target_classes);
    c.seed = j.value("seed", c.seed);
    if (j.contains("conditioning")) c.conditioning = conditioning_from_string(j.at("conditioning").get<std::string>());
    c.generator_width = j.value("generator_width", c.generator_width);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("attack: ") + e.what());
  }
  return c;
}

ConditionalGenerator::ConditionalGenerator(std::int64_t latent_dim, std::int64_t num_classes,
                                           Conditioning conditioning, std::int64_t width)
    : latent_dim_(latent_dim), num_classes_(num_classes), width_(width), conditioning_(conditioning) {
  if (latent_dim <= 0 || num_classes <= 0 || width <= 0) throw ValidationError("bad generator shape");
  const auto in = conditioning == Conditioning::multiply ? latent_dim : 2 * latent_dim;
  embed_ = register_module("embed", torch::nn::Embedding(num_classes, latent_dim));
  fc_ = register_module("fc", torch::nn::Linear(in, 2 * width * 49));
  bn0_ = register_module("bn0", torch::nn::BatchNorm1d(2 * width * 49));
  up1_ = register_module("up1", torch::nn::ConvTranspose2d(
                                    torch::nn::ConvTranspose2dOptions(2 * width, width, 4).stride(2).padding(1)));
  bn1_ = register_module("bn1", torch::nn::BatchNorm2d(width));
  up2_ = register_module(
      "up2", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(width, 1, 4).stride(2).padding(1)));
}

torch::Tensor ConditionalGenerator::forward(const torch::Tensor& classes, const torch::Tensor& z) {
  const auto e = embed_(classes);
  auto h = conditioning_ == Conditioning::multiply ? z * e : torch::cat({z, e}, 1);
  h = torch::relu(bn0_(fc_(h))).view({-1, 2 * width_, 7, 7});
  h = torch::relu(bn1_(up1_(h)));
  return torch::tanh(up2_(h));
}

Discriminator::Discriminator(std::int64_t width) {
  c1_ = register_module("c1", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, width, 4).stride(2).padding(1)));
  c2_ = register_module("c2", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 2 * width, 4).stride(2).padding(1)));
  fc_ = register_module("fc", torch::nn::Linear(2 * width * 49, 1));
}

torch::Tensor Discriminator::forward(const torch::Tensor& x) {
  const auto lrelu = F::LeakyReLUFuncOptions().negative_slope(0.2);
  auto h = F::leaky_relu(c1_(x), lrelu);
  h = F::leaky_relu(c2_(h), lrelu);
  return fc_(h.flatten(1)).squeeze(1);
}

torch::Tensor one_hot_loss(const std::vector<torch::Tensor>& logits_per_model) {
  check_batch(logits_per_model, "one_hot_loss");
  torch::Tensor total;
  for (const auto& y : logits_per_model) {
    const auto t = y.detach().argmax(1);  // constant target: no gradient path through t
    const auto l = F::cross_entropy(y, t);
    total = total.defined() ? total + l : l;
  }
  return total;
}

torch::Tensor max_response_loss(const std::vector<torch::Tensor>& activations_per_model) {
  check_batch(activations_per_model, "max_response_loss");
  torch::Tensor total;
  for (const auto& a : activations_per_model) {
    const auto l = -std::get<0>(a.max(1)).mean();
    total = total.defined() ? total + l : l;
  }
  return total;
}

torch::Tensor class_loss(const std::vector<torch::Tensor>& logits_per_model, const torch::Tensor& targets,
                         const std::vector<std::vector<std::int64_t>>& class_maps) {
  check_batch(logits_per_model, "class_loss");
  if (class_maps.size() != logits_per_model.size()) throw ValidationError("class_loss: one class map per model");
  const auto shared = static_cast<std::int64_t>(class_maps.front().size());
  if (targets.numel() > 0 && (targets.min().item<std::int64_t>() < 0 || targets.max().item<std::int64_t>() >= shared)) {
    throw ValidationError("class_loss: target class outside the shared classes");
  }
  torch::Tensor total;
  for (std::size_t i = 0; i < logits_per_model.size(); ++i) {
    if (static_cast<std::int64_t>(class_maps[i].size()) != shared) {
      throw ValidationError("class_loss: target class unmapped for member " + std::to_string(i));
    }
    const auto map = torch::tensor(class_maps[i], torch::kInt64);
    const auto l = F::cross_entropy(logits_per_model[i], map.index_select(0, targets));
    total = total.defined() ? total + l : l;
  }
  return total;
}

torch::Tensor class_loss(const std::vector<torch::Tensor>& logits_per_model, std::int64_t target_class,
                         const std::vector<std::vector<std::int64_t>>& class_maps) {
  check_batch(logits_per_model, "class_loss");
  return class_loss(logits_per_model, torch::full({logits_per_model.front().size(0)}, target_class, torch::kInt64),
                    class_maps);
}

AdversarialLosses adversarial_losses_from_logits(const torch::Tensor& real_logits, const torch::Tensor& fake_logits,
                                                 const torch::Tensor& fake_logits_for_d) {
  AdversarialLosses out;
  out.l_adv = F::binary_cross_entropy_with_logits(fake_logits, torch::ones_like(fake_logits));
  out.l_d = F::binary_cross_entropy_with_logits(real_logits, torch::ones_like(real_logits)) +
            F::binary_cross_entropy_with_logits(fake_logits_for_d, torch::zeros_like(fake_logits_for_d));
  return out;
}

AdversarialLosses adversarial_losses(Discriminator& d, const torch::Tensor& real, const torch::Tensor& fake,
                                     AttackMode mode) {
  if (mode != AttackMode::auxiliary) throw ValidationError("adversarial losses exist only in auxiliary mode");
  return adversarial_losses_from_logits(d.forward(real), d.forward(fake), d.forward(fake.detach()));
}

torch::Tensor combine_generator_loss(const AttackConfig& config, std::size_t m, const torch::Tensor& l_oh,
                                     const torch::Tensor& l_mr, const torch::Tensor& l_class,
                                     const torch::Tensor& l_adv) {
  if (m == 0) throw ValidationError("ensemble is empty");
  auto total = (config.alpha1 * l_oh + config.alpha2 * l_mr + config.beta1 * l_class) / static_cast<double>(m);
  if (l_adv.defined()) total = total + config.beta2 * l_adv;
  return total;
}

namespace {

std::string describe(std::int64_t step, const LossBreakdown& l) {
  std::ostringstream os;
  os << "non-finite loss at step " << step << " (l_oh=" << l.l_oh << " l_mr=" << l.l_mr << " l_class=" << l.l_class
     << " l_adv=" << l.l_adv << " l_g_total=" << l.l_g_total << " l_d=" << l.l_d << ")";
  return os.str();
}

std::unique_ptr<torch::optim::Optimizer> make_optimizer(const OptimizerConfig& o,
                                                        std::vector<torch::Tensor> params) {
  if (o.name == "sgd") {
    return std::make_unique<torch::optim::SGD>(params, torch::optim::SGDOptions(o.learning_rate).momentum(o.beta1));
  }
  return std::make_unique<torch::optim::Adam>(
      params, torch::optim::AdamOptions(o.learning_rate).betas({o.beta1, o.beta2}));
}

}  // namespace

AttackDiverged::AttackDiverged(std::int64_t step, const LossBreakdown& losses)
    : Error(describe(step, losses)), step_(step) {}

AttackResult run_attack(const Ensemble& ensemble, const AttackConfig& config, const ImageSet* aux_data) {
  config.validate();
  if (ensemble.members.empty()) throw ValidationError("ensemble is empty");
  ensemble.validate();
  const bool aux = config.mode == AttackMode::auxiliary;
  if (aux && (aux_data == nullptr || aux_data->size() == 0)) {
    throw ValidationError("auxiliary mode needs auxiliary data");
  }
  auto targets = config.target_classes;
  if (targets.empty()) {
    for (std::int64_t c = 0; c < ensemble.shared_class_count; ++c) targets.push_back(c);
  }
  for (const auto c : targets) {
    if (c < 0 || c >= ensemble.shared_class_count) {
      throw ValidationError("attack.target_classes: class " + std::to_string(c) + " is not shared");
    }
  }

  AttackResult result;
  result.config = config;
  for (const auto& m : ensemble.members) result.member_hashes.push_back(m->current_weights_hash());

  auto init_gen = make_generator(derive_seed(config.seed, "generator-init"));
  auto noise_gen = make_generator(derive_seed(config.seed, "attack-noise"));
  auto aux_gen = make_generator(derive_seed(config.seed, "aux-sample"));

  auto g = std::make_shared<ConditionalGenerator>(config.latent_dim, ensemble.shared_class_count,
                                                  config.conditioning, config.generator_width);
  init_parameters(*g, init_gen);
  auto g_opt = make_optimizer(config.optimizer, g->parameters());
  std::shared_ptr<Discriminator> d;
  std::unique_ptr<torch::optim::Optimizer> d_opt;
  if (aux) {
    auto d_init = make_generator(derive_seed(config.seed, "discriminator-init"));
    d = std::make_shared<Discriminator>(config.generator_width);
    init_parameters(*d, d_init);
    d_opt = make_optimizer(config.optimizer, d->parameters());
  }

  const auto target_tensor = torch::tensor(targets, torch::kInt64);
  const auto m = ensemble.members.size();
  for (std::int64_t step = 0; step < config.steps; ++step) {
    g->train();
    const auto pick = torch::randint(static_cast<std::int64_t>(targets.size()), {config.batch_size}, noise_gen);
    const auto c = target_tensor.index_select(0, pick);
    const auto z = at::randn({config.batch_size, config.latent_dim}, noise_gen);
    const auto x = g->forward(c, z);

    std::vector<torch::Tensor> logits;
    for (const auto& member : ensemble.members) logits.push_back(member->logits(x));
    const auto l_oh = one_hot_loss(logits);
    const auto l_mr = max_response_loss(logits);
    const auto l_class = class_loss(logits, c, ensemble.class_maps);

    torch::Tensor l_adv, l_d;
    if (aux) {
      const auto idx = torch::randint(aux_data->size(), {config.batch_size}, aux_gen);
      const auto real = aux_data->images.index_select(0, idx);
      l_d = F::binary_cross_entropy_with_logits(d->forward(real), torch::ones({config.batch_size})) +
            F::binary_cross_entropy_with_logits(d->forward(x.detach()), torch::zeros({config.batch_size}));
      d_opt->zero_grad();
      l_d.backward();
      d_opt->step();
      const auto fake_logits = d->forward(x);
      l_adv = F::binary_cross_entropy_with_logits(fake_logits, torch::ones_like(fake_logits));
    }
    const auto total = combine_generator_loss(config, m, l_oh, l_mr, l_class, l_adv);

    LossBreakdown row{step, value(l_oh), value(l_mr), value(l_class), value(l_adv), value(total), value(l_d)};
    for (const float v : {row.l_oh, row.l_mr, row.l_class, row.l_adv, row.l_g_total, row.l_d}) {
      if (!std::isfinite(v)) throw AttackDiverged(step, row);
    }
    g_opt->zero_grad();
    total.backward();
    g_opt->step();
    result.trace.push_back(row);
  }
  g->eval();
  if (d) d->eval();

  for (std::size_t i = 0; i < m; ++i) {
    if (ensemble.members[i]->current_weights_hash() != result.member_hashes[i]) {
      throw Error("frozen model " + ensemble.members[i]->id() + " changed during the attack");
    }
  }
  result.generator = std::move(g);
  result.discriminator = std::move(d);
  return result;
}

void write_loss_trace(const std::filesystem::path& path, const std::vector<LossBreakdown>& trace) {
  std::ostringstream os;
  os << "step,l_oh,l_mr,l_class,l_adv,l_g_total,l_d\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(r.step),
                  static_cast<double>(r.l_oh), static_cast<double>(r.l_mr), static_cast<double>(r.l_class),
                  static_cast<double>(r.l_adv), static_cast<double>(r.l_g_total), static_cast<double>(r.l_d));
    os << buf;
  }
  write_text_file(path, os.str());
}

std::string generator_hash(const ConditionalGenerator& g) { return sha256_hex(serialize_module(g)); }

ArtifactEntry save_generator(const ConditionalGenerator& g, const AttackConfig& config,
                             const std::filesystem::path& path, const json& extra) {
  ArtifactFile file;
  file.kind = ArtifactKind::generator;
  file.payload = serialize_module(g);
  file.header = {{"latent_dim", g.latent_dim()},
                 {"num_classes", g.num_classes()},
                 {"conditioning", to_string(g.conditioning())},
                 {"width", g.width()},
                 {"attack_config", config.to_json()},
                 {"weights_sha256", sha256_hex(file.payload)},
                 {"extra", extra}};
  return write_artifact(path, file);
}

LoadedGenerator load_generator(const std::filesystem::path& path, const std::optional<std::string>& expected_sha256) {
  const auto file = read_artifact(path, expected_sha256);
  if (file.kind != ArtifactKind::generator) throw CorruptionError(path.string() + " is not a generator artifact");
  const auto& h = file.header;
  const auto actual = sha256_hex(file.payload);
  if (actual != h.at("weights_sha256").get<std::string>()) {
    throw CorruptionError(path.string(), h.at("weights_sha256").get<std::string>(), actual);
  }
  LoadedGenerator out;
  out.generator = std::make_shared<ConditionalGenerator>(
      h.at("latent_dim").get<std::int64_t>(), h.at("num_classes").get<std::int64_t>(),
      conditioning_from_string(h.at("conditioning").get<std::string>()), h.at("width").get<std::int64_t>());
  load_module(*out.generator, file.payload, path.string());
  out.generator->eval();
  out.config = AttackConfig::from_json(h.at("attack_config"));
  out.header = h;
  return out;
}

}  // namespace einv
