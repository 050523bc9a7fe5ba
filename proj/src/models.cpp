#include "nodebench/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nodebench/ops.hpp"
#include "nodebench/tape.hpp"
#include "nodebench/text.hpp"

namespace nodebench {

FrozenParameters::FrozenParameters(const Classifier& model) : parameters_(model.parameters()) {
  previous_.reserve(parameters_.size());
  for (auto& p : parameters_) {
    previous_.push_back(p.requires_grad());
    p.set_requires_grad(false);
  }
}

FrozenParameters::~FrozenParameters() {
  for (std::size_t i = 0; i < parameters_.size(); ++i) parameters_[i].set_requires_grad(previous_[i]);
}

// -- layers -------------------------------------------------------------------

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

Conv2dLayer::Conv2dLayer(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
                         std::size_t padding_, Rng& rng)
    : stride(stride_), padding(padding_) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  weight = uniform_tensor({out, in, kernel, kernel}, bound, rng);
  bias = uniform_tensor({out}, bound, rng);
}

Tensor Conv2dLayer::forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }

GroupNormLayer::GroupNormLayer(std::size_t channels, std::size_t groups_)
    : groups(groups_), scale({channels}, 1.0, true), shift({channels}, 0.0, true) {
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("GroupNorm: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(groups) + " groups");
  }
}

Tensor GroupNormLayer::forward(const Tensor& x) const {
  return group_norm(x, groups, eps, scale, shift);
}

ConvBlock::ConvBlock(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                     std::size_t padding, std::size_t groups, Rng& rng)
    : conv(in, out, kernel, stride, padding, rng), norm(out, groups) {}

Tensor ConvBlock::forward(const Tensor& x) const { return relu(norm.forward(conv.forward(x))); }

void ConvBlock::append_parameters(const std::string& prefix,
                                  std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + ".conv.weight", conv.weight);
  out.emplace_back(prefix + ".conv.bias", conv.bias);
  out.emplace_back(prefix + ".norm.scale", norm.scale);
  out.emplace_back(prefix + ".norm.shift", norm.shift);
}

LinearLayer::LinearLayer(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = uniform_tensor({out, in}, bound, rng);
  bias = uniform_tensor({out}, bound, rng);
}

Tensor LinearLayer::forward(const Tensor& x) const { return linear(x, weight, bias); }

// -- configuration ------------------------------------------------------------

std::string to_string(RmKind kind) {
  switch (kind) {
    case RmKind::kResidual: return "residual";
    case RmKind::kWeightTiedResidual: return "weight_tied_residual";
    case RmKind::kNode: return "node";
    case RmKind::kTisode: return "tisode";
  }
  return "unknown";
}

std::string family_name(RmKind kind) {
  switch (kind) {
    case RmKind::kResidual: return "cnn";
    case RmKind::kWeightTiedResidual: return "weight_tied";
    case RmKind::kNode: return "node";
    case RmKind::kTisode: return "tisode";
  }
  return "unknown";
}

RmKind parse_rm_kind(const std::string& name) {
  if (name == "residual" || name == "cnn") return RmKind::kResidual;
  if (name == "weight_tied_residual" || name == "weight_tied") return RmKind::kWeightTiedResidual;
  if (name == "node" || name == "odenet") return RmKind::kNode;
  if (name == "tisode") return RmKind::kTisode;
  throw ConfigError("unknown model variant '" + name + "'");
}

std::size_t default_groups(std::size_t channels) {
  return channels >= 32 ? 32 : std::max<std::size_t>(1, channels / 2);
}

void ModelConfig::validate() const {
  if (in_channels == 0 || width == 0 || num_classes < 2) {
    throw ConfigError("model config needs positive channels and at least two classes");
  }
  if (image_size < 4) throw ConfigError("model config: image_size must be at least 4");
  if (groups == 0 || width % groups != 0) {
    throw ConfigError("model config: width " + std::to_string(width) + " not divisible by " +
                      std::to_string(groups) + " groups");
  }
  if (weight_tied_repeats == 0) throw ConfigError("model config: weight_tied_repeats must be >= 1");
  ode.validate();
}

namespace {

double parse_double_field(const std::string& key, const std::string& value) {
  return parse_double(value, "model config " + key);
}

std::size_t parse_size_field(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_unsigned(value, "model config " + key));
}

}  // namespace

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "dataset=" << dataset << '\n'
     << "in_channels=" << in_channels << '\n'
     << "image_size=" << image_size << '\n'
     << "width=" << width << '\n'
     << "groups=" << groups << '\n'
     << "num_classes=" << num_classes << '\n'
     << "ode_t_end=" << format_double(ode.t_end) << '\n'
     << "ode_step=" << format_double(ode.step) << '\n'
     << "ode_scheme=" << to_string(ode.scheme) << '\n'
     << "weight_tied_repeats=" << weight_tied_repeats << '\n'
     << "weight_tied_scale=" << format_double(weight_tied_scale) << '\n';
  return os.str();
}

ModelConfig ModelConfig::deserialize(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "dataset") cfg.dataset = value;
    else if (key == "in_channels") cfg.in_channels = parse_size_field(key, value);
    else if (key == "image_size") cfg.image_size = parse_size_field(key, value);
    else if (key == "width") cfg.width = parse_size_field(key, value);
    else if (key == "groups") cfg.groups = parse_size_field(key, value);
    else if (key == "num_classes") cfg.num_classes = parse_size_field(key, value);
    else if (key == "ode_t_end") cfg.ode.t_end = parse_double_field(key, value);
    else if (key == "ode_step") cfg.ode.step = parse_double_field(key, value);
    else if (key == "ode_scheme") cfg.ode.scheme = parse_scheme(value);
    else if (key == "weight_tied_repeats") cfg.weight_tied_repeats = parse_size_field(key, value);
    else if (key == "weight_tied_scale") cfg.weight_tied_scale = parse_double_field(key, value);
    else throw ConfigError("model config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

ModelConfig model_config_for(const std::string& dataset_key) {
  ModelConfig cfg;
  if (dataset_key == "mnist") {
    cfg.dataset = "mnist";
    cfg.in_channels = 1;
    cfg.image_size = 28;
    cfg.width = 64;
  } else if (dataset_key == "synthetic") {
    cfg.dataset = "synthetic";
    cfg.in_channels = 1;
    cfg.image_size = 8;
    cfg.width = 8;
  } else {
    throw ConfigError("unknown dataset key '" + dataset_key + "' (expected mnist or synthetic)");
  }
  cfg.groups = default_groups(cfg.width);
  return cfg;
}

// -- ODE dynamics -------------------------------------------------------------

ConvDynamics::ConvDynamics(std::size_t channels, std::size_t groups, bool time_channel, Rng& rng)
    : first_(channels + (time_channel ? 1 : 0), channels, 3, 1, 1, groups, rng),
      second_(channels, channels, 3, 1, 1, groups, rng),
      time_channel_(time_channel) {}

Tensor ConvDynamics::evaluate(const Tensor& state, double t) const {
  ++evaluations_;
  Tensor input = state;
  if (time_channel_) {
    const auto& s = state.shape();
    input = channel_concat(state, Tensor({s[0], 1, s[2], s[3]}, t));
  }
  if (observer_) observer_(input, t);
  return second_.forward(first_.forward(input));
}

std::vector<Tensor> ConvDynamics::parameters() const {
  std::vector<std::pair<std::string, Tensor>> named;
  append_parameters(named);
  std::vector<Tensor> out;
  for (auto& [name, t] : named) out.push_back(t);
  return out;
}

void ConvDynamics::append_parameters(std::vector<std::pair<std::string, Tensor>>& out) const {
  first_.append_parameters("rm.0", out);
  second_.append_parameters("rm.1", out);
}

// -- model ----------------------------------------------------------------------

Model::Model(RmKind kind, ModelConfig config, std::uint64_t init_seed)
    : kind_(kind), config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(init_seed, "init"));
  const std::size_t w = config_.width;
  extractor_.emplace_back(config_.in_channels, w, 3, 1, 1, config_.groups, rng);
  extractor_.emplace_back(w, w, 4, 2, 1, config_.groups, rng);
  switch (kind_) {
    case RmKind::kResidual:
    case RmKind::kWeightTiedResidual:
      block_a_ = ConvBlock(w, w, 3, 1, 1, config_.groups, rng);
      block_b_ = ConvBlock(w, w, 3, 1, 1, config_.groups, rng);
      break;
    case RmKind::kNode:
      dynamics_ = std::make_unique<ConvDynamics>(w, config_.groups, true, rng);
      break;
    case RmKind::kTisode:
      dynamics_ = std::make_unique<ConvDynamics>(w, config_.groups, false, rng);
      break;
  }
  head_ = LinearLayer(w, config_.num_classes, rng);
}

Tensor Model::extract_features(const Tensor& x) const {
  if (x.ndim() != 4 || x.dim(1) != config_.in_channels || x.dim(2) != config_.image_size ||
      x.dim(3) != config_.image_size) {
    throw ShapeError("model expects input [N," + std::to_string(config_.in_channels) + "," +
                     std::to_string(config_.image_size) + "," +
                     std::to_string(config_.image_size) + "], got " + to_string(x.shape()));
  }
  Tensor z = x;
  for (const auto& block : extractor_) z = block.forward(z);
  return z;
}

Tensor Model::residual_branch(const Tensor& z) const {
  ++block_evaluations_;
  return block_b_.forward(block_a_.forward(z));
}

Tensor Model::map_representation(const Tensor& z) const {
  switch (kind_) {
    case RmKind::kResidual:
      return add(z, residual_branch(z));
    case RmKind::kWeightTiedResidual: {
      Tensor state = z;
      for (std::size_t i = 0; i < config_.weight_tied_repeats; ++i) {
        state = add(state, scale(residual_branch(state), config_.weight_tied_scale));
      }
      return state;
    }
    case RmKind::kNode:
    case RmKind::kTisode:
      return integrate(*dynamics_, z, config_.ode).final_state();
  }
  throw UsageError("unreachable RM kind");
}

Tensor Model::classify_features(const Tensor& z) const {
  return head_.forward(flatten(adaptive_avg_pool2d(z)));
}

Tensor Model::forward(const Tensor& x) const { return forward_detailed(x, false).logits; }

ForwardResult Model::forward_detailed(const Tensor& x, bool with_steady_state) const {
  ForwardResult r;
  r.features = extract_features(x);
  r.representation = map_representation(r.features);
  if (with_steady_state) {
    if (kind_ != RmKind::kTisode) {
      throw UsageError("steady-state loss requested from a " + family_name(kind_) + " model");
    }
    r.steady_state_loss = steady_state_loss(*dynamics_, r.representation, config_.ode);
  }
  r.logits = classify_features(r.representation);
  return r;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < extractor_.size(); ++i) {
    extractor_[i].append_parameters("fe." + std::to_string(i), out);
  }
  if (dynamics_) {
    dynamics_->append_parameters(out);
  } else {
    block_a_.append_parameters("rm.0", out);
    block_b_.append_parameters("rm.1", out);
  }
  out.emplace_back("fcc.weight", head_.weight);
  out.emplace_back("fcc.bias", head_.bias);
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

const ConvDynamics& Model::dynamics() const {
  if (!dynamics_) throw UsageError(family_name(kind_) + " model has no ODE dynamics");
  return *dynamics_;
}

ConvDynamics& Model::dynamics() {
  if (!dynamics_) throw UsageError(family_name(kind_) + " model has no ODE dynamics");
  return *dynamics_;
}

std::size_t Model::rm_evaluations() const {
  return dynamics_ ? dynamics_->evaluations() : block_evaluations_;
}

void Model::reset_rm_evaluations() const {
  block_evaluations_ = 0;
  if (dynamics_) dynamics_->reset_evaluations();
}

std::pair<Tensor, Tensor> rm_terminal_pair(const Model& model, const Tensor& x) {
  if (model.kind() != RmKind::kTisode) {
    throw UsageError("rm_terminal_pair needs a tisode model, got " + model.kind_name());
  }
  Tensor z0 = model.extract_features(x);
  Tensor zT = integrate(model.dynamics(), z0, model.config().ode).final_state();
  Tensor loss = steady_state_loss(model.dynamics(), zT, model.config().ode);
  return {zT, loss};
}

std::vector<double> steady_state_gap(const Model& model, const Tensor& x) {
  if (model.kind() != RmKind::kTisode) {
    throw UsageError("steady_state_gap needs a tisode model, got " + model.kind_name());
  }
  NoGradGuard no_grad;
  const auto& cfg = model.config().ode;
  Tensor zT = model.map_representation(model.extract_features(x));
  Tensor z2T = advance(model.dynamics(), zT, cfg.num_steps(), cfg.num_steps(), cfg);
  Tensor norms = sample_l2_norm(sub(z2T, zT));
  return {norms.data().begin(), norms.data().end()};
}

std::map<RmKind, std::unique_ptr<Model>> build_family(const ModelConfig& config,
                                                      std::uint64_t init_seed) {
  std::map<RmKind, std::unique_ptr<Model>> family;
  for (RmKind kind : {RmKind::kResidual, RmKind::kWeightTiedResidual, RmKind::kNode,
                      RmKind::kTisode}) {
    family.emplace(kind, std::make_unique<Model>(kind, config, init_seed));
  }
  return family;
}

// -- linear -----------------------------------------------------------------

LinearClassifier::LinearClassifier(Tensor weight, Tensor bias) {
  if (weight.ndim() != 2) throw ShapeError("LinearClassifier: weight must be [classes, inputs]");
  if (bias.defined() && bias.numel() != weight.dim(0)) {
    throw ShapeError("LinearClassifier: bias does not match class count");
  }
  layer_.weight = std::move(weight);
  layer_.bias = std::move(bias);
}

LinearClassifier::LinearClassifier(std::size_t inputs, std::size_t classes,
                                   std::uint64_t init_seed) {
  Rng rng(derive_seed(init_seed, "init"));
  layer_ = LinearLayer(inputs, classes, rng);
}

Tensor LinearClassifier::forward(const Tensor& x) const {
  return layer_.forward(x.ndim() == 2 ? x : flatten(x));
}

std::vector<Tensor> LinearClassifier::parameters() const {
  std::vector<Tensor> out{layer_.weight};
  if (layer_.bias.defined()) out.push_back(layer_.bias);
  return out;
}

std::vector<int> predict(const Classifier& model, const Tensor& x) {
  constexpr std::size_t kChunk = 100;
  NoGradGuard no_grad;
  const std::size_t n = x.dim(0);
  if (n <= kChunk) return argmax_rows(model.forward(x));
  std::vector<int> out;
  out.reserve(n);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += kChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(n, start + kChunk); ++i) idx.push_back(i);
    const auto part = argmax_rows(model.forward(gather_batch(x, idx)));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace nodebench
