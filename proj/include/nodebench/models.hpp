#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nodebench/ode.hpp"
#include "nodebench/rng.hpp"
#include "nodebench/tensor.hpp"

namespace nodebench {

/// Anything that maps a normalized NCHW batch to [N, classes] logits.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Tensor forward(const Tensor& x) const = 0;
  virtual std::vector<Tensor> parameters() const = 0;
  virtual std::string kind_name() const = 0;
};

/// Temporarily clears requires_grad on a classifier's parameters so that a
/// backward pass leaves their gradients untouched.
class FrozenParameters {
 public:
  explicit FrozenParameters(const Classifier& model);
  ~FrozenParameters();
  FrozenParameters(const FrozenParameters&) = delete;
  FrozenParameters& operator=(const FrozenParameters&) = delete;

 private:
  std::vector<Tensor> parameters_;
  std::vector<bool> previous_;
};

// -- layers -------------------------------------------------------------------

struct Conv2dLayer {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv2dLayer() = default;
  Conv2dLayer(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
              std::size_t padding, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

struct GroupNormLayer {
  std::size_t groups = 1;
  double eps = 1e-5;
  Tensor scale;
  Tensor shift;

  GroupNormLayer() = default;
  GroupNormLayer(std::size_t channels, std::size_t groups);
  Tensor forward(const Tensor& x) const;
};

/// Conv + GroupNorm + ReLU, the repeating unit of every stack here.
struct ConvBlock {
  Conv2dLayer conv;
  GroupNormLayer norm;

  ConvBlock() = default;
  ConvBlock(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
            std::size_t padding, std::size_t groups, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void append_parameters(const std::string& prefix,
                         std::vector<std::pair<std::string, Tensor>>& out) const;
};

struct LinearLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

// -- model family -----------------------------------------------------------

enum class RmKind { kResidual, kWeightTiedResidual, kNode, kTisode };

std::string to_string(RmKind kind);
RmKind parse_rm_kind(const std::string& name);
/// Short family names used in reports: cnn, weight_tied, node, tisode.
std::string family_name(RmKind kind);

struct ModelConfig {
  std::string dataset = "mnist";
  std::size_t in_channels = 1;
  std::size_t image_size = 28;
  std::size_t width = 64;
  std::size_t groups = 32;
  std::size_t num_classes = 10;
  OdeConfig ode{};
  std::size_t weight_tied_repeats = 20;
  double weight_tied_scale = 1.0;

  void validate() const;
  /// Flat key=value rendering embedded in checkpoints.
  std::string serialize() const;
  static ModelConfig deserialize(const std::string& text);
};

/// GroupNorm group count: 32 for wide layers, channels/2 below 32 channels.
std::size_t default_groups(std::size_t channels);

/// Configuration for a dataset key ("mnist" or "synthetic"); ConfigError
/// for anything else.
ModelConfig model_config_for(const std::string& dataset_key);

/// Right-hand side of the ODE representation mapping: two Conv+GN+ReLU
/// blocks. With a time channel, a constant plane holding t is concatenated
/// to the state before the first convolution.
class ConvDynamics final : public Dynamics {
 public:
  using Observer = std::function<void(const Tensor& input, double t)>;

  ConvDynamics(std::size_t channels, std::size_t groups, bool time_channel, Rng& rng);

  Tensor evaluate(const Tensor& state, double t) const override;
  bool autonomous() const override { return !time_channel_; }
  std::vector<Tensor> parameters() const override;
  void append_parameters(std::vector<std::pair<std::string, Tensor>>& out) const;

  std::size_t evaluations() const { return evaluations_; }
  void reset_evaluations() const { evaluations_ = 0; }
  /// Called with the first-conv input on each evaluation (instrumentation).
  void set_observer(Observer observer) { observer_ = std::move(observer); }

 private:
  ConvBlock first_;
  ConvBlock second_;
  bool time_channel_;
  mutable std::size_t evaluations_ = 0;
  Observer observer_;
};

struct ForwardResult {
  Tensor logits;
  Tensor features;           // FE output, RM input
  Tensor representation;     // RM output
  Tensor steady_state_loss;  // sum over samples; defined only when requested (tisode)
};

/// FE -> RM -> FCC classifier. The RM is one of: a residual block
/// (z + block(z)), one shared-weight residual block applied repeatedly, or an
/// ODE integrated with fixed steps (time-dependent node, autonomous tisode).
class Model final : public Classifier {
 public:
  Model(RmKind kind, ModelConfig config, std::uint64_t init_seed);

  Tensor forward(const Tensor& x) const override;
  ForwardResult forward_detailed(const Tensor& x, bool with_steady_state) const;

  Tensor extract_features(const Tensor& x) const;
  Tensor map_representation(const Tensor& z) const;
  Tensor classify_features(const Tensor& z) const;

  std::vector<Tensor> parameters() const override;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::size_t parameter_count() const;
  std::string kind_name() const override { return family_name(kind_); }

  RmKind kind() const { return kind_; }
  const ModelConfig& config() const { return config_; }
  bool has_ode() const { return dynamics_ != nullptr; }
  /// ODE dynamics (node/tisode); UsageError otherwise.
  const ConvDynamics& dynamics() const;
  ConvDynamics& dynamics();

  /// Evaluations of the RM block or dynamics since the last reset.
  std::size_t rm_evaluations() const;
  void reset_rm_evaluations() const;

 private:
  RmKind kind_;
  ModelConfig config_;
  std::vector<ConvBlock> extractor_;
  ConvBlock block_a_;  // residual variants
  ConvBlock block_b_;
  mutable std::size_t block_evaluations_ = 0;
  std::unique_ptr<ConvDynamics> dynamics_;
  LinearLayer head_;

  Tensor residual_branch(const Tensor& z) const;
};

/// (z(T), L_ss) for a tisode model: FE, integrate over [0,T], then the
/// steady-state loss over [T, 2T] summed over the batch.
std::pair<Tensor, Tensor> rm_terminal_pair(const Model& model, const Tensor& x);

/// Per-sample ||z(2T) - z(T)||_2 for a tisode model, without gradients.
std::vector<double> steady_state_gap(const Model& model, const Tensor& x);

/// One model per RM kind, all initialized from `init_seed`.
std::map<RmKind, std::unique_ptr<Model>> build_family(const ModelConfig& config,
                                                      std::uint64_t init_seed);

/// Logits = flatten(x) · Wᵀ + b. Closed-form oracle model and linear probe.
class LinearClassifier final : public Classifier {
 public:
  LinearClassifier(Tensor weight, Tensor bias);
  LinearClassifier(std::size_t inputs, std::size_t classes, std::uint64_t init_seed);

  Tensor forward(const Tensor& x) const override;
  std::vector<Tensor> parameters() const override;
  std::string kind_name() const override { return "linear"; }
  const Tensor& weight() const { return layer_.weight; }
  const Tensor& bias() const { return layer_.bias; }

 private:
  LinearLayer layer_;
};

/// Predicted classes, evaluated without recording.
std::vector<int> predict(const Classifier& model, const Tensor& x);

}  // namespace nodebench
