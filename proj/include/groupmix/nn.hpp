#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "groupmix/matrix.hpp"
#include "groupmix/rng.hpp"

namespace groupmix {

enum class Activation { relu, identity };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::identity;

  bool operator==(const LayerSpec&) const = default;
};

/// Dense multilayer perceptron. Layer k maps the representation entering it
/// (width in_dim) to out_dim units; the last layer emits class logits.
class Mlp {
 public:
  Mlp() = default;
  /// Builds a network with all parameters zero. Throws on bad chaining.
  explicit Mlp(std::vector<LayerSpec> layers);

  /// widths = {input, hidden..., classes}; hidden layers use ReLU and the
  /// output layer is linear. Weights are uniform in [-s, s] with
  /// s = sqrt(6 / (fan_in + fan_out)); biases start at zero.
  static Mlp make(std::span<const std::size_t> widths, Rng& rng);

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t input_dim() const;
  std::size_t num_classes() const;
  const LayerSpec& layer(std::size_t k) const { return layers_.at(k); }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }

  Matrix& weights(std::size_t k) { return weights_.at(k); }
  const Matrix& weights(std::size_t k) const { return weights_.at(k); }
  std::vector<double>& bias(std::size_t k) { return biases_.at(k); }
  const std::vector<double>& bias(std::size_t k) const { return biases_.at(k); }

  bool all_finite() const;

  bool operator==(const Mlp&) const = default;

 private:
  std::vector<LayerSpec> layers_;
  std::vector<Matrix> weights_;  // out_dim x in_dim
  std::vector<std::vector<double>> biases_;
};

/// Activations of a contiguous run of layers. activations[0] is the
/// representation entering `first_layer`; activations[j + 1] is the output
/// of layer first_layer + j.
struct ForwardTrace {
  std::size_t first_layer = 0;
  std::vector<Matrix> activations;
};

struct ForwardResult {
  Matrix logits;
  ForwardTrace trace;
};

/// Runs layers layer_k..end on h. layer_k = 0 is the raw input.
ForwardResult forward_from(const Mlp& mlp, const Matrix& h, std::size_t layer_k);

/// Runs layers [from, to) and returns the representation entering layer `to`.
Matrix forward_range(const Mlp& mlp, const Matrix& h, std::size_t from, std::size_t to,
                     ForwardTrace* trace = nullptr);

std::vector<int> predict(const Mlp& mlp, const Matrix& inputs);

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;

  static Gradients zeros_like(const Mlp& mlp);
  bool all_finite() const;
};

struct LossResult {
  double loss = 0.0;
  Gradients grads;
  std::vector<double> sample_losses;  // unweighted cross-entropy per row
  Matrix input_grad;                  // d loss / d inputs at layer_k
};

/// Weighted-mean softmax cross-entropy,
///   loss = sum_i w_i CE(softmax(logits_i), t_i) / sum_i w_i,
/// and its exact gradient for layers layer_k..end (earlier layers get zeros).
LossResult loss_and_grads(const Mlp& mlp, const Matrix& inputs, const Matrix& targets,
                          std::span<const double> weights, std::size_t layer_k = 0);

/// Same as loss_and_grads but divides by `normalizer` instead of sum_i w_i.
LossResult weighted_loss_and_grads(const Mlp& mlp, const Matrix& inputs,
                                   const Matrix& targets, std::span<const double> weights,
                                   std::size_t layer_k, double normalizer);

std::vector<double> sample_losses(const Mlp& mlp, const Matrix& inputs,
                                  const Matrix& targets, std::size_t layer_k = 0);

/// Accumulates into `grads` the contribution of layers covered by `trace`
/// given the upstream gradient at the trace's output. Returns the gradient
/// with respect to the trace's input.
Matrix backprop_trace(const Mlp& mlp, const ForwardTrace& trace, const Matrix& upstream,
                      Gradients& grads);

/// W <- W - lr (dW + weight_decay W); b <- b - lr db.
void sgd_step(Mlp& mlp, const Gradients& grads, double lr, double weight_decay);

struct Batch {
  Matrix inputs;
  Matrix targets;
  std::vector<double> weights;
  std::size_t layer_k = 0;
};

/// Max over parameters of |analytic - central difference| /
/// max(|analytic|, |difference|, 1e-12). Differences are taken in extended
/// precision; parameters whose +-eps probes flip a ReLU unit are skipped.
double gradient_check(const Mlp& mlp, const Batch& batch, double eps);

Matrix one_hot(std::span<const int> labels, std::size_t num_classes);

}  // namespace groupmix
