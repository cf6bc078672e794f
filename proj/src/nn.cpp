#include "groupmix/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "groupmix/error.hpp"

namespace groupmix {
namespace {

std::string layer_name(std::size_t k) { return "layer " + std::to_string(k); }

bool finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// out = in * W^T + b, then activation.
Matrix apply_layer(const Mlp& mlp, std::size_t k, const Matrix& in) {
  const LayerSpec& spec = mlp.layer(k);
  const Matrix& w = mlp.weights(k);
  const std::vector<double>& b = mlp.bias(k);
  Matrix out(in.rows(), spec.out_dim);
  for (std::size_t i = 0; i < in.rows(); ++i) {
    auto x = in.row(i);
    auto y = out.row(i);
    for (std::size_t o = 0; o < spec.out_dim; ++o) {
      auto wr = w.row(o);
      double acc = b[o];
      for (std::size_t j = 0; j < spec.in_dim; ++j) acc += wr[j] * x[j];
      y[o] = (spec.activation == Activation::relu && acc < 0.0) ? 0.0 : acc;
    }
  }
  return out;
}

// Row-wise log-softmax cross-entropy and the softmax probabilities.
double cross_entropy(std::span<const double> logits, std::span<const double> target,
                     std::span<double> probs) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    probs[c] = std::exp(logits[c] - mx);
    z += probs[c];
  }
  const double log_z = std::log(z) + mx;
  double ce = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    probs[c] /= z;
    if (target[c] != 0.0) ce -= target[c] * (logits[c] - log_z);
  }
  return ce;
}

void check_targets(const Matrix& targets, std::size_t rows, std::size_t k_classes) {
  require(targets.rows() == rows, ErrorKind::shape,
          "targets have " + std::to_string(targets.rows()) + " rows, expected " +
              std::to_string(rows));
  require(targets.cols() == k_classes, ErrorKind::shape,
          "targets have " + std::to_string(targets.cols()) + " columns, expected " +
              std::to_string(k_classes));
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (double t : targets.row(i)) {
      require(t >= 0.0 && std::isfinite(t), ErrorKind::precondition,
              "target row " + std::to_string(i) + " has a negative or non-finite entry");
      s += t;
    }
    require(std::abs(s - 1.0) <= 1e-9, ErrorKind::precondition,
            "target row " + std::to_string(i) + " does not sum to 1");
  }
}

}  // namespace

std::string_view to_string(Activation a) {
  return a == Activation::relu ? "relu" : "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  fail(ErrorKind::data, "unknown activation '" + std::string(name) + "'");
}

Mlp::Mlp(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
  require(!layers_.empty(), ErrorKind::shape, "network needs at least one layer");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const LayerSpec& s = layers_[k];
    require(s.in_dim >= 1 && s.out_dim >= 1, ErrorKind::shape,
            layer_name(k) + " has a zero dimension");
    if (k + 1 < layers_.size())
      require(s.out_dim == layers_[k + 1].in_dim, ErrorKind::shape,
              layer_name(k) + " output width does not match " + layer_name(k + 1));
    weights_.emplace_back(s.out_dim, s.in_dim);
    biases_.emplace_back(s.out_dim, 0.0);
  }
}

Mlp Mlp::make(std::span<const std::size_t> widths, Rng& rng) {
  require(widths.size() >= 2, ErrorKind::config, "need at least input and output widths");
  std::vector<LayerSpec> specs;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const bool last = k + 2 == widths.size();
    specs.push_back({widths[k], widths[k + 1], last ? Activation::identity : Activation::relu});
  }
  Mlp mlp(std::move(specs));
  for (std::size_t k = 0; k < mlp.num_layers(); ++k) {
    const LayerSpec& s = mlp.layer(k);
    const double scale = std::sqrt(6.0 / static_cast<double>(s.in_dim + s.out_dim));
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (double& w : mlp.weights(k).values()) w = dist(rng);
  }
  return mlp;
}

std::size_t Mlp::input_dim() const {
  require(!layers_.empty(), ErrorKind::shape, "empty network");
  return layers_.front().in_dim;
}

std::size_t Mlp::num_classes() const {
  require(!layers_.empty(), ErrorKind::shape, "empty network");
  return layers_.back().out_dim;
}

bool Mlp::all_finite() const {
  for (std::size_t k = 0; k < layers_.size(); ++k)
    if (!finite(weights_[k].values()) || !finite(biases_[k])) return false;
  return true;
}

Matrix forward_range(const Mlp& mlp, const Matrix& h, std::size_t from, std::size_t to,
                     ForwardTrace* trace) {
  require(to <= mlp.num_layers() && from <= to, ErrorKind::index,
          "layer range [" + std::to_string(from) + ", " + std::to_string(to) +
              ") outside network of " + std::to_string(mlp.num_layers()) + " layers");
  if (from < mlp.num_layers())
    require(h.cols() == mlp.layer(from).in_dim, ErrorKind::shape,
            "input width " + std::to_string(h.cols()) + " does not match " +
                layer_name(from) + " in_dim " + std::to_string(mlp.layer(from).in_dim));
  if (trace) {
    trace->first_layer = from;
    trace->activations.clear();
    trace->activations.push_back(h);
  }
  Matrix cur = h;
  for (std::size_t k = from; k < to; ++k) {
    cur = apply_layer(mlp, k, cur);
    if (trace) trace->activations.push_back(cur);
  }
  return cur;
}

ForwardResult forward_from(const Mlp& mlp, const Matrix& h, std::size_t layer_k) {
  require(layer_k < mlp.num_layers(), ErrorKind::index,
          "layer index " + std::to_string(layer_k) + " out of range for " +
              std::to_string(mlp.num_layers()) + " layers");
  ForwardResult result;
  result.logits = forward_range(mlp, h, layer_k, mlp.num_layers(), &result.trace);
  return result;
}

std::vector<int> predict(const Mlp& mlp, const Matrix& inputs) {
  const Matrix logits = forward_from(mlp, inputs, 0).logits;
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    // Ties resolve to the lowest class index.
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

Gradients Gradients::zeros_like(const Mlp& mlp) {
  Gradients g;
  for (std::size_t k = 0; k < mlp.num_layers(); ++k) {
    g.weights.emplace_back(mlp.layer(k).out_dim, mlp.layer(k).in_dim);
    g.biases.emplace_back(mlp.layer(k).out_dim, 0.0);
  }
  return g;
}

bool Gradients::all_finite() const {
  for (std::size_t k = 0; k < weights.size(); ++k)
    if (!finite(weights[k].values()) || !finite(biases[k])) return false;
  return true;
}

Matrix backprop_trace(const Mlp& mlp, const ForwardTrace& trace, const Matrix& upstream,
                      Gradients& grads) {
  const std::size_t n_run = trace.activations.size() - 1;
  Matrix delta = upstream;
  for (std::size_t j = n_run; j-- > 0;) {
    const std::size_t k = trace.first_layer + j;
    const LayerSpec& spec = mlp.layer(k);
    const Matrix& in = trace.activations[j];
    const Matrix& out = trace.activations[j + 1];
    if (spec.activation == Activation::relu) {
      for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t o = 0; o < spec.out_dim; ++o)
          if (out(i, o) <= 0.0) delta(i, o) = 0.0;
    }
    Matrix& gw = grads.weights[k];
    std::vector<double>& gb = grads.biases[k];
    for (std::size_t i = 0; i < in.rows(); ++i) {
      auto d = delta.row(i);
      auto x = in.row(i);
      for (std::size_t o = 0; o < spec.out_dim; ++o) {
        if (d[o] == 0.0) continue;
        gb[o] += d[o];
        auto gr = gw.row(o);
        for (std::size_t c = 0; c < spec.in_dim; ++c) gr[c] += d[o] * x[c];
      }
    }
    const Matrix& w = mlp.weights(k);
    Matrix below(in.rows(), spec.in_dim);
    for (std::size_t i = 0; i < in.rows(); ++i) {
      auto d = delta.row(i);
      auto b = below.row(i);
      for (std::size_t o = 0; o < spec.out_dim; ++o) {
        if (d[o] == 0.0) continue;
        auto wr = w.row(o);
        for (std::size_t c = 0; c < spec.in_dim; ++c) b[c] += d[o] * wr[c];
      }
    }
    delta = std::move(below);
  }
  return delta;
}

LossResult weighted_loss_and_grads(const Mlp& mlp, const Matrix& inputs,
                                   const Matrix& targets, std::span<const double> weights,
                                   std::size_t layer_k, double normalizer) {
  require(inputs.rows() > 0, ErrorKind::empty_batch, "empty batch");
  require(weights.size() == inputs.rows(), ErrorKind::shape,
          "weights length does not match batch size");
  require(std::isfinite(normalizer) && normalizer > 0.0, ErrorKind::degenerate_weights,
          "loss normalizer must be positive");
  for (double w : weights)
    require(std::isfinite(w) && w >= 0.0, ErrorKind::precondition,
            "sample weights must be finite and non-negative");
  check_targets(targets, inputs.rows(), mlp.num_classes());

  ForwardResult fwd = forward_from(mlp, inputs, layer_k);
  const std::size_t n = inputs.rows();
  const std::size_t k_classes = mlp.num_classes();

  LossResult res;
  res.sample_losses.resize(n);
  Matrix upstream(n, k_classes);
  std::vector<double> probs(k_classes);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ce = cross_entropy(fwd.logits.row(i), targets.row(i), probs);
    res.sample_losses[i] = ce;
    total += weights[i] * ce;
    const double scale = weights[i] / normalizer;
    double tsum = 0.0;
    for (double t : targets.row(i)) tsum += t;
    for (std::size_t c = 0; c < k_classes; ++c)
      upstream(i, c) = scale * (probs[c] * tsum - targets(i, c));
  }
  res.loss = total / normalizer;
  res.grads = Gradients::zeros_like(mlp);
  res.input_grad = backprop_trace(mlp, fwd.trace, upstream, res.grads);
  return res;
}

LossResult loss_and_grads(const Mlp& mlp, const Matrix& inputs, const Matrix& targets,
                          std::span<const double> weights, std::size_t layer_k) {
  require(inputs.rows() > 0, ErrorKind::empty_batch, "empty batch");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  require(wsum > 0.0, ErrorKind::degenerate_weights, "all sample weights are zero");
  return weighted_loss_and_grads(mlp, inputs, targets, weights, layer_k, wsum);
}

std::vector<double> sample_losses(const Mlp& mlp, const Matrix& inputs,
                                  const Matrix& targets, std::size_t layer_k) {
  require(inputs.rows() > 0, ErrorKind::empty_batch, "empty batch");
  check_targets(targets, inputs.rows(), mlp.num_classes());
  const Matrix logits = forward_from(mlp, inputs, layer_k).logits;
  std::vector<double> out(inputs.rows());
  std::vector<double> probs(mlp.num_classes());
  for (std::size_t i = 0; i < inputs.rows(); ++i)
    out[i] = cross_entropy(logits.row(i), targets.row(i), probs);
  return out;
}

void sgd_step(Mlp& mlp, const Gradients& grads, double lr, double weight_decay) {
  require(grads.weights.size() == mlp.num_layers() && grads.biases.size() == mlp.num_layers(),
          ErrorKind::shape, "gradient layer count does not match network");
  for (std::size_t k = 0; k < mlp.num_layers(); ++k) {
    Matrix& w = mlp.weights(k);
    std::vector<double>& b = mlp.bias(k);
    const Matrix& gw = grads.weights[k];
    const std::vector<double>& gb = grads.biases[k];
    require(gw.rows() == w.rows() && gw.cols() == w.cols() && gb.size() == b.size(),
            ErrorKind::shape, "gradient shape mismatch at " + layer_name(k));
    require(finite(gw.values()) && finite(gb), ErrorKind::numeric,
            "non-finite gradient at " + layer_name(k));
  }
  for (std::size_t k = 0; k < mlp.num_layers(); ++k) {
    auto w = mlp.weights(k).values();
    auto gw = grads.weights[k].values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (gw[i] + weight_decay * w[i]);
    std::vector<double>& b = mlp.bias(k);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * grads.biases[k][i];
  }
  require(mlp.all_finite(), ErrorKind::numeric, "parameters became non-finite after update");
}

namespace {

// Weighted-mean loss in extended precision. The finite differences below
// subtract two nearly equal losses, so double rounding would swamp small
// gradient entries at eps = 1e-5.
// `pattern` collects the ReLU on/off state of every unit so callers can tell
// when a perturbation crossed a kink.
long double precise_loss(const Mlp& mlp, const Batch& batch, std::vector<bool>& pattern) {
  pattern.clear();
  using Real = long double;
  const std::size_t rows = batch.inputs.rows();
  Real num = 0, den = 0;
  std::vector<Real> cur, next;
  for (std::size_t r = 0; r < rows; ++r) {
    cur.assign(batch.inputs.row(r).begin(), batch.inputs.row(r).end());
    for (std::size_t k = batch.layer_k; k < mlp.num_layers(); ++k) {
      const LayerSpec& spec = mlp.layer(k);
      next.assign(spec.out_dim, 0);
      for (std::size_t o = 0; o < spec.out_dim; ++o) {
        Real z = mlp.bias(k)[o];
        for (std::size_t i = 0; i < spec.in_dim; ++i) z += Real(mlp.weights(k)(o, i)) * cur[i];
        if (spec.activation == Activation::relu) pattern.push_back(z > 0);
        next[o] = spec.activation == Activation::relu && z < 0 ? 0 : z;
      }
      cur.swap(next);
    }
    const Real m = *std::max_element(cur.begin(), cur.end());
    Real s = 0;
    for (Real z : cur) s += std::exp(z - m);
    const Real lse = m + std::log(s);
    Real ce = 0;
    for (std::size_t j = 0; j < cur.size(); ++j) ce -= Real(batch.targets(r, j)) * (cur[j] - lse);
    num += Real(batch.weights[r]) * ce;
    den += batch.weights[r];
  }
  return num / den;
}

}  // namespace

double gradient_check(const Mlp& mlp, const Batch& batch, double eps) {
  require(eps > 0.0 && std::isfinite(eps), ErrorKind::precondition,
          "finite-difference step must be positive");
  require(batch.inputs.rows() > 0, ErrorKind::empty_batch, "empty batch");
  const LossResult analytic =
      loss_and_grads(mlp, batch.inputs, batch.targets, batch.weights, batch.layer_k);

  Mlp probe = mlp;
  double worst = 0.0;
  std::vector<bool> up_pattern, down_pattern;
  auto compare = [&](double a, double& param) {
    const double p = param;
    param = p + eps;
    const long double up = precise_loss(probe, batch, up_pattern);
    param = p - eps;
    const long double down = precise_loss(probe, batch, down_pattern);
    param = p;
    // The difference quotient straddles a ReLU kink; the loss is not
    // differentiable there and the quotient says nothing about the gradient.
    if (up_pattern != down_pattern) return;
    const double d = static_cast<double>((up - down) / (2.0L * eps));
    const double denom = std::max({std::abs(a), std::abs(d), 1e-12});
    worst = std::max(worst, std::abs(a - d) / denom);
  };
  for (std::size_t k = batch.layer_k; k < probe.num_layers(); ++k) {
    auto w = probe.weights(k).values();
    auto gw = analytic.grads.weights[k].values();
    for (std::size_t i = 0; i < w.size(); ++i) compare(gw[i], w[i]);
    std::vector<double>& b = probe.bias(k);
    for (std::size_t i = 0; i < b.size(); ++i) compare(analytic.grads.biases[k][i], b[i]);
  }
  return worst;
}

Matrix one_hot(std::span<const int> labels, std::size_t num_classes) {
  Matrix m(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < num_classes,
            ErrorKind::index, "label " + std::to_string(labels[i]) + " out of range");
    m(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return m;
}

}  // namespace groupmix
