#include "mrg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mrg/errors.hpp"

namespace mrg {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) {
    throw ShapeError(what);
  }
}

}  // namespace

Vec dense_forward(const DenseLayer& layer, const Vec& input) {
  require(input.size() == layer.in_dim(),
          "dense_forward: input length " + std::to_string(input.size()) +
              " does not match layer input dim " + std::to_string(layer.in_dim()));
  Vec out(layer.out_dim());
  for (size_t r = 0; r < layer.out_dim(); ++r) {
    double acc = layer.bias[r];
    const double* w = layer.weight.data.data() + r * layer.weight.cols;
    for (size_t c = 0; c < layer.in_dim(); ++c) {
      acc += w[c] * input[c];
    }
    out[r] = acc;
  }
  return out;
}

void dense_backward(const DenseLayer& layer, const Vec& input, const Vec& grad_output,
                    DenseLayer& grad, Vec* grad_input) {
  require(input.size() == layer.in_dim(), "dense_backward: input length mismatch");
  require(grad_output.size() == layer.out_dim(), "dense_backward: grad_output length mismatch");
  require(grad.weight.rows == layer.weight.rows && grad.weight.cols == layer.weight.cols &&
              grad.bias.size() == layer.bias.size(),
          "dense_backward: gradient accumulator shape mismatch");
  if (grad_input != nullptr) {
    require(grad_input->size() == layer.in_dim(), "dense_backward: grad_input length mismatch");
  }
  for (size_t r = 0; r < layer.out_dim(); ++r) {
    double g = grad_output[r];
    grad.bias[r] += g;
    double* gw = grad.weight.data.data() + r * grad.weight.cols;
    const double* w = layer.weight.data.data() + r * layer.weight.cols;
    for (size_t c = 0; c < layer.in_dim(); ++c) {
      gw[c] += g * input[c];
      if (grad_input != nullptr) {
        (*grad_input)[c] += w[c] * g;
      }
    }
  }
}

Vec relu(const Vec& v) {
  Vec out(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] > 0.0 ? v[i] : 0.0;
  }
  return out;
}

Vec relu_backward(const Vec& pre_activation, const Vec& grad_output) {
  require(pre_activation.size() == grad_output.size(), "relu_backward: length mismatch");
  Vec out(grad_output.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = pre_activation[i] > 0.0 ? grad_output[i] : 0.0;
  }
  return out;
}

Vec softmax(const Vec& logits) {
  require(!logits.empty(), "softmax: empty input");
  double mx = *std::max_element(logits.begin(), logits.end());
  Vec out(logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) {
    v /= sum;
  }
  return out;
}

Vec softmax_backward(const Vec& probs, const Vec& grad_probs) {
  require(probs.size() == grad_probs.size(), "softmax_backward: length mismatch");
  double dot = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    dot += grad_probs[i] * probs[i];
  }
  Vec out(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) {
    out[i] = probs[i] * (grad_probs[i] - dot);
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

Vec sigmoid(const Vec& v) {
  Vec out(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    out[i] = sigmoid(v[i]);
  }
  return out;
}

double cross_entropy(const Vec& probs, size_t target_class) {
  require(target_class < probs.size(), "cross_entropy: target class out of range");
  return -std::log(probs[target_class] + kLogEpsilon);
}

double binary_cross_entropy(const Vec& probs, const Vec& targets) {
  require(probs.size() == targets.size() && !probs.empty(),
          "binary_cross_entropy: length mismatch or empty input");
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += -(targets[i] * std::log(probs[i] + kLogEpsilon) +
             (1.0 - targets[i]) * std::log(1.0 - probs[i] + kLogEpsilon));
  }
  return acc / static_cast<double>(probs.size());
}

Vec cross_entropy_softmax_backward(const Vec& probs, size_t target_class) {
  require(target_class < probs.size(), "cross_entropy_softmax_backward: target out of range");
  // L = -log(p_t + eps); dL/dz_k = p_t / (p_t + eps) * (p_k - [k == t]).
  double scale = probs[target_class] / (probs[target_class] + kLogEpsilon);
  Vec out(probs.size());
  for (size_t k = 0; k < probs.size(); ++k) {
    out[k] = scale * (probs[k] - (k == target_class ? 1.0 : 0.0));
  }
  return out;
}

Vec binary_cross_entropy_sigmoid_backward(const Vec& probs, const Vec& targets) {
  require(probs.size() == targets.size() && !probs.empty(),
          "binary_cross_entropy_sigmoid_backward: length mismatch or empty input");
  double inv_n = 1.0 / static_cast<double>(probs.size());
  Vec out(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) {
    double p = probs[i];
    double t = targets[i];
    double dl_dp = inv_n * (-t / (p + kLogEpsilon) + (1.0 - t) / (1.0 - p + kLogEpsilon));
    out[i] = dl_dp * p * (1.0 - p);
  }
  return out;
}

void adam_step(const std::vector<ParamView>& params, const std::vector<ConstParamView>& grads,
               AdamState& state, const AdamConfig& config) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: parameter and gradient block counts differ");
  }
  if (state.first_moment.empty()) {
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
    for (size_t b = 0; b < params.size(); ++b) {
      state.first_moment[b].assign(params[b].values.size(), 0.0);
      state.second_moment[b].assign(params[b].values.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state does not match parameter blocks");
  }
  state.step_count += 1;
  double t = static_cast<double>(state.step_count);
  double bc1 = 1.0 - std::pow(config.beta1, t);
  double bc2 = 1.0 - std::pow(config.beta2, t);
  for (size_t b = 0; b < params.size(); ++b) {
    auto p = params[b].values;
    auto g = grads[b].values;
    if (p.size() != g.size() || p.size() != state.first_moment[b].size()) {
      throw ShapeError("adam_step: block size mismatch at " + params[b].name);
    }
    Vec& m = state.first_moment[b];
    Vec& v = state.second_moment[b];
    for (size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericalError("adam_step: non-finite gradient in " + grads[b].name);
      }
      double gi = g[i] + config.weight_decay * p[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

GradCheckReport finite_difference_check(const std::vector<ParamView>& params,
                                        const std::vector<ConstParamView>& analytic,
                                        const std::function<double()>& loss, double epsilon) {
  if (params.size() != analytic.size()) {
    throw ShapeError("finite_difference_check: block counts differ");
  }
  GradCheckReport report;
  for (size_t b = 0; b < params.size(); ++b) {
    auto p = params[b].values;
    auto a = analytic[b].values;
    if (p.size() != a.size()) {
      throw ShapeError("finite_difference_check: block size mismatch at " + params[b].name);
    }
    for (size_t i = 0; i < p.size(); ++i) {
      double original = p[i];
      p[i] = original + epsilon;
      double up = loss();
      p[i] = original - epsilon;
      double down = loss();
      p[i] = original;
      double numeric = (up - down) / (2.0 * epsilon);
      double denom = std::max({std::abs(a[i]), std::abs(numeric), 1e-8});
      double rel = std::abs(a[i] - numeric) / denom;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_parameter = params[b].name;
        report.worst_index = i;
        report.analytic = a[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace mrg
