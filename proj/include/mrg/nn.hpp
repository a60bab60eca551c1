#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mrg/vec.hpp"

namespace mrg {

// Row-major dense matrix.
struct Mat {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(size_t r, size_t c) { return data[r * cols + c]; }
  double operator()(size_t r, size_t c) const { return data[r * cols + c]; }
};

// Affine map y = weight * x + bias.
struct DenseLayer {
  Mat weight;
  Vec bias;

  DenseLayer() = default;
  DenseLayer(size_t out, size_t in) : weight(out, in), bias(out, 0.0) {}

  size_t in_dim() const { return weight.cols; }
  size_t out_dim() const { return weight.rows; }
};

Vec dense_forward(const DenseLayer& layer, const Vec& input);

// Accumulates dL/dweight and dL/dbias into grad; when grad_input is given,
// accumulates dL/dinput into it as well. grad must match the layer's shape
// and grad_input, when present, the input's length.
void dense_backward(const DenseLayer& layer, const Vec& input, const Vec& grad_output,
                    DenseLayer& grad, Vec* grad_input = nullptr);

Vec relu(const Vec& v);

// Passes grad_output through where the pre-activation is strictly positive.
Vec relu_backward(const Vec& pre_activation, const Vec& grad_output);

// Numerically stable softmax (max subtraction). Rejects empty input.
Vec softmax(const Vec& logits);

// dL/dlogits given dL/dprobs: p .* (g - <g, p>).
Vec softmax_backward(const Vec& probs, const Vec& grad_probs);

double sigmoid(double x);
Vec sigmoid(const Vec& v);

inline constexpr double kLogEpsilon = 1e-12;

// -log(probs[target] + kLogEpsilon)
double cross_entropy(const Vec& probs, size_t target_class);

// Mean over components of -[t*log(p + eps) + (1-t)*log(1-p + eps)].
double binary_cross_entropy(const Vec& probs, const Vec& targets);

// dL/dlogits for softmax followed by cross_entropy, including the epsilon
// term of the forward loss, so finite differences of the exact forward value
// agree with these gradients.
Vec cross_entropy_softmax_backward(const Vec& probs, size_t target_class);

// dL/dlogits for sigmoid followed by binary_cross_entropy (mean reduction).
Vec binary_cross_entropy_sigmoid_backward(const Vec& probs, const Vec& targets);

// Named view over one parameter block's flat storage. Blocks pair up
// positionally between a parameter set and its gradient set.
struct ParamView {
  std::string name;
  std::span<double> values;
};

struct ConstParamView {
  std::string name;
  std::span<const double> values;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // L2 term added to the gradient before moment updates
};

struct AdamState {
  std::vector<Vec> first_moment;   // sized on first step to match the blocks
  std::vector<Vec> second_moment;
  long step_count = 0;
};

// One bias-corrected Adam update over all blocks. Any non-finite gradient
// value raises NumericalError naming the offending block.
void adam_step(const std::vector<ParamView>& params, const std::vector<ConstParamView>& grads,
               AdamState& state, const AdamConfig& config);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/**
 * @brief Central-difference check of analytic gradients.
 *
 * Perturbs every scalar in params by +-epsilon, evaluates `loss` (which must
 * read the same underlying storage), and compares (f+ - f-) / (2 eps) with
 * the analytic value under relative error |a - n| / max(|a|, |n|, 1e-8).
 * Restores every parameter to its exact original bits before returning.
 *
 * Valid only while the loss is smooth within epsilon of the current point;
 * callers must avoid configurations that sit on a ReLU kink.
 */
GradCheckReport finite_difference_check(const std::vector<ParamView>& params,
                                        const std::vector<ConstParamView>& analytic,
                                        const std::function<double()>& loss, double epsilon);

}  // namespace mrg
