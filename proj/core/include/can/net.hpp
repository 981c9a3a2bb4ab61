#pragma once

// Dense feed-forward regression network with a mean head and a
// positivity-constrained spread head, plus its exact backward pass and an
// Adam optimizer.

#include <Eigen/Dense>
#include <cstddef>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "can/rng.hpp"

namespace can {

// Samples are rows.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

enum class Activation { relu, linear };

struct LayerSpec {
  int input_width = 1;
  int output_width = 1;
  Activation activation = Activation::linear;

  bool operator==(const LayerSpec&) const = default;
};

enum class SigmaTransform { softplus_eps };

// Floor added after the softplus so that sigma never reaches zero.
inline constexpr double kSigmaFloor = 1e-6;

struct PredictionPair {
  double mu = 0.0;
  double sigma = 1.0;
};

// Weights are stored input-major: layer l maps a row of width in_l to a row
// of width out_l through `x * weights[l] + biases[l]`.
struct Parameters {
  std::vector<Matrix> weights;
  std::vector<RowVector> biases;

  std::size_t size() const;
  void set_zero();
  bool all_zero() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  Parameters zeros_like() const;
  bool operator==(const Parameters& other) const;
};

// Builds the layer chain `inputs -> hidden... -> outputs` with ReLU hidden
// layers and a linear head.
std::vector<LayerSpec> dense_architecture(int inputs, const std::vector<int>& hidden,
                                          int outputs);

class MlpModel {
 public:
  // All-zero parameters.
  explicit MlpModel(std::vector<LayerSpec> layers, double l2_first_layer = 0.0);

  // Glorot-uniform weights, zero biases, and a sigma-head bias chosen so the
  // initial sigma is about one.
  static MlpModel glorot(std::vector<LayerSpec> layers, Rng& rng,
                         double l2_first_layer = 0.0);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const Parameters& params() const { return params_; }
  Parameters& params() { return params_; }
  SigmaTransform sigma_transform() const { return SigmaTransform::softplus_eps; }
  double l2_first_layer() const { return l2_; }
  void set_l2_first_layer(double lambda);

  int input_width() const { return layers_.front().input_width; }
  int output_width() const { return layers_.back().output_width; }
  // Two-output models predict (mu, sigma); one-output models predict mu only.
  bool distributional() const { return output_width() == 2; }

  // lambda * ||W_first||^2, the ridge penalty added to the training objective.
  double l2_penalty() const;

  bool operator==(const MlpModel& other) const {
    return layers_ == other.layers_ && l2_ == other.l2_ && params_ == other.params_;
  }

 private:
  std::vector<LayerSpec> layers_;
  Parameters params_;
  double l2_ = 0.0;
};

// Activations retained by the forward pass for the backward pass.
struct ForwardPass {
  std::vector<Matrix> layer_inputs;  // layer_inputs[0] is the batch itself
  std::vector<Matrix> pre_activations;
  Matrix output;                     // raw head values, n x output_width
};

double softplus(double raw);
double softplus_inverse(double value);
double sigmoid(double raw);

ForwardPass forward_pass(const MlpModel& model, const Matrix& batch_x);

// (mu, sigma) per sample. Requires a two-output model.
std::vector<PredictionPair> predictions(const ForwardPass& pass);
std::vector<PredictionPair> forward(const MlpModel& model, const Matrix& batch_x);

// Mean head only; valid for one- and two-output models.
std::vector<double> predict_mean(const MlpModel& model, const Matrix& batch_x);

// Per-sample derivative of the batch objective with respect to the mean and
// the (post-transform) sigma output. `d_sigma` is ignored by one-output
// models.
struct OutputGrad {
  double d_mu = 0.0;
  double d_sigma = 0.0;
};

// Gradients of sum_i L_i + lambda * ||W_first||^2 with respect to every
// parameter; the sigma derivative is chained through the softplus.
Parameters backward(const MlpModel& model, const ForwardPass& pass,
                    std::span<const OutputGrad> loss_grads);
Parameters backward(const MlpModel& model, const Matrix& batch_x,
                    std::span<const OutputGrad> loss_grads);

enum class OptimizerKind { adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  Parameters first_moment;
  Parameters second_moment;
  long step = 0;

  static OptimizerState adam(const MlpModel& model, double learning_rate);
};

void optimizer_step(OptimizerState& state, MlpModel& model, const Parameters& grads);

// Checkpoint container (JSON). Parameters are stored flattened in layer
// order, weights row-major then bias, as 64-bit floats.
inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json checkpoint_to_json(const MlpModel& model);
MlpModel checkpoint_from_json(const nlohmann::json& doc);
void save_checkpoint(const MlpModel& model, const std::string& path,
                     const std::string& config_hash = {});
MlpModel load_checkpoint(const std::string& path);

}  // namespace can
