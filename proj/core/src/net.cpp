#include "can/net.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "can/error.hpp"

namespace can {

std::size_t Parameters::size() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

void Parameters::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

bool Parameters::all_zero() const {
  for (const auto& w : weights) {
    if (!w.isZero(0.0)) return false;
  }
  for (const auto& b : biases) {
    if (!b.isZero(0.0)) return false;
  }
  return true;
}

std::vector<double> Parameters::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.insert(flat.end(), weights[l].data(), weights[l].data() + weights[l].size());
    flat.insert(flat.end(), biases[l].data(), biases[l].data() + biases[l].size());
  }
  return flat;
}

void Parameters::assign(std::span<const double> flat) {
  if (flat.size() != size()) {
    throw DimensionError("parameter vector has " + std::to_string(flat.size()) +
                         " entries, model expects " + std::to_string(size()));
  }
  std::size_t at = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    std::copy_n(flat.begin() + at, weights[l].size(), weights[l].data());
    at += weights[l].size();
    std::copy_n(flat.begin() + at, biases[l].size(), biases[l].data());
    at += biases[l].size();
  }
}

Parameters Parameters::zeros_like() const {
  Parameters out;
  out.weights.reserve(weights.size());
  out.biases.reserve(biases.size());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.weights.push_back(Matrix::Zero(weights[l].rows(), weights[l].cols()));
    out.biases.push_back(RowVector::Zero(biases[l].size()));
  }
  return out;
}

bool Parameters::operator==(const Parameters& other) const {
  if (weights.size() != other.weights.size()) return false;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != other.weights[l].rows() ||
        weights[l].cols() != other.weights[l].cols() ||
        biases[l].size() != other.biases[l].size()) {
      return false;
    }
    if (weights[l] != other.weights[l] || biases[l] != other.biases[l]) return false;
  }
  return true;
}

std::vector<LayerSpec> dense_architecture(int inputs, const std::vector<int>& hidden,
                                          int outputs) {
  std::vector<LayerSpec> layers;
  int width = inputs;
  for (int h : hidden) {
    layers.push_back({width, h, Activation::relu});
    width = h;
  }
  layers.push_back({width, outputs, Activation::linear});
  return layers;
}

namespace {

void validate_layers(const std::vector<LayerSpec>& layers) {
  if (layers.empty()) throw ConfigError("network needs at least one layer");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].input_width < 1 || layers[l].output_width < 1) {
      throw DimensionError("layer " + std::to_string(l) + " has a non-positive width");
    }
    if (l > 0 && layers[l].input_width != layers[l - 1].output_width) {
      throw DimensionError("layer " + std::to_string(l) + " expects input width " +
                           std::to_string(layers[l].input_width) + " but layer " +
                           std::to_string(l - 1) + " produces " +
                           std::to_string(layers[l - 1].output_width));
    }
  }
  const int out = layers.back().output_width;
  if (out != 1 && out != 2) {
    throw DimensionError("final layer must have 1 (mean) or 2 (mean, sigma) outputs, got " +
                         std::to_string(out));
  }
}

}  // namespace

MlpModel::MlpModel(std::vector<LayerSpec> layers, double l2_first_layer)
    : layers_(std::move(layers)) {
  validate_layers(layers_);
  set_l2_first_layer(l2_first_layer);
  for (const auto& spec : layers_) {
    params_.weights.push_back(Matrix::Zero(spec.input_width, spec.output_width));
    params_.biases.push_back(RowVector::Zero(spec.output_width));
  }
}

void MlpModel::set_l2_first_layer(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("l2 penalty must be a finite non-negative number");
  }
  l2_ = lambda;
}

MlpModel MlpModel::glorot(std::vector<LayerSpec> layers, Rng& rng, double l2_first_layer) {
  MlpModel model(std::move(layers), l2_first_layer);
  for (std::size_t l = 0; l < model.layers_.size(); ++l) {
    const auto& spec = model.layers_[l];
    const double limit = std::sqrt(6.0 / (spec.input_width + spec.output_width));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto& w = model.params_.weights[l];
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  }
  if (model.distributional()) {
    model.params_.biases.back()(1) = softplus_inverse(1.0 - kSigmaFloor);
  }
  return model;
}

double MlpModel::l2_penalty() const {
  if (l2_ == 0.0) return 0.0;
  return l2_ * params_.weights.front().squaredNorm();
}

double softplus(double raw) {
  return std::max(raw, 0.0) + std::log1p(std::exp(-std::abs(raw)));
}

double softplus_inverse(double value) {
  // log(exp(v) - 1), written to stay accurate for large v.
  return value + std::log(-std::expm1(-value));
}

double sigmoid(double raw) {
  if (raw >= 0.0) return 1.0 / (1.0 + std::exp(-raw));
  const double e = std::exp(raw);
  return e / (1.0 + e);
}

ForwardPass forward_pass(const MlpModel& model, const Matrix& batch_x) {
  const auto& layers = model.layers();
  const auto& p = model.params();
  if (batch_x.cols() != layers.front().input_width) {
    throw DimensionError("layer 0 expects " + std::to_string(layers.front().input_width) +
                         " input features, batch has " + std::to_string(batch_x.cols()));
  }
  ForwardPass pass;
  pass.layer_inputs.reserve(layers.size());
  pass.pre_activations.reserve(layers.size());
  pass.layer_inputs.push_back(batch_x);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = pass.layer_inputs.back() * p.weights[l];
    z.rowwise() += p.biases[l];
    pass.pre_activations.push_back(z);
    if (layers[l].activation == Activation::relu) z = z.cwiseMax(0.0);
    if (l + 1 < layers.size()) {
      pass.layer_inputs.push_back(std::move(z));
    } else {
      pass.output = std::move(z);
    }
  }
  return pass;
}

std::vector<PredictionPair> predictions(const ForwardPass& pass) {
  if (pass.output.cols() != 2) {
    throw ConfigError("(mu, sigma) predictions need a two-output model");
  }
  std::vector<PredictionPair> out(static_cast<std::size_t>(pass.output.rows()));
  for (Eigen::Index i = 0; i < pass.output.rows(); ++i) {
    out[i].mu = pass.output(i, 0);
    out[i].sigma = softplus(pass.output(i, 1)) + kSigmaFloor;
  }
  return out;
}

std::vector<PredictionPair> forward(const MlpModel& model, const Matrix& batch_x) {
  return predictions(forward_pass(model, batch_x));
}

std::vector<double> predict_mean(const MlpModel& model, const Matrix& batch_x) {
  const ForwardPass pass = forward_pass(model, batch_x);
  std::vector<double> mu(static_cast<std::size_t>(pass.output.rows()));
  for (Eigen::Index i = 0; i < pass.output.rows(); ++i) mu[i] = pass.output(i, 0);
  return mu;
}

Parameters backward(const MlpModel& model, const ForwardPass& pass,
                    std::span<const OutputGrad> loss_grads) {
  const auto& layers = model.layers();
  const auto& p = model.params();
  const Eigen::Index n = pass.output.rows();
  if (static_cast<Eigen::Index>(loss_grads.size()) != n) {
    throw DimensionError("got " + std::to_string(loss_grads.size()) +
                         " loss gradients for a batch of " + std::to_string(n));
  }
  const bool two_heads = model.distributional();

  Matrix delta(n, model.output_width());
  for (Eigen::Index i = 0; i < n; ++i) {
    const OutputGrad& g = loss_grads[static_cast<std::size_t>(i)];
    if (!std::isfinite(g.d_mu) || (two_heads && !std::isfinite(g.d_sigma))) {
      throw NumericError("non-finite loss gradient at sample " + std::to_string(i), i);
    }
    delta(i, 0) = g.d_mu;
    if (two_heads) delta(i, 1) = g.d_sigma * sigmoid(pass.output(i, 1));
  }

  Parameters grads = p.zeros_like();
  for (std::size_t k = layers.size(); k-- > 0;) {
    if (layers[k].activation == Activation::relu) {
      delta = delta.cwiseProduct(
          (pass.pre_activations[k].array() > 0.0).cast<double>().matrix());
    }
    grads.weights[k].noalias() = pass.layer_inputs[k].transpose() * delta;
    grads.biases[k] = delta.colwise().sum();
    if (k > 0) delta = delta * p.weights[k].transpose();
  }
  if (model.l2_first_layer() > 0.0) {
    grads.weights.front() += 2.0 * model.l2_first_layer() * p.weights.front();
  }
  return grads;
}

Parameters backward(const MlpModel& model, const Matrix& batch_x,
                    std::span<const OutputGrad> loss_grads) {
  return backward(model, forward_pass(model, batch_x), loss_grads);
}

OptimizerState OptimizerState::adam(const MlpModel& model, double learning_rate) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  OptimizerState s;
  s.learning_rate = learning_rate;
  s.first_moment = model.params().zeros_like();
  s.second_moment = model.params().zeros_like();
  return s;
}

namespace {

template <typename Block>
void adam_update(Block& param, const Block& grad, Block& m, Block& v, double beta1,
                 double beta2, double step_size, double bias2, double epsilon) {
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  param.array() -=
      step_size * m.array() / ((v.array() / bias2).sqrt() + epsilon);
}

void check_same_shape(const Parameters& a, const Parameters& b) {
  if (a.weights.size() != b.weights.size()) {
    throw DimensionError("gradient has a different layer count than the model");
  }
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l].rows() != b.weights[l].rows() ||
        a.weights[l].cols() != b.weights[l].cols() ||
        a.biases[l].size() != b.biases[l].size()) {
      throw DimensionError("gradient shape mismatch at layer " + std::to_string(l));
    }
  }
}

}  // namespace

void optimizer_step(OptimizerState& state, MlpModel& model, const Parameters& grads) {
  check_same_shape(model.params(), grads);
  check_same_shape(model.params(), state.first_moment);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  const double step_size = state.learning_rate / bias1;
  auto& p = model.params();
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    adam_update(p.weights[l], grads.weights[l], state.first_moment.weights[l],
                state.second_moment.weights[l], state.beta1, state.beta2, step_size, bias2,
                state.epsilon);
    adam_update(p.biases[l], grads.biases[l], state.first_moment.biases[l],
                state.second_moment.biases[l], state.beta1, state.beta2, step_size, bias2,
                state.epsilon);
  }
}

namespace {

const char* activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "linear";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + s + "'");
}

}  // namespace

nlohmann::json checkpoint_to_json(const MlpModel& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& spec : model.layers()) {
    layers.push_back({{"input_width", spec.input_width},
                      {"output_width", spec.output_width},
                      {"activation", activation_name(spec.activation)}});
  }
  return {{"format_version", kCheckpointFormatVersion},
          {"layers", layers},
          {"sigma_transform", "softplus_eps"},
          {"sigma_floor", kSigmaFloor},
          {"l2_first_layer", model.l2_first_layer()},
          {"parameters", model.params().flatten()}};
}

MlpModel checkpoint_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw IoError("unsupported checkpoint format version " +
                    doc.at("format_version").dump());
    }
    if (doc.at("sigma_transform").get<std::string>() != "softplus_eps") {
      throw IoError("unsupported sigma transform " + doc.at("sigma_transform").dump());
    }
    std::vector<LayerSpec> layers;
    for (const auto& l : doc.at("layers")) {
      layers.push_back({l.at("input_width").get<int>(), l.at("output_width").get<int>(),
                        parse_activation(l.at("activation").get<std::string>())});
    }
    MlpModel model(std::move(layers), doc.at("l2_first_layer").get<double>());
    const auto flat = doc.at("parameters").get<std::vector<double>>();
    model.params().assign(flat);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const MlpModel& model, const std::string& path,
                     const std::string& config_hash) {
  auto doc = checkpoint_to_json(model);
  if (!config_hash.empty()) doc["config_hash"] = config_hash;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << doc.dump() << '\n';
}

MlpModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing checkpoint " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(doc);
}

}  // namespace can
