#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "compocert/rng.hpp"

namespace compocert::nn {

/// Row-major dense matrix; rows index the batch.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StaleActivations : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class DivergedLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Tensor& t);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

enum class Mode { Train, Eval };

/// Noise variance alpha and activity penalty weight beta.
struct NoiseRegConfig {
  double alpha = 0.0;
  double beta = 0.0;
};

/// Source of the additive Gaussian noise. Draws can be recorded and replayed so
/// that finite differences see the same noise as the analytic pass.
class NoiseTape {
 public:
  enum class State { Fresh, Record, Replay };

  explicit NoiseTape(CounterRng rng = CounterRng(0)) : rng_(rng) {}

  Tensor draw(Eigen::Index rows, Eigen::Index cols, double stddev);

  void record() {
    state_ = State::Record;
    tape_.clear();
    cursor_ = 0;
  }
  void replay() {
    state_ = State::Replay;
    cursor_ = 0;
  }
  void fresh() { state_ = State::Fresh; }
  [[nodiscard]] State state() const { return state_; }
  [[nodiscard]] std::size_t recorded() const { return tape_.size(); }

 private:
  CounterRng rng_;
  State state_ = State::Fresh;
  std::vector<Tensor> tape_;
  std::size_t cursor_ = 0;
};

enum class Activation { Relu, Identity };

/// Fan-in scaled uniform initialisation, limit sqrt(3 / fan_in).
Tensor fan_in_uniform(Eigen::Index fan_in, Eigen::Index fan_out, CounterRng& rng);
Tensor uniform(Eigen::Index rows, Eigen::Index cols, double limit, CounterRng& rng);

/// Feed-forward stack of affine layers. Hidden layers use the rectifier, the
/// last layer is linear. When regularized, every layer output h contributes
/// beta * ||h||^2 per row and is passed on as h + N(0, alpha) in training.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, std::vector<int> dims, CounterRng& rng, bool regularized = false);

  /// `row_weight` scales each row's penalty (the loss is a weighted mean over rows).
  Tensor forward(const Tensor& x, Mode mode, const NoiseRegConfig& reg, NoiseTape& noise,
                 const RowVector* row_weight = nullptr);
  /// Accumulates parameter gradients; returns d loss / d input.
  Tensor backward(const Tensor& d_out);

  [[nodiscard]] double penalty() const { return penalty_; }
  std::vector<Parameter*> parameters();
  [[nodiscard]] const std::vector<int>& dims() const { return dims_; }
  [[nodiscard]] bool regularized() const;
  void set_regularized(bool r) { regularized_.assign(weights_.size(), r); }
  /// Per-layer selection; layer i is the output of the i-th affine map.
  void set_regularized_layers(std::vector<bool> layers);
  [[nodiscard]] const std::vector<bool>& regularized_layers() const { return regularized_; }
  /// Hash of the rectifier on/off pattern of the last forward pass.
  [[nodiscard]] std::uint64_t activation_pattern() const;

 private:
  std::vector<int> dims_;
  std::vector<bool> regularized_;
  std::vector<Parameter> weights_;
  std::vector<Parameter> biases_;

  struct Cache {
    std::vector<Tensor> inputs;  // input of each layer (after noise of the previous one)
    std::vector<Tensor> pre;     // affine output
    std::vector<Tensor> clean;   // activation before noise
    RowVector row_weight;
    std::vector<double> beta;  // per layer, zero where inactive
    bool valid = false;
  } cache_;
  double penalty_ = 0.0;
};

/// Row lookup table: ids -> rows of the table, optionally regularized.
class Embedding {
 public:
  Embedding() = default;
  Embedding(std::string name, int vocab, int dim, double init_limit, CounterRng& rng, bool regularized = false);

  /// ids is batch x positions; the result stacks one dim-block per position.
  Tensor forward(const Eigen::MatrixXi& ids, Mode mode, const NoiseRegConfig& reg, NoiseTape& noise,
                 const RowVector* row_weight = nullptr);
  void backward(const Tensor& d_out);

  [[nodiscard]] double penalty() const { return penalty_; }
  Parameter& table() { return table_; }
  [[nodiscard]] const Parameter& table() const { return table_; }
  [[nodiscard]] bool regularized() const { return regularized_; }
  void set_regularized(bool r) { regularized_ = r; }

 private:
  Parameter table_;
  bool regularized_ = false;
  Eigen::MatrixXi ids_;
  Tensor clean_;
  RowVector row_weight_;
  double beta_ = 0.0;
  bool valid_ = false;
  double penalty_ = 0.0;
};

struct SoftmaxCe {
  double loss = 0.0;  // weighted mean cross-entropy
  Tensor probs;
  Tensor grad;  // d loss / d logits
};

Tensor softmax_rows(const Tensor& logits);
/// Cross-entropy of row-wise softmax. Weights default to uniform (mean over rows).
SoftmaxCe softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                const RowVector* row_weight = nullptr);

/// Weighted combination VU = sum_i u_i v_i of the columns of V (d x k).
Eigen::VectorXd attention_combine(const Eigen::VectorXd& u, const Eigen::MatrixXd& v);

/// Row-wise squared L2 norm weighted by beta: the activity penalty of one layer.
double activity_penalty(const Tensor& h, double beta);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(const std::vector<Parameter*>& params);
  [[nodiscard]] std::int64_t steps() const { return t_; }
  [[nodiscard]] const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct GradCheckOptions {
  double step = 1e-4;
  /// Denominator floor of the relative error, so exact zeros do not divide by zero.
  double floor = 1e-6;
  /// Coordinates checked per parameter (all when 0).
  std::size_t max_per_parameter = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

/// Central-difference check of the gradients already stored in `params`.
/// `loss` re-runs the forward pass; `pattern` returns the rectifier pattern of
/// the last pass so coordinates straddling a kink are skipped.
GradCheckResult gradient_check(const std::vector<Parameter*>& params, const std::function<double()>& loss,
                               const std::function<std::uint64_t()>& pattern, const GradCheckOptions& opt = {},
                               CounterRng* sample_rng = nullptr);

nlohmann::json checkpoint_json(const std::vector<Parameter*>& params);
void load_checkpoint(const nlohmann::json& j, const std::vector<Parameter*>& params);
void save_checkpoint(const std::filesystem::path& path, const std::vector<Parameter*>& params);

}  // namespace compocert::nn
