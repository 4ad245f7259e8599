#include "compocert/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "compocert/interchange.hpp"

namespace compocert::nn {

using nlohmann::json;

std::string shape_str(const Tensor& t) { return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]"; }

Tensor NoiseTape::draw(Eigen::Index rows, Eigen::Index cols, double stddev) {
  if (state_ == State::Replay) {
    if (cursor_ >= tape_.size()) throw std::logic_error("noise tape exhausted during replay");
    const Tensor& t = tape_[cursor_++];
    if (t.rows() != rows || t.cols() != cols) throw ShapeMismatch("replayed noise has shape " + shape_str(t));
    return t;
  }
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = normal(rng_);
  if (state_ == State::Record) tape_.push_back(t);
  return t;
}

Tensor uniform(Eigen::Index rows, Eigen::Index cols, double limit, CounterRng& rng) {
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = (2.0 * rng.uniform() - 1.0) * limit;
  return t;
}

Tensor fan_in_uniform(Eigen::Index fan_in, Eigen::Index fan_out, CounterRng& rng) {
  return uniform(fan_in, fan_out, std::sqrt(3.0 / static_cast<double>(fan_in)), rng);
}

double activity_penalty(const Tensor& h, double beta) { return beta * h.squaredNorm(); }

namespace {

RowVector resolve_weights(const Tensor& x, const RowVector* w) {
  if (!w) return RowVector::Constant(x.rows(), 1.0 / static_cast<double>(x.rows()));
  if (w->size() != x.rows()) throw ShapeMismatch("row weights do not match the batch size");
  return *w;
}

}  // namespace

Mlp::Mlp(std::string name, std::vector<int> dims, CounterRng& rng, bool regularized)
    : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw ShapeMismatch("an MLP needs input and output widths");
  for (int d : dims_)
    if (d <= 0) throw ShapeMismatch("layer widths must be positive");
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    weights_.emplace_back(name + ".W" + std::to_string(l), fan_in_uniform(dims_[l], dims_[l + 1], rng));
    biases_.emplace_back(name + ".b" + std::to_string(l), Tensor::Zero(1, dims_[l + 1]));
  }
  set_regularized(regularized);
}

bool Mlp::regularized() const { return std::find(regularized_.begin(), regularized_.end(), true) != regularized_.end(); }

void Mlp::set_regularized_layers(std::vector<bool> layers) {
  if (layers.size() != weights_.size()) throw ShapeMismatch("one regularization flag per layer required");
  regularized_ = std::move(layers);
}

Tensor Mlp::forward(const Tensor& x, Mode mode, const NoiseRegConfig& reg, NoiseTape& noise,
                    const RowVector* row_weight) {
  if (x.cols() != dims_.front())
    throw ShapeMismatch("MLP expects " + std::to_string(dims_.front()) + " input columns, got " + shape_str(x));
  cache_ = Cache{};
  cache_.row_weight = resolve_weights(x, row_weight);
  penalty_ = 0.0;

  Tensor cur = x;
  const std::size_t layers = weights_.size();
  for (std::size_t l = 0; l < layers; ++l) {
    cache_.inputs.push_back(cur);
    Tensor pre = cur * weights_[l].value;
    pre.rowwise() += biases_[l].value.row(0);
    Tensor act = (l + 1 < layers) ? Tensor(pre.cwiseMax(0.0)) : pre;
    cache_.pre.push_back(std::move(pre));
    const bool active = regularized_[l] && mode == Mode::Train;
    cache_.beta.push_back(active ? reg.beta : 0.0);
    if (active) {
      penalty_ += reg.beta * (cache_.row_weight * act.rowwise().squaredNorm()).value();
      cur = reg.alpha > 0.0 ? Tensor(act + noise.draw(act.rows(), act.cols(), std::sqrt(reg.alpha))) : act;
    } else {
      cur = act;
    }
    cache_.clean.push_back(std::move(act));
  }
  cache_.valid = true;
  return cur;
}

Tensor Mlp::backward(const Tensor& d_out) {
  if (!cache_.valid) throw StaleActivations("MLP backward without a matching forward pass");
  const std::size_t layers = weights_.size();
  if (d_out.rows() != cache_.clean.back().rows() || d_out.cols() != cache_.clean.back().cols())
    throw ShapeMismatch("gradient shape " + shape_str(d_out) + " does not match the MLP output");
  Tensor g = d_out;
  for (std::size_t l = layers; l-- > 0;) {
    if (cache_.beta[l] != 0.0) g += 2.0 * cache_.beta[l] * (cache_.row_weight.transpose().asDiagonal() * cache_.clean[l]);
    if (l + 1 < layers) g = g.cwiseProduct((cache_.pre[l].array() > 0.0).cast<double>().matrix());
    weights_[l].grad += cache_.inputs[l].transpose() * g;
    biases_[l].grad += g.colwise().sum();
    g = g * weights_[l].value.transpose();
  }
  return g;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::uint64_t Mlp::activation_pattern() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t l = 0; l + 1 < cache_.pre.size(); ++l)
    for (Eigen::Index i = 0; i < cache_.pre[l].size(); ++i) h = (h ^ (cache_.pre[l].data()[i] > 0.0)) * 1099511628211ULL;
  return h;
}

Embedding::Embedding(std::string name, int vocab, int dim, double init_limit, CounterRng& rng, bool regularized)
    : table_(std::move(name), uniform(vocab, dim, init_limit, rng)), regularized_(regularized) {}

Tensor Embedding::forward(const Eigen::MatrixXi& ids, Mode mode, const NoiseRegConfig& reg, NoiseTape& noise,
                          const RowVector* row_weight) {
  const Eigen::Index dim = table_.value.cols();
  Tensor out(ids.rows(), ids.cols() * dim);
  for (Eigen::Index r = 0; r < ids.rows(); ++r)
    for (Eigen::Index p = 0; p < ids.cols(); ++p) {
      const int id = ids(r, p);
      if (id < 0 || id >= table_.value.rows()) throw ShapeMismatch("embedding id " + std::to_string(id) + " out of range");
      out.block(r, p * dim, 1, dim) = table_.value.row(id);
    }
  ids_ = ids;
  clean_ = out;
  row_weight_ = resolve_weights(out, row_weight);
  const bool active = regularized_ && mode == Mode::Train;
  beta_ = active ? reg.beta : 0.0;
  penalty_ = active ? reg.beta * (row_weight_ * out.rowwise().squaredNorm()).value() : 0.0;
  valid_ = true;
  if (active && reg.alpha > 0.0) out += noise.draw(out.rows(), out.cols(), std::sqrt(reg.alpha));
  return out;
}

void Embedding::backward(const Tensor& d_out) {
  if (!valid_) throw StaleActivations("embedding backward without a matching forward pass");
  if (d_out.rows() != clean_.rows() || d_out.cols() != clean_.cols())
    throw ShapeMismatch("gradient shape " + shape_str(d_out) + " does not match the embedding output");
  Tensor g = d_out;
  if (beta_ != 0.0) g += 2.0 * beta_ * (row_weight_.transpose().asDiagonal() * clean_);
  const Eigen::Index dim = table_.value.cols();
  for (Eigen::Index r = 0; r < ids_.rows(); ++r)
    for (Eigen::Index p = 0; p < ids_.cols(); ++p) table_.grad.row(ids_(r, p)) += g.block(r, p * dim, 1, dim);
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    p.row(r).array() -= p.row(r).maxCoeff();
    p.row(r) = p.row(r).array().exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

SoftmaxCe softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, const RowVector* row_weight) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) throw ShapeMismatch("one label per row required");
  const RowVector w = resolve_weights(logits, row_weight);
  SoftmaxCe out;
  out.probs = softmax_rows(logits);
  out.grad = out.probs;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || y >= logits.cols()) throw ShapeMismatch("label out of range");
    // log-sum-exp form keeps saturated logits finite.
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.loss += w[r] * (lse - logits(r, y));
    out.grad(r, y) -= 1.0;
    out.grad.row(r) *= w[r];
  }
  return out;
}

Eigen::VectorXd attention_combine(const Eigen::VectorXd& u, const Eigen::MatrixXd& v) {
  if (v.cols() != u.size())
    throw ShapeMismatch("attention over " + std::to_string(u.size()) + " positions needs " + std::to_string(u.size()) +
                        " value columns, got " + std::to_string(v.cols()));
  return v * u;
}

void Adam::step(const std::vector<Parameter*>& params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (params.size() != m_.size()) throw ShapeMismatch("Adam state tracks a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols() || m_[i].rows() != p->value.rows() ||
        m_[i].cols() != p->value.cols())
      throw ShapeMismatch("gradient of '" + p->name + "' has shape " + shape_str(p->grad));
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
  }
}

GradCheckResult gradient_check(const std::vector<Parameter*>& params, const std::function<double()>& loss,
                               const std::function<std::uint64_t()>& pattern, const GradCheckOptions& opt,
                               CounterRng* sample_rng) {
  GradCheckResult res;
  for (Parameter* p : params) {
    std::vector<Eigen::Index> coords;
    const Eigen::Index n = p->value.size();
    if (opt.max_per_parameter == 0 || static_cast<std::size_t>(n) <= opt.max_per_parameter || !sample_rng) {
      for (Eigen::Index i = 0; i < n; ++i) coords.push_back(i);
      if (opt.max_per_parameter && coords.size() > opt.max_per_parameter) coords.resize(opt.max_per_parameter);
    } else {
      for (std::size_t k = 0; k < opt.max_per_parameter; ++k)
        coords.push_back(static_cast<Eigen::Index>(sample_rng->below(static_cast<std::uint64_t>(n))));
    }
    for (Eigen::Index i : coords) {
      double& x = p->value.data()[i];
      const double orig = x;
      x = orig + opt.step;
      const double up = loss();
      const std::uint64_t pat_up = pattern();
      x = orig - opt.step;
      const double down = loss();
      const std::uint64_t pat_down = pattern();
      x = orig;
      if (pat_up != pat_down) {
        ++res.skipped_kinks;
        continue;
      }
      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = p->grad.data()[i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), opt.floor});
      ++res.checked;
      if (res.worst_index < 0 || rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_parameter = p->name;
        res.worst_index = i;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

json checkpoint_json(const std::vector<Parameter*>& params) {
  json list = json::array();
  for (const auto* p : params) {
    std::vector<double> data(p->value.data(), p->value.data() + p->value.size());
    list.push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}, {"data", data}});
  }
  return {{"format", "compocert-checkpoint"}, {"version", 1}, {"parameters", list}};
}

void load_checkpoint(const json& j, const std::vector<Parameter*>& params) {
  const auto& list = j.at("parameters");
  if (list.size() != params.size()) throw ShapeMismatch("checkpoint holds a different number of parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = list[i];
    Parameter& p = *params[i];
    if (e.at("name").get<std::string>() != p.name)
      throw ShapeMismatch("checkpoint parameter '" + e.at("name").get<std::string>() + "' where '" + p.name + "' expected");
    const auto shape = e.at("shape").get<std::vector<Eigen::Index>>();
    const auto data = e.at("data").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols() ||
        static_cast<Eigen::Index>(data.size()) != p.value.size())
      throw ShapeMismatch("checkpoint shape mismatch for '" + p.name + "'");
    std::copy(data.begin(), data.end(), p.value.data());
  }
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<Parameter*>& params) {
  write_file_atomic(path, checkpoint_json(params).dump() + "\n");
}

}  // namespace compocert::nn
