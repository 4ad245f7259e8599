#include "compocert/xor_experiment.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <thread>

namespace compocert {

using nlohmann::json;
using nn::Mode;
using nn::Tensor;

XorDataset xor_dataset(bool drop_ef) {
  XorDataset d;
  const int train[6][3] = {{0, 0, 0}, {0, 1, 0}, {1, 0, 1}, {1, 1, 1}, {0, 0, 1}, {0, 1, 1}};
  const int test[2][3] = {{1, 0, 0}, {1, 1, 0}};
  auto row = [](std::string id, const int* x) {
    const int z = x[0] ^ x[1];
    return XorRow{std::move(id), x[0], x[1], x[2], z, z ^ x[2]};
  };
  for (int i = 0; i < (drop_ef ? 4 : 6); ++i) d.train.push_back(row(std::string(1, static_cast<char>('a' + i)), train[i]));
  for (int i = 0; i < 2; ++i) d.test.push_back(row("t" + std::to_string(i + 1), test[i]));
  return d;
}

std::string to_string(XorVariant v) {
  switch (v) {
    case XorVariant::Baseline: return "baseline";
    case XorVariant::Condition: return "condition";
    case XorVariant::NoReg: return "no-reg";
    case XorVariant::NoStructure: return "no-structure";
    case XorVariant::ModifiedData: return "modified-data";
  }
  return "?";
}

std::string display_name(XorVariant v) {
  switch (v) {
    case XorVariant::Baseline: return "Baseline";
    case XorVariant::Condition: return "Condition model";
    case XorVariant::NoReg: return "No regularization";
    case XorVariant::NoStructure: return "No structure";
    case XorVariant::ModifiedData: return "Modified training data";
  }
  return "?";
}

XorVariant xor_variant_from_string(const std::string& s) {
  for (XorVariant v : kTableOrder)
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

// ---------------------------------------------------------------------------

XorNet::XorNet(const XorNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  CounterRng rng = CounterRng(seed).fork(1);
  emb_ = nn::Embedding("E", 2, cfg.m, cfg.embedding_init, rng, cfg.regularize_embedding);
  if (cfg.arch == XorArchitecture::Structured) {
    std::vector<int> dh{2 * cfg.m};
    dh.insert(dh.end(), cfg.hidden.begin(), cfg.hidden.end());
    dh.push_back(cfg.m);
    fh_ = nn::Mlp("f_h", dh, rng);
    std::vector<bool> layers(dh.size() - 1, false);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const bool last = l + 1 == layers.size();
      using L = XorNetConfig::Layers;
      layers[l] = cfg.regularize_fh == L::All || (cfg.regularize_fh == L::Hidden && !last) ||
                  (cfg.regularize_fh == L::Output && last);
    }
    fh_.set_regularized_layers(layers);
    std::vector<int> dy{2 * cfg.m};
    dy.insert(dy.end(), cfg.hidden.begin(), cfg.hidden.end());
    dy.push_back(2);
    fy_ = nn::Mlp("f_y", dy, rng, cfg.regularize_fy);
  } else {
    std::vector<int> d{3 * cfg.m};
    d.insert(d.end(), cfg.monolithic_hidden.begin(), cfg.monolithic_hidden.end());
    d.push_back(2);
    mono_ = nn::Mlp("ffn", d, rng, cfg.regularize_monolithic);
  }
}

Tensor XorNet::forward(const Eigen::MatrixXi& x, Mode mode, const nn::NoiseRegConfig& reg, nn::NoiseTape& noise,
                       const nn::RowVector* row_weight) {
  if (x.cols() != 3) throw nn::ShapeMismatch("XOR inputs have three columns");
  const Tensor e = emb_.forward(x, mode, reg, noise, row_weight);
  forward_version_ = version_;
  if (cfg_.arch == XorArchitecture::Monolithic) return mono_.forward(e, mode, reg, noise, row_weight);
  const int m = cfg_.m;
  const Tensor h = fh_.forward(e.leftCols(2 * m), mode, reg, noise, row_weight);
  Tensor hy(h.rows(), 2 * m);
  hy << h, e.rightCols(m);
  return fy_.forward(hy, mode, reg, noise, row_weight);
}

void XorNet::backward(const Tensor& d_logits) {
  if (!forward_version_ || *forward_version_ != version_)
    throw nn::StaleActivations("parameters changed since the last forward pass");
  if (cfg_.arch == XorArchitecture::Monolithic) {
    emb_.backward(mono_.backward(d_logits));
    return;
  }
  const int m = cfg_.m;
  const Tensor g = fy_.backward(d_logits);
  const Tensor gh = fh_.backward(g.leftCols(m));
  Tensor ge(g.rows(), 3 * m);
  ge << gh, g.rightCols(m);
  emb_.backward(ge);
}

double XorNet::loss(const Eigen::MatrixXi& x, const std::vector<int>& y, Mode mode, const nn::NoiseRegConfig& reg,
                    nn::NoiseTape& noise, const nn::RowVector* row_weight, bool with_backward) {
  const Tensor logits = forward(x, mode, reg, noise, row_weight);
  const auto ce = nn::softmax_cross_entropy(logits, y, row_weight);
  if (with_backward) backward(ce.grad);
  return ce.loss + penalty();
}

double XorNet::penalty() const { return emb_.penalty() + fh_.penalty() + fy_.penalty() + mono_.penalty(); }

void XorNet::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

void XorNet::step(nn::Adam& opt) {
  opt.step(parameters());
  ++version_;
}

std::vector<nn::Parameter*> XorNet::parameters() {
  std::vector<nn::Parameter*> out{&emb_.table()};
  for (auto* mlp : {&fh_, &fy_, &mono_})
    for (auto* p : mlp->parameters()) out.push_back(p);
  return out;
}

std::vector<int> XorNet::predict(const Eigen::MatrixXi& x) {
  nn::NoiseTape quiet;
  const Tensor logits = forward(x, Mode::Eval, {}, quiet);
  std::vector<int> out;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) out.push_back(logits(r, 1) > logits(r, 0) ? 1 : 0);
  return out;
}

Tensor XorNet::hidden(const Eigen::MatrixXi& x) {
  if (cfg_.arch != XorArchitecture::Structured) throw std::logic_error("monolithic nets have no hidden node h");
  nn::NoiseTape quiet;
  const Tensor e = emb_.forward(x, Mode::Eval, {}, quiet);
  return fh_.forward(e.leftCols(2 * cfg_.m), Mode::Eval, {}, quiet);
}

int XorNet::decode(const nn::RowVector& h, int x3) {
  nn::NoiseTape quiet;
  Eigen::MatrixXi ids(1, 1);
  ids(0, 0) = x3;
  const Tensor e3 = emb_.forward(ids, Mode::Eval, {}, quiet);
  Tensor in(1, 2 * cfg_.m);
  in << h, e3;
  const Tensor logits = fy_.forward(in, Mode::Eval, {}, quiet);
  return logits(0, 1) > logits(0, 0) ? 1 : 0;
}

std::uint64_t XorNet::activation_pattern() const {
  return fh_.activation_pattern() ^ (fy_.activation_pattern() * 31) ^ (mono_.activation_pattern() * 131);
}

// ---------------------------------------------------------------------------

XorDataset dataset_for(XorVariant v) { return xor_dataset(v == XorVariant::ModifiedData); }

XorConfig configure_variant(XorVariant v, XorConfig base) {
  base.variant = v;
  switch (v) {
    case XorVariant::Condition:
    case XorVariant::ModifiedData: base.net.arch = XorArchitecture::Structured; break;
    case XorVariant::NoReg:
      base.net.arch = XorArchitecture::Structured;
      base.alpha = base.beta = 0.0;
      break;
    case XorVariant::Baseline:
      base.net.arch = XorArchitecture::Monolithic;
      base.alpha = base.beta = 0.0;
      break;
    case XorVariant::NoStructure:
      base.net.arch = XorArchitecture::Monolithic;
      base.net.regularize_monolithic = true;
      break;
  }
  return base;
}

namespace {

Eigen::MatrixXi inputs_of(const std::vector<XorRow>& rows) {
  Eigen::MatrixXi x(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) << rows[i].x1, rows[i].x2, rows[i].x3;
  return x;
}

double accuracy(XorNet& net, const std::vector<XorRow>& rows) {
  if (rows.empty()) return 0.0;
  const auto pred = net.predict(inputs_of(rows));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) ok += pred[i] == rows[i].y;
  return static_cast<double>(ok) / static_cast<double>(rows.size());
}

bool uses_noise(const XorConfig& cfg) {
  const auto& n = cfg.net;
  const bool any = n.regularize_embedding || (n.arch == XorArchitecture::Structured && (n.regularize_fh != XorNetConfig::Layers::None || n.regularize_fy)) ||
                   (n.arch == XorArchitecture::Monolithic && n.regularize_monolithic);
  return any && cfg.alpha > 0.0;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

TrainedXor train_xor_seed(const XorConfig& cfg, std::uint64_t seed, int iterations) {
  const XorDataset data = dataset_for(cfg.variant);
  TrainedXor out{XorNet(cfg.net, seed), {}};
  out.result.seed = seed;
  out.result.iterations = iterations;
  XorNet& net = out.net;

  CounterRng root(seed);
  CounterRng batch_rng = root.fork(2);
  nn::NoiseTape noise(root.fork(3));
  nn::Adam opt({cfg.lr});
  const nn::NoiseRegConfig reg{cfg.alpha, cfg.beta};
  const bool noisy = uses_noise(cfg);
  const auto n_rows = data.train.size();
  const Eigen::MatrixXi all_x = inputs_of(data.train);

  for (int it = 1; it <= iterations; ++it) {
    std::vector<int> counts(n_rows, 0);
    std::vector<std::size_t> draws(static_cast<std::size_t>(cfg.batch));
    for (auto& d : draws) {
      d = static_cast<std::size_t>(batch_rng.below(n_rows));
      ++counts[d];
    }
    Eigen::MatrixXi x;
    std::vector<int> y;
    nn::RowVector w;
    if (noisy) {
      // Every drawn row receives its own noise sample.
      x.resize(cfg.batch, 3);
      for (int i = 0; i < cfg.batch; ++i) {
        x.row(i) = all_x.row(static_cast<Eigen::Index>(draws[i]));
        y.push_back(data.train[draws[i]].y);
      }
      w = nn::RowVector::Constant(cfg.batch, 1.0 / cfg.batch);
    } else {
      // Without noise, duplicate rows contribute identical terms; weight the distinct rows instead.
      std::vector<std::size_t> present;
      for (std::size_t r = 0; r < n_rows; ++r)
        if (counts[r]) present.push_back(r);
      x.resize(static_cast<Eigen::Index>(present.size()), 3);
      w.resize(static_cast<Eigen::Index>(present.size()));
      for (std::size_t i = 0; i < present.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = all_x.row(static_cast<Eigen::Index>(present[i]));
        y.push_back(data.train[present[i]].y);
        w[static_cast<Eigen::Index>(i)] = static_cast<double>(counts[present[i]]) / cfg.batch;
      }
    }
    net.zero_grad();
    const double loss = net.loss(x, y, Mode::Train, reg, noise, &w, true);
    if (!std::isfinite(loss)) {
      out.result.diverged = true;
      out.result.error = "non-finite loss at iteration " + std::to_string(it);
      out.result.final_loss = loss;
      return out;
    }
    net.step(opt);
    out.result.final_loss = loss;
    if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it == iterations))
      out.result.log.push_back(std::to_string(it) + "," + fmt_g(loss) + "," + fmt_g(accuracy(net, data.train)) + "," +
                               fmt_g(accuracy(net, data.test)));
  }
  out.result.train_acc = accuracy(net, data.train);
  out.result.test_acc = accuracy(net, data.test);
  return out;
}

TrainedXor train_xor(const XorConfig& cfg, std::uint64_t seed) {
  TrainedXor t = train_xor_seed(cfg, seed, cfg.iterations);
  if (cfg.variant == XorVariant::Condition && t.result.train_acc < 1.0 && cfg.retry_factor > 1) {
    t = train_xor_seed(cfg, seed, cfg.iterations * cfg.retry_factor);
    t.result.retried = true;
  }
  if (cfg.net.arch == XorArchitecture::Structured && !t.result.diverged)
    t.result.probe = probe_hidden_unambiguity(t.net, dataset_for(cfg.variant), EqualityPolicy::threshold());
  return t;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

XorVariantResult run_variant(const XorConfig& cfg, int workers) {
  XorVariantResult r;
  r.variant = cfg.variant;
  r.seeds.resize(cfg.seeds.size());
  auto run_one = [&](std::size_t i) { r.seeds[i] = train_xor(cfg, cfg.seeds[i]).result; };
  if (workers <= 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) run_one(i);
  } else {
    for (std::size_t start = 0; start < cfg.seeds.size(); start += static_cast<std::size_t>(workers)) {
      std::vector<std::thread> pool;
      for (std::size_t i = start; i < std::min(cfg.seeds.size(), start + static_cast<std::size_t>(workers)); ++i)
        pool.emplace_back(run_one, i);
      for (auto& t : pool) t.join();
    }
  }
  std::vector<double> tr, te;
  for (const auto& s : r.seeds) {
    tr.push_back(s.train_acc);
    te.push_back(s.test_acc);
  }
  std::tie(r.train_mean, r.train_std) = mean_std(tr);
  std::tie(r.test_mean, r.test_std) = mean_std(te);
  return r;
}

double purity(const std::vector<int>& clusters, const std::vector<int>& labels) {
  if (clusters.empty()) return 0.0;
  std::map<int, std::map<int, int>> counts;
  for (std::size_t i = 0; i < clusters.size(); ++i) ++counts[clusters[i]][labels[i]];
  int agree = 0;
  for (const auto& [c, by_label] : counts) {
    int best = 0;
    for (const auto& [l, n] : by_label) best = std::max(best, n);
    agree += best;
  }
  return static_cast<double>(agree) / static_cast<double>(clusters.size());
}

HiddenProbe probe_hidden_unambiguity(XorNet& net, const XorDataset& d, const EqualityPolicy& policy) {
  HiddenProbe p;
  const Tensor h = net.hidden(inputs_of(d.train));
  std::vector<Value> values;
  for (Eigen::Index r = 0; r < h.rows(); ++r) values.emplace_back(Vector(h.row(r).data(), h.row(r).data() + h.cols()));
  const PoolCanonicalizer canon(values, policy);
  p.epsilon = canon.epsilon();
  p.clusters = canon.training_cluster_count();
  std::map<std::string, int> ids;
  std::vector<int> z;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto [it, fresh] = ids.emplace(canon.token(values[i]), static_cast<int>(ids.size()));
    p.labels.push_back(it->second);
    p.rows.push_back(d.train[i].id);
    z.push_back(d.train[i].z);
  }
  if (policy.mode == EqualityMode::ExactSymbol) p.clusters = ids.size();
  p.purity = purity(p.labels, z);
  return p;
}

XorGradCheck gradcheck_xor_nets(int count, std::uint64_t seed, bool noise, const nn::GradCheckOptions& opt) {
  XorGradCheck out;
  out.noise = noise;
  const CounterRng root(seed);
  for (int k = 0; k < count; ++k) {
    CounterRng rng = root.fork(static_cast<std::uint64_t>(k));
    XorNetConfig cfg;
    cfg.m = 2 + static_cast<int>(rng.below(7));
    cfg.hidden.assign(1 + rng.below(2), 0);
    for (auto& h : cfg.hidden) h = 4 + static_cast<int>(rng.below(13));
    cfg.regularize_fh = static_cast<XorNetConfig::Layers>(rng.below(3));
    cfg.regularize_embedding = rng.below(2) == 1;
    XorNet net(cfg, rng());
    Eigen::MatrixXi x(8, 3);
    std::vector<int> y;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index c = 0; c < 3; ++c) x(r, c) = static_cast<int>(rng.below(2));
      y.push_back(x(r, 0) ^ x(r, 1) ^ x(r, 2));
    }
    const nn::NoiseRegConfig reg{noise ? 0.1 : 0.0, 0.1};
    nn::NoiseTape tape(rng.fork(7));
    tape.record();
    net.zero_grad();
    net.loss(x, y, Mode::Train, reg, tape, nullptr, true);
    auto again = [&] {
      tape.replay();
      return net.loss(x, y, Mode::Train, reg, tape);
    };
    const auto r = nn::gradient_check(net.parameters(), again, [&] { return net.activation_pattern(); }, opt);
    out.max_rel_error = std::max(out.max_rel_error, r.max_rel_error);
    out.nets.push_back(r);
  }
  return out;
}

json to_json(const XorGradCheck& g) {
  json nets = json::array();
  for (const auto& r : g.nets)
    nets.push_back({{"max_rel_error", r.max_rel_error},
                    {"worst_parameter", r.worst_parameter},
                    {"worst_index", r.worst_index},
                    {"analytic", r.worst_analytic},
                    {"numeric", r.worst_numeric},
                    {"checked", r.checked},
                    {"skipped_kinks", r.skipped_kinks}});
  return {{"noise", g.noise}, {"max_rel_error", g.max_rel_error}, {"nets", nets}};
}

// ---------------------------------------------------------------------------

Dataset to_dataset(const XorDataset& d) {
  Dataset out;
  auto sample = [](const XorRow& r) {
    return Sample{r.id, {std::to_string(r.x1), std::to_string(r.x2), std::to_string(r.x3)}, {std::to_string(r.y)}};
  };
  for (const auto& r : d.train) out.train.push_back(sample(r));
  for (const auto& r : d.test) out.test.push_back(sample(r));
  return out;
}

GraphSet xor_reference(const Dataset& d) {
  GraphSet z;
  Component c;
  c.id = "xor";
  c.arity = 2;
  c.commutative = true;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) c.table[{std::to_string(a), std::to_string(b)}] = std::to_string(a ^ b);
  z.components[c.id] = c;
  const Graph g{{0, 1, 2}, {{3, "xor", {0, 1}}, {4, "xor", {3, 2}}}, {4}};
  for (const auto& s : d.train) z.graphs[s.id] = g;
  for (const auto& s : d.test) z.graphs[s.id] = g;
  z.evaluate_all(d);
  return z;
}

XorGraphSets export_graph_sets(XorNet& net, const XorDataset& d) {
  XorGraphSets out;
  out.dataset = to_dataset(d);
  out.reference = xor_reference(out.dataset);
  GraphSet& h = out.hypothesis;

  std::vector<XorRow> rows = d.train;
  rows.insert(rows.end(), d.test.begin(), d.test.end());
  const Eigen::MatrixXi x = inputs_of(rows);
  const auto pred = net.predict(x);

  if (net.config().arch == XorArchitecture::Monolithic) {
    h.components["ffn"] = Component{"ffn", 3, false, {}, {}};
    const Graph g{{0, 1, 2}, {{3, "ffn", {0, 1, 2}}}, {3}};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      h.graphs[rows[i].id] = g;
      h.values[rows[i].id] = {{0, std::to_string(rows[i].x1)},
                              {1, std::to_string(rows[i].x2)},
                              {2, std::to_string(rows[i].x3)},
                              {3, std::to_string(pred[i])}};
    }
    return out;
  }

  const Tensor hv = net.hidden(x);
  h.components["f_h"] = Component{"f_h", 2, false, {}, {}};
  h.components["f_y"] = Component{"f_y", 2, false, {}, {}};
  const Graph g{{0, 1, 2}, {{3, "f_h", {0, 1}}, {4, "f_y", {3, 2}}}, {4}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    h.graphs[rows[i].id] = g;
    h.values[rows[i].id] = {{0, std::to_string(rows[i].x1)},
                            {1, std::to_string(rows[i].x2)},
                            {2, std::to_string(rows[i].x3)},
                            {3, Vector(hv.row(r).data(), hv.row(r).data() + hv.cols())},
                            {4, std::to_string(pred[i])}};
  }
  return out;
}

// ---------------------------------------------------------------------------

TableFormat table_format_from_string(const std::string& s) {
  if (s == "md" || s == "markdown") return TableFormat::Markdown;
  if (s == "csv") return TableFormat::Csv;
  if (s == "json") return TableFormat::Json;
  throw std::invalid_argument("unknown format '" + s + "' (md, csv, json)");
}

namespace {

std::string one_decimal(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

json to_json(const XorVariantResult& r) {
  json seeds = json::array();
  for (const auto& s : r.seeds) {
    json j = {{"seed", s.seed},
              {"train_acc", s.train_acc},
              {"test_acc", s.test_acc},
              {"final_loss", s.final_loss},
              {"iterations", s.iterations},
              {"retried", s.retried},
              {"diverged", s.diverged}};
    if (!s.error.empty()) j["error"] = s.error;
    if (s.probe)
      j["probe"] = {{"clusters", s.probe->clusters},
                    {"purity", s.probe->purity},
                    {"epsilon", s.probe->epsilon},
                    {"labels", s.probe->labels},
                    {"rows", s.probe->rows}};
    seeds.push_back(j);
  }
  return {{"variant", to_string(r.variant)},
          {"name", display_name(r.variant)},
          {"train_mean", r.train_mean},
          {"train_std", r.train_std},
          {"test_mean", r.test_mean},
          {"test_std", r.test_std},
          {"seeds", seeds}};
}

std::string emit_table2(const std::vector<XorVariantResult>& results, TableFormat fmt) {
  std::map<XorVariant, const XorVariantResult*> by;
  for (const auto& r : results) by[r.variant] = &r;

  if (fmt == TableFormat::Json) {
    json rows = json::array();
    for (XorVariant v : kTableOrder) rows.push_back(by.contains(v) ? to_json(*by[v]) : json{{"variant", to_string(v)}, {"name", display_name(v)}, {"test_mean", nullptr}});
    return json{{"rows", rows}}.dump(2) + "\n";
  }

  std::ostringstream out;
  if (fmt == TableFormat::Csv) {
    out << "variant,name,test_mean,test_std,train_mean,train_std,seeds\n";
    for (XorVariant v : kTableOrder) {
      out << to_string(v) << "," << display_name(v) << ",";
      if (const auto* r = by.count(v) ? by[v] : nullptr)
        out << one_decimal(r->test_mean) << "," << one_decimal(r->test_std) << "," << one_decimal(r->train_mean) << ","
            << one_decimal(r->train_std) << "," << r->seeds.size() << "\n";
      else
        out << ",,,,0\n";
    }
    return out.str();
  }

  out << "| Model | Test accuracy (mean ± std) |\n|---|---|\n";
  for (XorVariant v : kTableOrder) {
    out << "| " << display_name(v) << " | ";
    if (const auto* r = by.count(v) ? by[v] : nullptr)
      out << one_decimal(r->test_mean) << " ± " << one_decimal(r->test_std);
    else
      out << "-";
    out << " |\n";
  }
  return out.str();
}

}  // namespace compocert
