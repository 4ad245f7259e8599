#include "compocert/scan.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "compocert/equality.hpp"

namespace compocert {

using nlohmann::json;
using nn::Mode;
using nn::Tensor;

const std::vector<std::string>& MiniScanGrammar::words() {
  static const std::vector<std::string> w{"jump", "run", "walk", "look", "left", "right", "twice", "and", "after", "eos"};
  return w;
}

const std::vector<std::string>& MiniScanGrammar::actions() {
  static const std::vector<std::string> a{"JUMP", "RUN", "WALK", "LOOK", "TURN_LEFT", "TURN_RIGHT", "END"};
  return a;
}

namespace {

int index_in(const std::vector<std::string>& v, const std::string& s) {
  auto it = std::find(v.begin(), v.end(), s);
  return it == v.end() ? -1 : static_cast<int>(it - v.begin());
}

bool is_movement(const std::string& w) { return index_in(kMovementWords, w) >= 0; }
bool is_direction(const std::string& w) { return index_in(kDirectionWords, w) >= 0; }

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string turn_of(const std::string& dir) { return "TURN_" + upper(dir); }

using Actions = std::vector<std::string>;

Actions concat(Actions a, const Actions& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Recursive descent over S := V [(and|after) V], V := D [twice], D := U [dir].
class Parser {
 public:
  explicit Parser(const std::vector<std::string>& w) : w_(w) {}

  Actions parse() {
    Actions out = sentence();
    if (pos_ != w_.size()) fail("trailing word");
    return out;
  }

 private:
  [[nodiscard]] const std::string* peek() const { return pos_ < w_.size() ? &w_[pos_] : nullptr; }
  [[noreturn]] void fail(const std::string& why) const {
    throw ScanParseError(why + " at word " + std::to_string(pos_) + " of '" + join_words(w_) + "'");
  }

  Actions sentence() {
    Actions first = verb_phrase();
    const std::string* c = peek();
    if (!c) return first;
    if (*c == "and") {
      ++pos_;
      return concat(first, verb_phrase());
    }
    if (*c == "after") {
      ++pos_;
      return concat(verb_phrase(), first);
    }
    fail("expected a conjunction");
  }

  Actions verb_phrase() {
    Actions d = directed();
    if (const std::string* t = peek(); t && *t == "twice") {
      ++pos_;
      return concat(d, d);
    }
    return d;
  }

  Actions directed() {
    const std::string* u = peek();
    if (!u || !is_movement(*u)) fail("expected a movement word");
    ++pos_;
    Actions out{upper(*u)};
    if (const std::string* d = peek(); d && is_direction(*d)) {
      ++pos_;
      out.insert(out.begin(), turn_of(*d));
    }
    return out;
  }

  const std::vector<std::string>& w_;
  std::size_t pos_ = 0;
};

// Operator table: each word either pushes an operand, rewrites the top operand,
// or is a binary conjunction applied once both sides are complete. Levels track
// U (0), D (1), V (2) so that out-of-grammar orderings are rejected.
struct OpEntry {
  enum Kind { Operand, Postfix, Infix } kind;
  int accepts_max;  // highest operand level the word may follow / combine
  int result_level;
  bool swap;  // infix: right operand first
};

const std::map<std::string, OpEntry>& op_table() {
  static const std::map<std::string, OpEntry> t{
      {"jump", {OpEntry::Operand, -1, 0, false}},  {"run", {OpEntry::Operand, -1, 0, false}},
      {"walk", {OpEntry::Operand, -1, 0, false}},  {"look", {OpEntry::Operand, -1, 0, false}},
      {"left", {OpEntry::Postfix, 0, 1, false}},   {"right", {OpEntry::Postfix, 0, 1, false}},
      {"twice", {OpEntry::Postfix, 1, 2, false}},  {"and", {OpEntry::Infix, 2, 3, false}},
      {"after", {OpEntry::Infix, 2, 3, true}},
  };
  return t;
}

}  // namespace

int MiniScanGrammar::word_id(const std::string& w) {
  const int i = index_in(words(), w);
  if (i < 0) throw ScanParseError("unknown word '" + w + "'");
  return i;
}

int MiniScanGrammar::action_id(const std::string& a) {
  const int i = index_in(actions(), a);
  if (i < 0) throw ScanParseError("unknown action '" + a + "'");
  return i;
}

std::vector<std::vector<std::string>> MiniScanGrammar::enumerate() const {
  std::vector<std::vector<std::string>> d, v, out;
  for (const auto& u : kMovementWords) {
    d.push_back({u});
    for (const auto& dir : kDirectionWords) d.push_back({u, dir});
  }
  for (const auto& x : d) {
    v.push_back(x);
    v.push_back(concat(x, {"twice"}));
  }
  for (const auto& x : v) out.push_back(x);
  for (const std::string conj : {"and", "after"})
    for (const auto& a : v)
      for (const auto& b : v) {
        auto s = a;
        s.push_back(conj);
        s.insert(s.end(), b.begin(), b.end());
        out.push_back(std::move(s));
      }
  std::erase_if(out, [&](const auto& w) { return static_cast<int>(interpret(w).size()) > m; });
  return out;
}

std::vector<std::string> split_words(const std::string& command) {
  std::istringstream in(command);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::vector<std::string> interpret(const std::vector<std::string>& words) { return Parser(words).parse(); }

std::vector<std::string> interpret_table(const std::vector<std::string>& words) {
  struct Operand {
    Actions actions;
    int level;
  };
  std::vector<Operand> operands;
  const OpEntry* pending = nullptr;
  bool expect_operand = true;
  auto bad = [&](const std::string& why) { return ScanParseError(why + " in '" + join_words(words) + "'"); };
  for (const auto& w : words) {
    auto it = op_table().find(w);
    if (it == op_table().end()) throw bad("unknown word '" + w + "'");
    const OpEntry& e = it->second;
    switch (e.kind) {
      case OpEntry::Operand:
        if (!expect_operand) throw bad("unexpected '" + w + "'");
        operands.push_back({{upper(w)}, e.result_level});
        expect_operand = false;
        break;
      case OpEntry::Postfix: {
        if (expect_operand || operands.back().level > e.accepts_max) throw bad("misplaced '" + w + "'");
        Operand& top = operands.back();
        if (e.result_level == 1)
          top.actions.insert(top.actions.begin(), turn_of(w));
        else
          top.actions = concat(top.actions, top.actions);
        top.level = e.result_level;
        break;
      }
      case OpEntry::Infix:
        if (expect_operand || pending || operands.back().level > e.accepts_max) throw bad("misplaced '" + w + "'");
        pending = &e;
        expect_operand = true;
        break;
    }
  }
  if (expect_operand) throw bad("incomplete command");
  if (pending) {
    Operand rhs = operands.back();
    operands.pop_back();
    Operand lhs = operands.back();
    operands.pop_back();
    operands.push_back({pending->swap ? concat(rhs.actions, lhs.actions) : concat(lhs.actions, rhs.actions), 3});
  }
  return operands.back().actions;
}

std::string scaffold(const std::vector<std::string>& words) {
  std::vector<std::string> out;
  for (const auto& w : words) out.push_back(is_movement(w) ? "X" : w);
  return join_words(out);
}

ScanSplit generate_minisplit(const MiniScanGrammar& g, const SplitSizes& sizes, std::uint64_t seed) {
  ScanSplit split;
  split.grammar = g;
  const auto all = g.enumerate();
  std::vector<std::vector<std::string>> test_pool, train_pool;
  std::size_t longest = 0;
  for (const auto& w : all) {
    longest = std::max(longest, w.size());
    const bool has_jump = std::find(w.begin(), w.end(), "jump") != w.end();
    if (w.size() == 1) continue;  // isolated primitives are always in training
    (has_jump ? test_pool : train_pool).push_back(w);
  }
  split.n = static_cast<int>(longest) + 1;
  const std::size_t train_capacity = train_pool.size() + kMovementWords.size();
  const std::size_t test_size = sizes.test == 0 ? test_pool.size() : sizes.test;
  const std::size_t train_size = sizes.train == 0 ? train_capacity : sizes.train;
  if (test_size > test_pool.size())
    throw GrammarExhausted("test size " + std::to_string(test_size) + " exceeds the " +
                           std::to_string(test_pool.size()) + " jump compositions");
  if (train_size > train_capacity)
    throw GrammarExhausted("train size " + std::to_string(train_size) + " exceeds the " +
                           std::to_string(train_capacity) + " available training commands");

  CounterRng rng(seed);
  CounterRng test_rng = rng.fork(1), pick_rng = rng.fork(2), fill_rng = rng.fork(3);
  std::shuffle(test_pool.begin(), test_pool.end(), test_rng);
  test_pool.resize(test_size);

  std::set<std::vector<std::string>> chosen;
  std::vector<std::vector<std::string>> train;
  for (const auto& u : kMovementWords) {
    train.push_back({u});
    chosen.insert({u});
  }
  std::vector<std::string> scaffolds;
  for (const auto& w : test_pool)
    if (std::find(scaffolds.begin(), scaffolds.end(), scaffold(w)) == scaffolds.end()) scaffolds.push_back(scaffold(w));
  for (const auto& s : scaffolds) {
    bool covered = false;
    for (const auto& t : train) covered = covered || scaffold(t) == s;
    if (covered) continue;
    std::vector<const std::vector<std::string>*> candidates;
    for (const auto& w : train_pool)
      if (scaffold(w) == s && !chosen.count(w)) candidates.push_back(&w);
    if (candidates.empty()) throw GrammarExhausted("no training command for scaffold '" + s + "'");
    const auto& pick = *candidates[pick_rng.below(candidates.size())];
    train.push_back(pick);
    chosen.insert(pick);
  }
  if (train.size() > train_size)
    throw GrammarExhausted("train size " + std::to_string(train_size) + " is below the " +
                           std::to_string(train.size()) + " commands needed to cover the test scaffolds");
  std::vector<std::vector<std::string>> rest;
  for (const auto& w : train_pool)
    if (!chosen.count(w)) rest.push_back(w);
  std::shuffle(rest.begin(), rest.end(), fill_rng);
  for (std::size_t i = 0; train.size() < train_size; ++i) train.push_back(rest[i]);

  for (const auto& w : train) split.train.push_back({w, interpret(w)});
  for (const auto& w : test_pool) split.test.push_back({w, interpret(w)});
  return split;
}

std::string dump_split(const ScanSplit& s) {
  std::string out;
  for (const auto* part : {&s.train, &s.test})
    for (const auto& x : *part) out += x.command() + "\t" + join_words(x.actions) + "\n";
  return out;
}

// ---------------------------------------------------------------------------

ScanNet::ScanNet(const ScanNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  CounterRng root(seed);
  CounterRng init = root.fork(1);
  const int vocab = static_cast<int>(MiniScanGrammar::words().size());
  const int n_actions = static_cast<int>(MiniScanGrammar::actions().size());
  syn_ = nn::Embedding("syntax", vocab, cfg.syntax_dim, cfg.syntax_init, init, true);
  sem_ = nn::Embedding("semantics", vocab, n_actions, cfg.semantic_init, init, true);
  std::vector<int> dims{cfg.n * cfg.syntax_dim};
  dims.insert(dims.end(), cfg.attention_hidden.begin(), cfg.attention_hidden.end());
  if (cfg.separate_heads) {
    dims.push_back(cfg.n);
    for (int j = 0; j < cfg.m; ++j) att_.emplace_back("attention" + std::to_string(j), dims, init);
  } else {
    dims.push_back(cfg.m * cfg.n);
    att_.emplace_back("attention", dims, init);
  }
  if (cfg.uniform_start)
    for (auto& a : att_) {
      auto params = a.parameters();
      params[params.size() - 2]->value.setZero();
      params[params.size() - 1]->value.setZero();
    }
}

Tensor ScanNet::forward(const Eigen::MatrixXi& ids, Mode mode, const nn::NoiseRegConfig& reg, nn::NoiseTape& noise) {
  if (ids.cols() != cfg_.n) throw nn::ShapeMismatch("expected " + std::to_string(cfg_.n) + " input positions");
  const Eigen::Index b = ids.rows(), n = cfg_.n, m = cfg_.m;
  const Eigen::Index a = static_cast<Eigen::Index>(MiniScanGrammar::actions().size());
  const Tensor t = syn_.forward(ids, mode, reg, noise);
  Tensor scores(b, m * n);
  if (att_.size() == 1) {
    scores = att_[0].forward(t, mode, reg, noise);
  } else {
    for (Eigen::Index j = 0; j < m; ++j) scores.middleCols(j * n, n) = att_[static_cast<std::size_t>(j)].forward(t, mode, reg, noise);
  }
  u_.resize(b, m * n);
  for (Eigen::Index r = 0; r < b; ++r)
    for (Eigen::Index j = 0; j < m; ++j) {
      auto seg = scores.block(r, j * n, 1, n);
      const Eigen::RowVectorXd e = (seg.array() - seg.maxCoeff()).exp().matrix();
      u_.block(r, j * n, 1, n) = e / e.sum();
    }
  v_ = sem_.forward(ids, mode, reg, noise);
  Tensor logits(b * m, a);
  for (Eigen::Index r = 0; r < b; ++r) {
    // V as n x actions, one semantic row per position.
    const Eigen::Map<const Tensor> v(v_.row(r).data(), n, a);
    const Eigen::Map<const Tensor> u(u_.row(r).data(), m, n);
    logits.block(r * m, 0, m, a) = u * v;
  }
  batch_ = b;
  valid_ = true;
  return logits;
}

void ScanNet::backward(const Tensor& d_logits) {
  if (!valid_) throw nn::StaleActivations("scan backward without a matching forward pass");
  const Eigen::Index n = cfg_.n, m = cfg_.m;
  const Eigen::Index a = static_cast<Eigen::Index>(MiniScanGrammar::actions().size());
  if (d_logits.rows() != batch_ * m || d_logits.cols() != a)
    throw nn::ShapeMismatch("gradient shape " + nn::shape_str(d_logits) + " does not match the logits");
  Tensor d_scores(batch_, m * n), d_v(batch_, n * a);
  for (Eigen::Index r = 0; r < batch_; ++r) {
    const Eigen::Map<const Tensor> v(v_.row(r).data(), n, a);
    const Eigen::Map<const Tensor> u(u_.row(r).data(), m, n);
    const Tensor dl = d_logits.block(r * m, 0, m, a);
    Eigen::Map<Tensor>(d_v.row(r).data(), n, a) = u.transpose() * dl;
    const Tensor du = dl * v.transpose();  // m x n
    Eigen::Map<Tensor> ds(d_scores.row(r).data(), m, n);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double dot = u.row(j).dot(du.row(j));
      ds.row(j) = u.row(j).array() * (du.row(j).array() - dot);
    }
  }
  if (att_.size() == 1) {
    syn_.backward(att_[0].backward(d_scores));
  } else {
    Tensor d_t = Tensor::Zero(batch_, n * cfg_.syntax_dim);
    for (Eigen::Index j = 0; j < m; ++j) d_t += att_[static_cast<std::size_t>(j)].backward(d_scores.middleCols(j * n, n));
    syn_.backward(d_t);
  }
  sem_.backward(d_v);
  valid_ = false;
}

double ScanNet::loss(const Eigen::MatrixXi& ids, const std::vector<int>& targets, Mode mode,
                     const nn::NoiseRegConfig& reg, nn::NoiseTape& noise, bool with_backward) {
  const Tensor logits = forward(ids, mode, reg, noise);
  const nn::RowVector w = nn::RowVector::Constant(logits.rows(), 1.0 / static_cast<double>(ids.rows()));
  const nn::SoftmaxCe ce = nn::softmax_cross_entropy(logits, targets, &w);
  const double total = ce.loss + penalty();
  if (with_backward) backward(ce.grad);
  return total;
}

void ScanNet::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

std::vector<nn::Parameter*> ScanNet::parameters() {
  std::vector<nn::Parameter*> out{&syn_.table(), &sem_.table()};
  for (auto& a : att_)
    for (auto* p : a.parameters()) out.push_back(p);
  return out;
}

std::uint64_t ScanNet::activation_pattern() const {
  std::uint64_t h = 0;
  for (const auto& a : att_) h = h * 1099511628211ULL ^ a.activation_pattern();
  return h;
}

std::vector<nn::Parameter*> ScanNet::attention_parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& a : att_)
    for (auto* p : a.parameters()) out.push_back(p);
  return out;
}

Tensor ScanNet::attention(const Eigen::MatrixXi& ids) {
  nn::NoiseTape quiet;
  forward(ids, Mode::Eval, {}, quiet);
  valid_ = false;
  return u_;
}

std::vector<std::vector<int>> ScanNet::predict(const Eigen::MatrixXi& ids) {
  nn::NoiseTape quiet;
  const Tensor logits = forward(ids, Mode::Eval, {}, quiet);
  valid_ = false;
  std::vector<std::vector<int>> out(static_cast<std::size_t>(ids.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    logits.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r / cfg_.m)].push_back(static_cast<int>(best));
  }
  return out;
}

Eigen::MatrixXi encode_commands(const std::vector<ScanSample>& s, int n) {
  Eigen::MatrixXi ids = Eigen::MatrixXi::Constant(static_cast<Eigen::Index>(s.size()), n, MiniScanGrammar::word_id(kEos));
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (static_cast<int>(s[i].words.size()) >= n)
      throw nn::ShapeMismatch("command '" + s[i].command() + "' needs more than " + std::to_string(n) + " positions");
    for (std::size_t p = 0; p < s[i].words.size(); ++p)
      ids(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = MiniScanGrammar::word_id(s[i].words[p]);
  }
  return ids;
}

std::vector<int> encode_targets(const std::vector<ScanSample>& s, int m) {
  std::vector<int> out;
  out.reserve(s.size() * static_cast<std::size_t>(m));
  const int end = MiniScanGrammar::action_id(kEnd);
  for (const auto& x : s) {
    if (static_cast<int>(x.actions.size()) > m)
      throw std::invalid_argument("m = " + std::to_string(m) + " is shorter than the action sequence of '" +
                                  x.command() + "'");
    for (int j = 0; j < m; ++j)
      out.push_back(j < static_cast<int>(x.actions.size()) ? MiniScanGrammar::action_id(x.actions[j]) : end);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double sequence_accuracy(ScanNet& net, const std::vector<ScanSample>& s) {
  if (s.empty()) return 0.0;
  const auto pred = net.predict(encode_commands(s, net.config().n));
  const auto target = encode_targets(s, net.config().m);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    ok += std::equal(pred[i].begin(), pred[i].end(), target.begin() + static_cast<std::ptrdiff_t>(i * pred[i].size()));
  return static_cast<double>(ok) / static_cast<double>(s.size());
}

std::string expected_action(const std::string& w) {
  if (is_movement(w)) return upper(w);
  if (is_direction(w)) return turn_of(w);
  return kEnd;
}

}  // namespace

SyntaxCollapseReport probe_syntax_collapse(ScanNet& net, const ScanSplit& split, double relative_tolerance) {
  SyntaxCollapseReport r;
  const Tensor& syn = net.syntax_table();
  std::vector<Vector> rows;
  for (Eigen::Index i = 0; i < syn.rows(); ++i) rows.emplace_back(syn.row(i).data(), syn.row(i).data() + syn.cols());
  r.median_word_distance = median_pairwise_distance(rows);
  r.tolerance = relative_tolerance * r.median_word_distance;

  r.movement_words = kMovementWords;
  for (const auto& a : kMovementWords) {
    std::vector<double> row;
    for (const auto& b : kMovementWords) {
      const double d = l2_distance(rows[static_cast<std::size_t>(MiniScanGrammar::word_id(a))],
                                   rows[static_cast<std::size_t>(MiniScanGrammar::word_id(b))]);
      row.push_back(d);
      r.max_movement_distance = std::max(r.max_movement_distance, d);
    }
    r.movement_distances.push_back(std::move(row));
  }

  std::vector<ScanSample> originals, substituted;
  for (const auto& s : split.test)
    for (std::size_t p = 0; p < s.words.size(); ++p) {
      if (!is_movement(s.words[p])) continue;
      for (const auto& w : kMovementWords) {
        if (w == s.words[p]) continue;
        ScanSample t{s.words, {}};
        t.words[p] = w;
        originals.push_back({s.words, {}});
        substituted.push_back(std::move(t));
      }
    }
  r.substitutions = originals.size();
  if (!originals.empty()) {
    const Tensor ua = net.attention(encode_commands(originals, net.config().n));
    const Tensor ub = net.attention(encode_commands(substituted, net.config().n));
    for (Eigen::Index i = 0; i < ua.rows(); ++i) {
      const double dev = (ua.row(i) - ub.row(i)).cwiseAbs().maxCoeff();
      if (dev > r.max_attention_deviation || r.worst_substitution.empty()) {
        r.max_attention_deviation = std::max(r.max_attention_deviation, dev);
        r.worst_substitution = originals[static_cast<std::size_t>(i)].command() + " -> " +
                               substituted[static_cast<std::size_t>(i)].command();
      }
    }
  }

  const Tensor& sem = net.semantic_table();
  r.semantics_decode = true;
  std::vector<std::string> action_words = kMovementWords;
  action_words.insert(action_words.end(), kDirectionWords.begin(), kDirectionWords.end());
  action_words.push_back(kEos);
  for (const auto& w : action_words) {
    Eigen::Index best = 0;
    sem.row(MiniScanGrammar::word_id(w)).maxCoeff(&best);
    const std::string& decoded = MiniScanGrammar::actions()[static_cast<std::size_t>(best)];
    r.decoding.emplace_back(w, decoded);
    r.semantics_decode = r.semantics_decode && decoded == expected_action(w);
  }
  r.syntax_collapsed = r.max_movement_distance <= r.tolerance;
  r.attention_invariant = r.max_attention_deviation <= r.tolerance;
  return r;
}

bool ScanSeedResult::probes_pass() const {
  return !diverged && train_acc == 1.0 && probe && probe->syntax_collapsed && probe->attention_invariant &&
         probe->semantics_decode;
}

bool ScanSeedResult::full_pass(double threshold) const {
  return probes_pass() && test_acc && *test_acc >= threshold;
}

TrainedScan train_scan(const ScanSplit& split, const ScanConfig& cfg, std::uint64_t seed) {
  for (const auto* part : {&split.train, &split.test})
    for (const auto& s : *part)
      if (static_cast<int>(s.actions.size()) > cfg.m)
        throw std::invalid_argument("m = " + std::to_string(cfg.m) + " is shorter than the action sequence of '" +
                                    s.command() + "'");
  ScanNetConfig net_cfg = cfg.net;
  net_cfg.n = split.n;
  net_cfg.m = cfg.m;
  TrainedScan out{ScanNet(net_cfg, seed), {}};
  out.result.seed = seed;
  out.result.iterations = cfg.iterations;
  ScanNet& net = out.net;

  CounterRng root(seed);
  nn::NoiseTape noise(root.fork(3));
  nn::Adam opt({cfg.lr});
  const nn::NoiseRegConfig reg{cfg.alpha, cfg.beta};
  CounterRng batch_rng = root.fork(2);
  const Eigen::MatrixXi all_ids = encode_commands(split.train, split.n);
  const std::vector<int> all_targets = encode_targets(split.train, cfg.m);
  Eigen::MatrixXi ids = all_ids;
  std::vector<int> targets = all_targets;
  for (int it = 1; it <= cfg.iterations; ++it) {
    if (cfg.batch > 0) {
      ids.resize(cfg.batch, split.n);
      targets.clear();
      for (int i = 0; i < cfg.batch; ++i) {
        const auto r = static_cast<Eigen::Index>(batch_rng.below(split.train.size()));
        ids.row(i) = all_ids.row(r);
        targets.insert(targets.end(), all_targets.begin() + r * cfg.m, all_targets.begin() + (r + 1) * cfg.m);
      }
    }
    net.zero_grad();
    const double loss = net.loss(ids, targets, Mode::Train, reg, noise, true);
    out.result.final_loss = loss;
    if (!std::isfinite(loss)) {
      out.result.diverged = true;
      out.result.error = "non-finite loss at iteration " + std::to_string(it);
      return out;
    }
    if (cfg.lr_decay) opt.set_lr(cfg.lr * (1.0 - static_cast<double>(it - 1) / cfg.iterations));
    opt.step(net.parameters());
    if (cfg.attention_weight_decay > 0.0)
      for (auto* p : net.attention_parameters()) p->value *= 1.0 - opt.config().lr * cfg.attention_weight_decay;
  }
  out.result.train_acc = sequence_accuracy(net, split.train);
  if (!split.test.empty()) out.result.test_acc = sequence_accuracy(net, split.test);
  out.result.probe = probe_syntax_collapse(net, split, cfg.relative_tolerance);
  return out;
}

std::string to_string(ScanVerdict v) {
  switch (v) {
    case ScanVerdict::Pass:
      return "PASS";
    case ScanVerdict::Partial:
      return "PARTIAL";
    case ScanVerdict::Fail:
      return "FAIL";
  }
  return "?";
}

ScanRunResult run_scan(const ScanConfig& cfg, int workers) {
  ScanRunResult r;
  r.seeds.resize(cfg.seeds.size());
  auto run_one = [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    try {
      const ScanSplit split = generate_minisplit(MiniScanGrammar{cfg.m}, cfg.sizes, seed);
      r.seeds[i] = train_scan(split, cfg, seed).result;
    } catch (const nn::DivergedLoss& e) {
      r.seeds[i].seed = seed;
      r.seeds[i].diverged = true;
      r.seeds[i].error = e.what();
    }
  };
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
  for (const auto& s : r.seeds) {
    r.full_passes += s.full_pass(cfg.test_accuracy_threshold);
    r.probe_passes += s.probes_pass();
  }
  // At least 3 of every 5 seeds.
  auto enough = [&](std::size_t k) { return !r.seeds.empty() && k * 5 >= r.seeds.size() * 3; };
  r.verdict = enough(r.full_passes) ? ScanVerdict::Pass : enough(r.probe_passes) ? ScanVerdict::Partial : ScanVerdict::Fail;
  return r;
}

json to_json(const SyntaxCollapseReport& r) {
  json dec = json::object();
  for (const auto& [w, a] : r.decoding) dec[w] = a;
  return {{"movement_words", r.movement_words},
          {"movement_distances", r.movement_distances},
          {"max_movement_distance", r.max_movement_distance},
          {"median_word_distance", r.median_word_distance},
          {"tolerance", r.tolerance},
          {"max_attention_deviation", r.max_attention_deviation},
          {"worst_substitution", r.worst_substitution},
          {"substitutions", r.substitutions},
          {"decoding", dec},
          {"syntax_collapsed", r.syntax_collapsed},
          {"attention_invariant", r.attention_invariant},
          {"semantics_decode", r.semantics_decode}};
}

json to_json(const ScanSeedResult& r) {
  json j{{"seed", r.seed},
         {"train_accuracy", r.train_acc},
         {"test_accuracy", r.test_acc ? json(*r.test_acc) : json("n/a")},
         {"final_loss", r.final_loss},
         {"iterations", r.iterations},
         {"diverged", r.diverged}};
  if (!r.error.empty()) j["error"] = r.error;
  if (r.probe) j["probe"] = to_json(*r.probe);
  return j;
}

json to_json(const ScanRunResult& r) {
  json seeds = json::array();
  for (const auto& s : r.seeds) seeds.push_back(to_json(s));
  return {{"seeds", seeds}, {"full_passes", r.full_passes}, {"probe_passes", r.probe_passes},
          {"verdict", to_string(r.verdict)}};
}

}  // namespace compocert
