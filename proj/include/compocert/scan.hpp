#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "compocert/nn.hpp"

namespace compocert {

class GrammarExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ScanParseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline const std::vector<std::string> kMovementWords{"jump", "run", "walk", "look"};
inline const std::vector<std::string> kDirectionWords{"left", "right"};
inline const std::vector<std::string> kFunctionWords{"twice", "and", "after"};
inline const std::string kEos = "eos";
inline const std::string kEnd = "END";

/// Mini command language:
///   S := V | V and V | V after V
///   V := D | D twice
///   D := U | U dir
/// Commands whose action sequence is longer than `m` are excluded.
struct MiniScanGrammar {
  int m = 9;

  /// Word vocabulary: movement, direction, function words, then eos.
  [[nodiscard]] static const std::vector<std::string>& words();
  /// Output vocabulary; END pads every sequence to length m.
  [[nodiscard]] static const std::vector<std::string>& actions();
  [[nodiscard]] static int word_id(const std::string& w);
  [[nodiscard]] static int action_id(const std::string& a);

  /// Every command of the grammar that fits, in a fixed order.
  [[nodiscard]] std::vector<std::vector<std::string>> enumerate() const;
};

std::vector<std::string> split_words(const std::string& command);
std::string join_words(const std::vector<std::string>& words);

/// Recursive-descent interpreter.
std::vector<std::string> interpret(const std::vector<std::string>& words);
/// Operator-table interpreter (postfix modifiers, infix conjunctions); used as a cross-check.
std::vector<std::string> interpret_table(const std::vector<std::string>& words);

/// Movement words replaced by "X": the function-word frame of a command.
std::string scaffold(const std::vector<std::string>& words);

struct ScanSample {
  std::vector<std::string> words;
  std::vector<std::string> actions;  // unpadded
  [[nodiscard]] std::string command() const { return join_words(words); }
};

struct ScanSplit {
  MiniScanGrammar grammar;
  std::vector<ScanSample> train;
  std::vector<ScanSample> test;
  /// Input positions: the longest command plus its eos.
  int n = 0;
};

/// Zero means every eligible command.
struct SplitSizes {
  std::size_t train = 0;
  std::size_t test = 0;
};

/// Test commands are sampled from the jump compositions. The training set
/// always holds the isolated primitives, one non-jump command per test
/// scaffold, and random non-jump fill up to the requested size. With the
/// default sizes both sets are complete and the seed only fixes their order.
ScanSplit generate_minisplit(const MiniScanGrammar& g, const SplitSizes& sizes, std::uint64_t seed);

/// "command TAB actions" lines, training set first.
std::string dump_split(const ScanSplit& s);

struct ScanNetConfig {
  int n = 8;
  int m = 9;
  int syntax_dim = 8;
  std::vector<int> attention_hidden{64};
  double syntax_init = 1.0;
  double semantic_init = 0.1;
  /// One attention network per output position instead of a shared trunk.
  bool separate_heads = false;
  /// Start from uniform attention maps (zero output layer).
  bool uniform_start = false;
};

/// Shared syntax and semantic word embeddings; the concatenated syntax
/// embeddings produce m attention maps over input positions, and head j emits
/// the logits V U_j from the attended semantic embeddings.
class ScanNet {
 public:
  ScanNet(const ScanNetConfig& cfg, std::uint64_t seed);

  /// ids is batch x n; returns (batch * m) x actions logits, row b * m + j for head j.
  nn::Tensor forward(const Eigen::MatrixXi& ids, nn::Mode mode, const nn::NoiseRegConfig& reg, nn::NoiseTape& noise);
  void backward(const nn::Tensor& d_logits);
  /// Per-head cross-entropy summed over heads, averaged over samples, plus penalties.
  double loss(const Eigen::MatrixXi& ids, const std::vector<int>& targets, nn::Mode mode, const nn::NoiseRegConfig& reg,
              nn::NoiseTape& noise, bool with_backward = false);

  void zero_grad();
  std::vector<nn::Parameter*> parameters();
  std::vector<nn::Parameter*> attention_parameters();
  [[nodiscard]] double penalty() const { return syn_.penalty() + sem_.penalty(); }
  [[nodiscard]] std::uint64_t activation_pattern() const;

  /// Noise-free attention maps, batch x (m * n); head j occupies columns [j n, (j + 1) n).
  [[nodiscard]] nn::Tensor attention(const Eigen::MatrixXi& ids);
  [[nodiscard]] std::vector<std::vector<int>> predict(const Eigen::MatrixXi& ids);
  [[nodiscard]] const nn::Tensor& syntax_table() { return syn_.table().value; }
  [[nodiscard]] const nn::Tensor& semantic_table() { return sem_.table().value; }
  [[nodiscard]] const ScanNetConfig& config() const { return cfg_; }

 private:
  ScanNetConfig cfg_;
  nn::Embedding syn_, sem_;
  std::vector<nn::Mlp> att_;
  Eigen::Index batch_ = 0;
  nn::Tensor u_, v_;
  bool valid_ = false;
};

/// ids (batch x n, eos padded) and targets (batch * m, END padded).
Eigen::MatrixXi encode_commands(const std::vector<ScanSample>& s, int n);
std::vector<int> encode_targets(const std::vector<ScanSample>& s, int m);

struct ScanConfig {
  SplitSizes sizes;
  int m = 9;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int iterations = 6000;
  /// Samples per step, drawn with replacement; 0 trains on the full split.
  int batch = 0;
  double lr = 0.003;
  /// Linear decay of the learning rate to zero over the run.
  bool lr_decay = true;
  /// Decoupled weight decay on the attention networks; keeps their logits from saturating.
  double attention_weight_decay = 0.1;
  double alpha = 0.3;
  double beta = 0.05;
  ScanNetConfig net;
  /// Relative probe tolerance: fraction of the median inter-word syntax distance.
  double relative_tolerance = 0.1;
  double test_accuracy_threshold = 0.9;
};

struct SyntaxCollapseReport {
  std::vector<std::string> movement_words;
  std::vector<std::vector<double>> movement_distances;
  double max_movement_distance = 0.0;
  double median_word_distance = 0.0;
  double tolerance = 0.0;
  double max_attention_deviation = 0.0;
  std::string worst_substitution;  // "a -> b"
  std::size_t substitutions = 0;
  std::vector<std::pair<std::string, std::string>> decoding;  // word, decoded action
  bool syntax_collapsed = false;
  bool attention_invariant = false;
  bool semantics_decode = false;
};

/// Probes on the test commands of the split (every movement-word slot is substituted).
SyntaxCollapseReport probe_syntax_collapse(ScanNet& net, const ScanSplit& split, double relative_tolerance = 0.1);

struct ScanSeedResult {
  std::uint64_t seed = 0;
  double train_acc = 0.0;
  std::optional<double> test_acc;
  double final_loss = 0.0;
  int iterations = 0;
  bool diverged = false;
  std::string error;
  std::optional<SyntaxCollapseReport> probe;

  [[nodiscard]] bool probes_pass() const;  // (a)-(c)
  [[nodiscard]] bool full_pass(double threshold) const;
};

struct TrainedScan {
  ScanNet net;
  ScanSeedResult result;
};

/// Net sized from the split; throws std::invalid_argument when m is too small.
TrainedScan train_scan(const ScanSplit& split, const ScanConfig& cfg, std::uint64_t seed);

enum class ScanVerdict { Pass, Partial, Fail };
std::string to_string(ScanVerdict v);

struct ScanRunResult {
  std::vector<ScanSeedResult> seeds;
  std::size_t full_passes = 0;
  std::size_t probe_passes = 0;
  ScanVerdict verdict = ScanVerdict::Fail;
};

/// Each seed draws its own split (same seed) and trains on it.
ScanRunResult run_scan(const ScanConfig& cfg, int workers = 1);

nlohmann::json to_json(const SyntaxCollapseReport& r);
nlohmann::json to_json(const ScanSeedResult& r);
nlohmann::json to_json(const ScanRunResult& r);

}  // namespace compocert
