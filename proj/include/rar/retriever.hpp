#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rar/candidate_set.hpp"
#include "rar/common.hpp"
#include "rar/corpus_store.hpp"

namespace rar::retriever {

inline constexpr double kLambdaMax = 0.99;

struct LayerParams {
  Vec raw_lambda;  // lambda = kLambdaMax * tanh(raw_lambda)
  Matrix b;        // H x H
  Matrix c;        // H x H

  bool operator==(const LayerParams&) const = default;
};

/// Stacked diagonal linear recurrence over frozen item embeddings.
///
///   x^0_t = W_in e_t
///   h^l_t = lambda^l * h^l_{t-1} + B^l x^l_t,   h^l_0 = 0
///   o^l_t = C^l h^l_t + x^l_t
///   x^{l+1}_t = dropout(o^l_t)
///   query_t = W_out x^L_t
///
/// The same struct doubles as the gradient container.
struct RetrieverParams {
  std::size_t dim = 0;     // D, corpus embedding width
  std::size_t hidden = 0;  // H
  double dropout = 0.0;
  Matrix w_in;   // H x D
  std::vector<LayerParams> layers;
  Matrix w_out;  // D x H
  std::uint64_t version = 0;  // bumped by every optimizer step

  std::size_t num_layers() const { return layers.size(); }
  Vec lambda(std::size_t layer) const;

  /// Zeroed tensors with the same shapes.
  RetrieverParams zeros_like() const;
  std::size_t num_scalars() const;

  /// Every tensor as a flat span, in a fixed order (w_in, per-layer
  /// raw_lambda/b/c, w_out). Names match the checkpoint keys.
  std::vector<std::pair<std::string, std::span<double>>> tensors();
  std::vector<std::pair<std::string, std::span<const double>>> tensors() const;

  bool same_values(const RetrieverParams& o) const;
};

RetrieverParams init_params(std::size_t dim, std::size_t hidden, std::size_t num_layers,
                            double dropout, std::uint64_t seed);

void check_finite(const RetrieverParams& p, const char* what);

struct LayerTrace {
  std::vector<Vec> input;   // x_t
  std::vector<Vec> state;   // h_t
  std::vector<Vec> output;  // x_t of the next layer (after dropout)
  std::vector<Vec> mask;    // scaled keep-mask, empty when dropout is off
};

struct HiddenTrace {
  std::vector<Vec> embeddings;  // e_t
  std::vector<LayerTrace> layers;
  std::size_t scan_combines = 0;

  std::size_t length() const { return embeddings.size(); }
  const std::vector<Vec>& top() const { return layers.back().output; }
};

struct Forward {
  Vec query;  // query at the last position
  HiddenTrace trace;
};

/// Plain loop over time. Reference path.
Forward forward_sequential(const RetrieverParams& p, const std::vector<Vec>& embeddings,
                           bool train_mode, std::uint64_t seed);

/// Associative-scan path with OpenMP kernels; identical results up to
/// floating-point reassociation, same dropout masks for the same seed.
Forward forward_scan(const RetrieverParams& p, const std::vector<Vec>& embeddings,
                     bool train_mode, std::uint64_t seed);

/// W_out applied to the top output at position t (0-based).
Vec query_at(const RetrieverParams& p, const HiddenTrace& trace, std::size_t t);

/// Backpropagation through time. dquery[t] is dL/dquery_t; empty entries
/// mean zero. Returns parameter gradients (raw_lambda already chained
/// through the tanh squashing).
RetrieverParams backward(const RetrieverParams& p, const HiddenTrace& trace,
                         const std::vector<Vec>& dquery);

/// Embeddings for a list of ids, in order.
std::vector<Vec> gather(const corpus::EmbeddingTable& table, const std::vector<std::string>& ids);

// Scoring ----------------------------------------------------------------------

/// query . vec(j) over the pool if given, else the whole table in row order.
ScoredPool score_corpus(std::span<const double> query, const corpus::EmbeddingTable& table,
                        const std::vector<std::string>* pool = nullptr);

/// The k best ids by descending score, ascending id on ties, skipping exclusions.
CandidateSet retrieve_topk(const ScoredPool& scores, std::size_t k,
                           const std::set<std::string>& exclusions = {});

/// Pool of the M best-scoring ids (exclusions skipped), tagged "top<M>".
ScoredPool shortlist(const ScoredPool& scores, std::size_t m,
                     const std::set<std::string>& exclusions = {});

/// dL/dquery = sum_j dL/ds_j vec(j) over the pool.
Vec chain_scores(const ScoredPool& pool, std::span<const double> dscores,
                 const corpus::EmbeddingTable& table);

// Optimizer --------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 0;  // 0 disables cosine decay
  double clip_norm = 0.0;       // 0 disables global-norm clipping
};

/// Adam with linear warm-up then cosine decay to zero at total_steps.
class Adam {
 public:
  Adam() = default;
  Adam(const RetrieverParams& like, AdamConfig cfg);

  double learning_rate() const;
  void step(RetrieverParams& params, const RetrieverParams& grads);

  std::size_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // Exposed for checkpointing.
  Vec& first_moment() { return m_; }
  Vec& second_moment() { return v_; }
  const Vec& first_moment() const { return m_; }
  const Vec& second_moment() const { return v_; }
  void set_steps_taken(std::size_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  Vec m_, v_;
  std::size_t t_ = 0;
};

// Supervised pretraining -------------------------------------------------------

/// One input sequence with targets attached to positions. A session
/// contributes next-item targets at every step; a conversation example puts
/// all of its targets on the last position.
struct TrainSequence {
  std::vector<std::string> inputs;
  std::vector<std::pair<std::size_t, std::string>> targets;  // (position, id)
};

TrainSequence sequence_from_session(const std::vector<std::string>& items);
TrainSequence sequence_from_example(const std::vector<std::string>& history,
                                    const std::vector<std::string>& targets);

struct PretrainConfig {
  std::size_t negatives_per_step = 100;
  bool in_batch_negatives = true;
  bool train_mode = true;  // dropout on
};

struct LossAndGrad {
  double loss = 0.0;
  RetrieverParams grad;
};

/// Sampled softmax cross-entropy of each target against itself, sampled
/// negatives and the other targets in the batch. Deterministic in seed.
LossAndGrad pretrain_loss(const RetrieverParams& p, const std::vector<TrainSequence>& batch,
                          const corpus::EmbeddingTable& table, const PretrainConfig& cfg,
                          std::uint64_t seed);

/// pretrain_loss followed by one optimizer step. Throws NumericError on a
/// non-finite loss or gradient, leaving params untouched.
double pretrain_step(RetrieverParams& p, Adam& opt, const std::vector<TrainSequence>& batch,
                     const corpus::EmbeddingTable& table, const PretrainConfig& cfg,
                     std::uint64_t seed);

// Checkpoints ------------------------------------------------------------------

struct Checkpoint {
  RetrieverParams params;
  std::optional<Adam> optimizer;
  std::size_t step = 0;
};

std::string checkpoint_to_json(const Checkpoint& ck);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rar::retriever
