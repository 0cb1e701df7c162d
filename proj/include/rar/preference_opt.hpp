#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "rar/candidate_set.hpp"
#include "rar/datasets.hpp"
#include "rar/eval_metrics.hpp"
#include "rar/generator_bridge.hpp"
#include "rar/retriever.hpp"

namespace rar::pref {

enum class Algorithm { kDpo, kSimpo, kGrpo, kSft };

const char* algorithm_name(Algorithm a);
/// Accepts dpo, simpo, grpo, sft. ConfigError otherwise.
Algorithm parse_algorithm(const std::string& s);

/// NDCG of the best-ranked target within k (shared with evaluation).
double ndcg_reward(const std::vector<std::string>& ranked, const std::vector<std::string>& targets, std::size_t k);

struct ScoredSet {
  CandidateSet set;
  double reward = 0.0;
  bool has_label = false;  // the set contains at least one target
};

struct PreferencePair {
  CandidateSet winner;
  CandidateSet loser;
  std::pair<double, double> rewards;
  std::size_t resamples_used = 0;
};

struct Annotation {
  std::optional<PreferencePair> pair;  // nullopt = abstain
  std::size_t resamples_used = 0;
};

using Resampler = std::function<std::pair<ScoredSet, ScoredSet>()>;

/// One label-holder wins outright; two label-holders are split by reward;
/// ties and label-free pairs are redrawn through `resample` at most
/// max_resamples times before abstaining.
Annotation annotate_pair(ScoredSet a, ScoredSet b, std::size_t max_resamples, const Resampler& resample);

struct PairLoss {
  double loss = 0.0;
  double d_w = 0.0;  // d loss / d logp_w
  double d_l = 0.0;  // d loss / d logp_l
};

PairLoss dpo_loss(double logp_w, double logp_l, std::optional<double> ref_w, std::optional<double> ref_l,
                  double beta);
PairLoss simpo_loss(double logp_w, double logp_l, double beta, double gamma);

/// (r - mean) / max(population std, eps); all-equal rewards give exact zeros.
Vec grpo_advantages(const Vec& rewards, double eps = 1e-8);

struct GroupLoss {
  double loss = 0.0;
  Vec d_logp;
};

GroupLoss grpo_loss(const Vec& logps, const Vec& advantages, double kl_coeff = 0.0, const Vec* ref_logps = nullptr);

struct ScoreLoss {
  double loss = 0.0;
  Vec d_scores;  // pool order
};

/// Mean over targets of -log softmax(score of target) over the pool.
ScoreLoss nll_from_scores(const ScoredPool& pool, const std::vector<std::string>& targets);

/// nll_from_scores over the given pool ids with the retriever in eval mode,
/// gradients chained back to parameters.
retriever::LossAndGrad nll_anchor(const retriever::RetrieverParams& params, const data::TrainingExample& example,
                                  const corpus::EmbeddingTable& table, const std::vector<std::string>& pool);

// Training loop ----------------------------------------------------------------

struct TrainConfig {
  Algorithm algorithm = Algorithm::kDpo;
  double beta = 0.05;
  double gamma = 0.0;
  std::size_t group_size = 2;
  std::size_t k = 25;
  std::size_t pool_size = 200;
  double temperature = 1.0;
  std::size_t max_resamples = 8;
  bool use_reference = false;
  double kl_coeff = 0.0;
  double nll_weight = 1.0;
  std::size_t steps = 500;
  std::size_t eval_every = 200;
  bool train_mode = true;  // dropout during the policy forward
  retriever::AdamConfig adam;
  eval::EvalConfig eval;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  std::string example_id;
  Algorithm algorithm = Algorithm::kDpo;
  Vec rewards;
  double loss_nll = 0.0;
  double loss_rl = 0.0;
  bool abstained = false;
  bool skipped = false;
  std::size_t resamples = 0;
  std::uint64_t policy_version = 0;  // params version the sets were drawn from
  std::uint64_t update_version = 0;  // params version at the optimizer step
  double wall_ms = 0.0;

  std::string to_json() const;
};

struct ValidationPoint {
  std::size_t step = 0;
  double ndcg10 = 0.0;
};

struct TrainResult {
  retriever::RetrieverParams final_params;
  retriever::RetrieverParams best_params;
  double best_val_ndcg10 = -1.0;
  std::size_t best_step = 0;
  std::vector<StepRecord> log;
  std::vector<ValidationPoint> validation;
  std::size_t abstained = 0;
  std::size_t skipped = 0;

  /// Mean of the initially sampled rewards over log[begin, end).
  double mean_reward(std::size_t begin, std::size_t end) const;
};

/// Online on-policy post-training. Each step takes one example (cycling a
/// seeded shuffle of the dataset), samples sets from the current policy,
/// scores them with the generator and applies one optimizer step on
/// nll_weight * L_nll + L_rl. With a validation split, the parameters with
/// the best validation NDCG@10 (checked every eval_every steps and at the
/// end; the step-0 score is only logged) are returned as best_params.
TrainResult train_rl(const std::vector<data::TrainingExample>& dataset, retriever::RetrieverParams params,
                     const corpus::EmbeddingTable& table, const corpus::CorpusIndex& index, gen::Generator& generator,
                     const TrainConfig& cfg, const std::vector<data::TrainingExample>* validation = nullptr,
                     std::ostream* log = nullptr);

}  // namespace rar::pref
