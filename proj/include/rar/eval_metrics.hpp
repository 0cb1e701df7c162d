#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rar/corpus_store.hpp"
#include "rar/datasets.hpp"
#include "rar/generator_bridge.hpp"
#include "rar/retriever.hpp"

namespace rar::eval {

/// 1-based rank of the best-placed target within the first k items.
std::optional<std::size_t> best_rank(const std::vector<std::string>& ranked,
                                     const std::vector<std::string>& targets, std::size_t k);

/// 1 / log2(1 + rank*) for the best target rank within k, else 0.
double ndcg_at_k(const std::vector<std::string>& ranked, const std::vector<std::string>& targets, std::size_t k);

/// Hit rate: 1 if any target sits in the top k.
double recall_at_k(const std::vector<std::string>& ranked, const std::vector<std::string>& targets, std::size_t k);

/// Unmatched lines over emitted ranking lines, across all outputs.
double hallucination_rate(const std::vector<gen::RankedOutput>& outputs);

struct ExampleResult {
  std::string example_id;
  std::vector<std::string> ranked;
  std::vector<std::string> targets;
};

struct BucketStat {
  double mean_ndcg10 = 0.0;
  std::size_t size = 0;
};

/// Buckets examples by the training-split frequency of their best target
/// (best-ranked target in the output, else the first target): "unseen" for
/// count 0, then "[1,t1)", "[t1,t2)", ..., "[tn,inf)" for ascending
/// thresholds, or a single "seen" bucket without thresholds.
std::map<std::string, BucketStat> popularity_buckets(const std::vector<ExampleResult>& results,
                                                     const std::unordered_map<std::string, std::size_t>& train_counts,
                                                     const std::vector<std::size_t>& thresholds = {});

std::unordered_map<std::string, std::size_t> item_counts(const std::vector<data::TrainingExample>& train);

struct EvalConfig {
  std::size_t retrieval_k = 25;
  std::vector<std::size_t> ks{5, 10};
  std::vector<std::size_t> bucket_thresholds;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct EvalReport {
  std::map<std::string, double> metrics;            // "ndcg@5", "recall@10", ...
  std::map<std::string, double> retrieval_metrics;  // same keys, retrieval order only
  std::size_t n_examples = 0;
  std::size_t failed = 0;
  std::size_t skipped_no_history = 0;
  double hallucination_rate = 0.0;
  std::map<std::string, BucketStat> popularity_buckets;
  std::string config_hash;
  std::uint64_t seed = 0;

  std::string to_json() const;
  /// N@5 R@5 N@10 R@10 style table.
  std::string to_table() const;
};

EvalReport report_from_json(const std::string& text);

/// Deterministic top-k retrieval (history excluded), generator ranking,
/// parse, score. Generator failures are excluded and counted.
EvalReport evaluate(const retriever::RetrieverParams& params, const corpus::EmbeddingTable& table,
                    const corpus::CorpusIndex& index, gen::Generator& generator,
                    const std::vector<data::TrainingExample>& test, const EvalConfig& cfg,
                    const std::unordered_map<std::string, std::size_t>* train_counts = nullptr,
                    std::vector<ExampleResult>* per_example = nullptr);

/// Retrieval top-k for one history, history items excluded.
CandidateSet retrieve_for(const retriever::RetrieverParams& params, const corpus::EmbeddingTable& table,
                          const std::vector<std::string>& history, std::size_t k);

}  // namespace rar::eval
