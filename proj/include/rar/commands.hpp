#pragma once

#include <memory>
#include <ostream>

#include "rar/config.hpp"
#include "rar/corpus_store.hpp"
#include "rar/eval_metrics.hpp"
#include "rar/generator_bridge.hpp"
#include "rar/preference_opt.hpp"

namespace rar::cmd {

std::unique_ptr<corpus::EmbeddingProvider> make_provider(const RunConfig& cfg);
std::unique_ptr<gen::Generator> make_generator(const RunConfig& cfg, const corpus::EmbeddingTable& table,
                                               const corpus::EmbeddingProvider& provider);
pref::TrainConfig train_config(const RunConfig& cfg);
eval::EvalConfig eval_config(const RunConfig& cfg);

corpus::DropReport ingest(const RunConfig& cfg, std::ostream& out);
void embed(const RunConfig& cfg, std::ostream& out);

struct PreprocessReport {
  std::size_t conversations = 0;
  std::size_t unresolved_mentions = 0;
  data::SplitStats split;
  std::size_t examples = 0;
  std::size_t dropped_no_history = 0;
  std::size_t subsampled_to = 0;
  std::size_t train = 0, val = 0, test = 0;
  std::size_t sessions = 0;
  std::size_t session_items_unknown = 0;

  std::string to_json() const;
};
PreprocessReport preprocess(const RunConfig& cfg, std::ostream& out);

struct PretrainSummary {
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::size_t steps = 0;
};
/// With resume, continues from the saved checkpoint (optimizer state and
/// step) and produces the same parameters as an uninterrupted run.
/// stop_after > 0 ends the run early without changing the schedule.
PretrainSummary pretrain(const RunConfig& cfg, bool resume, std::size_t stop_after, std::ostream& out);

/// Post-trains the pretrained checkpoint with train.algorithm and writes the
/// best-validation checkpoint to paths.checkpoint (paths.sft_checkpoint
/// for the sft baseline) plus a ".meta.json" sidecar.
pref::TrainResult train(const RunConfig& cfg, std::ostream& out);

eval::EvalReport evaluate(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                          const std::filesystem::path& report_path, std::ostream& out);

struct SimulateSummary {
  eval::EvalReport sft;
  eval::EvalReport rl;
  double reward_first100 = 0.0;
  double reward_last100 = 0.0;
  double wall_seconds = 0.0;

  std::string to_json() const;
};
/// Synthetic world end to end: world files, ingest, embed, preprocess,
/// pretrain, then two post-training runs from the same start (NLL only as
/// the SFT baseline, and train.algorithm), each evaluated on the test split.
SimulateSummary simulate(const RunConfig& cfg, std::ostream& out);

}  // namespace rar::cmd
