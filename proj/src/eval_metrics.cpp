#include "rar/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

namespace rar::eval {

using nlohmann::json;

namespace {

void require_targets(const std::vector<std::string>& targets) {
  if (targets.empty()) throw Error("ranking metric needs at least one target");
}

}  // namespace

std::optional<std::size_t> best_rank(const std::vector<std::string>& ranked,
                                     const std::vector<std::string>& targets, std::size_t k) {
  const std::size_t limit = std::min(k, ranked.size());
  for (std::size_t i = 0; i < limit; ++i) {
    if (std::find(targets.begin(), targets.end(), ranked[i]) != targets.end()) return i + 1;
  }
  return std::nullopt;
}

double ndcg_at_k(const std::vector<std::string>& ranked, const std::vector<std::string>& targets, std::size_t k) {
  require_targets(targets);
  const auto r = best_rank(ranked, targets, k);
  return r ? 1.0 / std::log2(1.0 + double(*r)) : 0.0;
}

double recall_at_k(const std::vector<std::string>& ranked, const std::vector<std::string>& targets, std::size_t k) {
  require_targets(targets);
  return best_rank(ranked, targets, k) ? 1.0 : 0.0;
}

double hallucination_rate(const std::vector<gen::RankedOutput>& outputs) {
  std::size_t emitted = 0, unmatched = 0;
  for (const auto& o : outputs) {
    emitted += o.emitted_lines;
    unmatched += o.unmatched.size();
  }
  if (emitted == 0) throw Error("hallucination_rate: no ranking lines were emitted");
  return double(unmatched) / double(emitted);
}

std::unordered_map<std::string, std::size_t> item_counts(const std::vector<data::TrainingExample>& train) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& ex : train) {
    for (const auto& id : ex.history) ++counts[id];
    for (const auto& id : ex.targets) ++counts[id];
  }
  return counts;
}

std::map<std::string, BucketStat> popularity_buckets(const std::vector<ExampleResult>& results,
                                                     const std::unordered_map<std::string, std::size_t>& train_counts,
                                                     const std::vector<std::size_t>& thresholds) {
  std::vector<std::size_t> th = thresholds;
  std::sort(th.begin(), th.end());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  th.erase(std::remove(th.begin(), th.end(), std::size_t{0}), th.end());

  auto bucket_of = [&](std::size_t count) -> std::string {
    if (count == 0) return "unseen";
    if (th.empty()) return "seen";
    std::size_t lo = 1;
    for (std::size_t t : th) {
      if (count < t) return "[" + std::to_string(lo) + "," + std::to_string(t) + ")";
      lo = t;
    }
    return "[" + std::to_string(lo) + ",inf)";
  };

  std::map<std::string, BucketStat> out;
  for (const auto& r : results) {
    require_targets(r.targets);
    std::string best = r.targets.front();
    for (const auto& id : r.ranked) {
      if (std::find(r.targets.begin(), r.targets.end(), id) != r.targets.end()) {
        best = id;
        break;
      }
    }
    auto it = train_counts.find(best);
    BucketStat& b = out[bucket_of(it == train_counts.end() ? 0 : it->second)];
    b.mean_ndcg10 += ndcg_at_k(r.ranked, r.targets, 10);
    ++b.size;
  }
  for (auto& [_, b] : out) b.mean_ndcg10 /= double(b.size);
  return out;
}

// ---------------------------------------------------------------------------

std::string EvalReport::to_json() const {
  json j;
  j["metrics"] = metrics;
  j["retrieval_metrics"] = retrieval_metrics;
  j["n_examples"] = n_examples;
  j["failed"] = failed;
  j["skipped_no_history"] = skipped_no_history;
  j["hallucination_rate"] = hallucination_rate;
  json buckets = json::object();
  for (const auto& [name, b] : popularity_buckets) buckets[name] = {{"ndcg@10", b.mean_ndcg10}, {"size", b.size}};
  j["popularity_buckets"] = std::move(buckets);
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  json j = json::parse(text);
  EvalReport r;
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  r.retrieval_metrics = j.at("retrieval_metrics").get<std::map<std::string, double>>();
  r.n_examples = j.at("n_examples").get<std::size_t>();
  r.failed = j.at("failed").get<std::size_t>();
  r.skipped_no_history = j.at("skipped_no_history").get<std::size_t>();
  r.hallucination_rate = j.at("hallucination_rate").get<double>();
  for (const auto& [name, b] : j.at("popularity_buckets").items()) {
    r.popularity_buckets[name] = {b.at("ndcg@10").get<double>(), b.at("size").get<std::size_t>()};
  }
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

std::string EvalReport::to_table() const {
  std::string header, row;
  char buf[64];
  std::set<std::size_t> ks;
  for (const auto& [key, _] : metrics) ks.insert(std::stoul(key.substr(key.find('@') + 1)));
  for (std::size_t k : ks) {
    for (const auto& [label, name] : {std::pair{"N", "ndcg"}, std::pair{"R", "recall"}}) {
      auto it = metrics.find(std::string(name) + "@" + std::to_string(k));
      if (it == metrics.end()) continue;
      std::snprintf(buf, sizeof buf, "%8s", (std::string(label) + "@" + std::to_string(k)).c_str());
      header += buf;
      std::snprintf(buf, sizeof buf, "%8.4f", it->second);
      row += buf;
    }
  }
  std::snprintf(buf, sizeof buf, "  (n=%zu, failed=%zu, halluc=%.4f)", n_examples, failed, hallucination_rate);
  return header + "\n" + row + buf + "\n";
}

CandidateSet retrieve_for(const retriever::RetrieverParams& params, const corpus::EmbeddingTable& table,
                          const std::vector<std::string>& history, std::size_t k) {
  const auto fwd = retriever::forward_scan(params, retriever::gather(table, history), false, 0);
  const ScoredPool scores = retriever::score_corpus(fwd.query, table);
  return retriever::retrieve_topk(scores, k, std::set<std::string>(history.begin(), history.end()));
}

EvalReport evaluate(const retriever::RetrieverParams& params, const corpus::EmbeddingTable& table,
                    const corpus::CorpusIndex& index, gen::Generator& generator,
                    const std::vector<data::TrainingExample>& test, const EvalConfig& cfg,
                    const std::unordered_map<std::string, std::size_t>* train_counts,
                    std::vector<ExampleResult>* per_example) {
  EvalReport report;
  report.seed = cfg.seed;
  report.config_hash = cfg.config_hash;

  std::vector<const data::TrainingExample*> usable;
  std::vector<CandidateSet> retrieved;
  std::vector<gen::PromptSpec> prompts;
  for (const auto& ex : test) {
    if (ex.history.empty()) {
      ++report.skipped_no_history;
      continue;
    }
    usable.push_back(&ex);
    retrieved.push_back(retrieve_for(params, table, ex.history, cfg.retrieval_k));
    prompts.push_back(gen::build_prompt(ex.context, retrieved.back().items, index, cfg.retrieval_k));
  }

  std::vector<std::string> errors;
  const auto responses = gen::generate_all(generator, prompts, &errors);

  std::vector<gen::RankedOutput> outputs;
  std::vector<ExampleResult> results;
  for (std::size_t i = 0; i < usable.size(); ++i) {
    const auto& ex = *usable[i];
    for (std::size_t k : cfg.ks) {
      report.retrieval_metrics["ndcg@" + std::to_string(k)] += ndcg_at_k(retrieved[i].items, ex.targets, k);
      report.retrieval_metrics["recall@" + std::to_string(k)] += recall_at_k(retrieved[i].items, ex.targets, k);
    }
    if (!responses[i]) {
      ++report.failed;
      continue;
    }
    gen::RankedOutput out = gen::parse_ranking(*responses[i], prompts[i].candidates);
    for (std::size_t k : cfg.ks) {
      report.metrics["ndcg@" + std::to_string(k)] += ndcg_at_k(out.items, ex.targets, k);
      report.metrics["recall@" + std::to_string(k)] += recall_at_k(out.items, ex.targets, k);
    }
    results.push_back({ex.id, out.items, ex.targets});
    outputs.push_back(std::move(out));
  }

  report.n_examples = results.size();
  if (report.n_examples == 0) throw Error("evaluation produced no scored examples");
  for (auto& [_, v] : report.metrics) v /= double(report.n_examples);
  for (auto& [_, v] : report.retrieval_metrics) v /= double(usable.size());
  report.hallucination_rate = hallucination_rate(outputs);
  report.popularity_buckets =
      popularity_buckets(results, train_counts ? *train_counts : std::unordered_map<std::string, std::size_t>{},
                         cfg.bucket_thresholds);
  if (per_example) *per_example = std::move(results);
  return report;
}

}  // namespace rar::eval
