#include "rar/preference_opt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "rar/pl_sampler.hpp"

namespace rar::pref {

using nlohmann::json;
namespace rt = retriever;

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kDpo: return "dpo";
    case Algorithm::kSimpo: return "simpo";
    case Algorithm::kGrpo: return "grpo";
    case Algorithm::kSft: return "sft";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& s) {
  if (s == "dpo") return Algorithm::kDpo;
  if (s == "simpo") return Algorithm::kSimpo;
  if (s == "grpo") return Algorithm::kGrpo;
  if (s == "sft") return Algorithm::kSft;
  throw ConfigError("unknown algorithm '" + s + "' (expected dpo, simpo, grpo or sft)");
}

double ndcg_reward(const std::vector<std::string>& ranked, const std::vector<std::string>& targets, std::size_t k) {
  return eval::ndcg_at_k(ranked, targets, k);
}

Annotation annotate_pair(ScoredSet a, ScoredSet b, std::size_t max_resamples, const Resampler& resample) {
  Annotation out;
  for (std::size_t used = 0;; ++used) {
    const ScoredSet* w = nullptr;
    const ScoredSet* l = nullptr;
    if (a.has_label != b.has_label) {
      w = a.has_label ? &a : &b;
      l = a.has_label ? &b : &a;
    } else if (a.has_label && a.reward != b.reward) {
      w = a.reward > b.reward ? &a : &b;
      l = a.reward > b.reward ? &b : &a;
    }
    if (w) {
      // A label-holder ranked out of the reward window can score below a
      // label-free set; the lone label-holder still wins.
      out.pair = PreferencePair{w->set, l->set, {w->reward, l->reward}, used};
      out.resamples_used = used;
      return out;
    }
    if (used == max_resamples || !resample) {
      out.resamples_used = used;
      return out;
    }
    std::tie(a, b) = resample();
  }
}

namespace {

void require_finite(std::initializer_list<double> xs, const char* what) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite input");
  }
}

// -log sigma(m) and sigma(-m) without overflow.
double softplus_neg(double m) { return m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

PairLoss dpo_loss(double logp_w, double logp_l, std::optional<double> ref_w, std::optional<double> ref_l,
                  double beta) {
  require_finite({logp_w, logp_l, ref_w.value_or(0.0), ref_l.value_or(0.0), beta}, "dpo_loss");
  if (ref_w.has_value() != ref_l.has_value()) throw Error("dpo_loss: supply both reference terms or neither");
  const double m = beta * ((logp_w - ref_w.value_or(0.0)) - (logp_l - ref_l.value_or(0.0)));
  const double s = sigmoid(-m);
  return {softplus_neg(m), -beta * s, beta * s};
}

PairLoss simpo_loss(double logp_w, double logp_l, double beta, double gamma) {
  require_finite({logp_w, logp_l, beta, gamma}, "simpo_loss");
  const double m = beta * logp_w - beta * logp_l - gamma;
  const double s = sigmoid(-m);
  return {softplus_neg(m), -beta * s, beta * s};
}

Vec grpo_advantages(const Vec& rewards, double eps) {
  if (rewards.size() < 2) throw Error("grpo_advantages: group needs at least two rewards");
  const double n = double(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  Vec out(rewards.size(), 0.0);
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo == *hi) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / std::max(sd, eps);
  return out;
}

GroupLoss grpo_loss(const Vec& logps, const Vec& advantages, double kl_coeff, const Vec* ref_logps) {
  if (logps.size() != advantages.size() || (ref_logps && ref_logps->size() != logps.size())) {
    throw DimensionError("grpo_loss: length mismatch");
  }
  if (logps.empty()) throw Error("grpo_loss: empty group");
  const double g = double(logps.size());
  GroupLoss out;
  out.d_logp.resize(logps.size());
  const bool kl = kl_coeff > 0.0 && ref_logps != nullptr;
  for (std::size_t i = 0; i < logps.size(); ++i) {
    require_finite({logps[i], advantages[i]}, "grpo_loss");
    out.loss -= logps[i] * advantages[i] / g;
    out.d_logp[i] = -advantages[i] / g;
    if (kl) {
      out.loss += kl_coeff * (logps[i] - (*ref_logps)[i]) / g;
      out.d_logp[i] += kl_coeff / g;
    }
  }
  return out;
}

ScoreLoss nll_from_scores(const ScoredPool& pool, const std::vector<std::string>& targets) {
  if (targets.empty()) throw Error("nll anchor needs at least one target");
  if (pool.size() == 0) throw Error("nll anchor: empty pool");
  const double mx = *std::max_element(pool.scores.begin(), pool.scores.end());
  double z = 0.0;
  for (double s : pool.scores) z += std::exp(s - mx);
  const double lse = mx + std::log(z);

  ScoreLoss out;
  out.d_scores.assign(pool.size(), 0.0);
  const double inv = 1.0 / double(targets.size());
  for (const auto& t : targets) {
    auto it = std::find(pool.ids.begin(), pool.ids.end(), t);
    if (it == pool.ids.end()) throw LookupError("nll anchor: target " + t + " is not in the pool");
    const std::size_t j = std::size_t(it - pool.ids.begin());
    out.loss += (lse - pool.scores[j]) * inv;
    out.d_scores[j] -= inv;
  }
  for (std::size_t j = 0; j < pool.size(); ++j) out.d_scores[j] += std::exp(pool.scores[j] - lse);
  return out;
}

rt::LossAndGrad nll_anchor(const rt::RetrieverParams& params, const data::TrainingExample& example,
                           const corpus::EmbeddingTable& table, const std::vector<std::string>& pool) {
  if (example.history.empty()) throw Error("nll anchor: example " + example.id + " has no history");
  const auto fwd = rt::forward_scan(params, rt::gather(table, example.history), false, 0);
  const ScoredPool scored = rt::score_corpus(fwd.query, table, &pool);
  const ScoreLoss sl = nll_from_scores(scored, example.targets);
  std::vector<Vec> dq(fwd.trace.length());
  dq.back() = rt::chain_scores(scored, sl.d_scores, table);
  return {sl.loss, rt::backward(params, fwd.trace, dq)};
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (gamma < 0.0) throw ConfigError("gamma must be non-negative");
  if (group_size < 2) throw ConfigError("group size must be at least 2");
  if (k == 0) throw ConfigError("k must be positive");
  if (k > pool_size) throw ConfigError("k must not exceed the pool size");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (kl_coeff < 0.0) throw ConfigError("kl_coeff must be non-negative");
  if (nll_weight < 0.0) throw ConfigError("nll_weight must be non-negative");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
}

std::string StepRecord::to_json() const {
  json j{{"step", step},
         {"example_id", example_id},
         {"algorithm", algorithm_name(algorithm)},
         {"rewards", rewards},
         {"loss_nll", loss_nll},
         {"loss_rl", loss_rl},
         {"abstained", abstained},
         {"wall_ms", wall_ms}};
  if (skipped) j["skipped"] = true;
  if (resamples) j["resamples"] = resamples;
  j["policy_version"] = policy_version;
  return j.dump();
}

double TrainResult::mean_reward(std::size_t begin, std::size_t end) const {
  end = std::min(end, log.size());
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = begin; i < end; ++i) {
    for (double r : log[i].rewards) {
      sum += r;
      ++n;
    }
  }
  return n ? sum / double(n) : 0.0;
}

namespace {

struct StepContext {
  const data::TrainingExample& ex;
  const ScoredPool& pool;
  const corpus::CorpusIndex& index;
  gen::Generator& generator;
  const TrainConfig& cfg;
  std::uint64_t version;
};

// Draws `count` sets from the pool and scores them with the generator.
// Returns nullopt when any generator call failed.
std::optional<std::vector<ScoredSet>> draw_sets(const StepContext& c, std::size_t count, std::uint64_t& counter,
                                                std::uint64_t sampler_seed) {
  std::vector<ScoredSet> sets(count);
  std::vector<gen::PromptSpec> prompts;
  for (auto& s : sets) {
    s.set = pl::sample_set(c.pool, c.cfg.k, mix_seed(sampler_seed, counter++), c.cfg.temperature);
    s.set.policy_version = c.version;
    for (const auto& id : s.set.items) {
      if (std::find(c.ex.targets.begin(), c.ex.targets.end(), id) != c.ex.targets.end()) {
        s.has_label = true;
        break;
      }
    }
    prompts.push_back(gen::build_prompt(c.ex.context, s.set.items, c.index, c.cfg.k));
  }
  const auto replies = gen::generate_all(c.generator, prompts);
  for (std::size_t i = 0; i < count; ++i) {
    if (!replies[i]) return std::nullopt;
    const auto ranked = gen::parse_ranking(*replies[i], prompts[i].candidates);
    sets[i].reward = ndcg_reward(ranked.items, c.ex.targets, c.cfg.k);
  }
  return sets;
}

void add_scaled(Vec& acc, const Vec& g, double alpha) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += alpha * g[i];
}

double validation_ndcg10(const rt::RetrieverParams& params, const corpus::EmbeddingTable& table,
                         const corpus::CorpusIndex& index, gen::Generator& generator,
                         const std::vector<data::TrainingExample>& val, const eval::EvalConfig& ecfg) {
  eval::EvalConfig c = ecfg;
  if (std::find(c.ks.begin(), c.ks.end(), std::size_t{10}) == c.ks.end()) c.ks.push_back(10);
  return eval::evaluate(params, table, index, generator, val, c).metrics.at("ndcg@10");
}

}  // namespace

TrainResult train_rl(const std::vector<data::TrainingExample>& dataset, rt::RetrieverParams params,
                     const corpus::EmbeddingTable& table, const corpus::CorpusIndex& index, gen::Generator& generator,
                     const TrainConfig& cfg, const std::vector<data::TrainingExample>* validation, std::ostream* log) {
  cfg.validate();
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!dataset[i].history.empty() && !dataset[i].targets.empty()) order.push_back(i);
  }
  if (order.empty()) throw Error("train_rl: no usable training examples");

  const std::uint64_t sampler_seed = stream_seed(cfg.seed, "sampler");
  const std::uint64_t dropout_seed = stream_seed(cfg.seed, "dropout");
  const std::uint64_t split_seed = stream_seed(cfg.seed, "split");

  rt::AdamConfig acfg = cfg.adam;
  if (acfg.total_steps == 0) acfg.total_steps = cfg.steps;
  rt::Adam opt(params, acfg);
  const rt::RetrieverParams reference = params;

  TrainResult result;
  auto checkpoint = [&](std::size_t step) {
    if (!validation || validation->empty()) return;
    const double v = validation_ndcg10(params, table, index, generator, *validation, cfg.eval);
    result.validation.push_back({step, v});
    // Step 0 is the starting point, logged for reference only.
    if (step > 0 && v > result.best_val_ndcg10) {
      result.best_val_ndcg10 = v;
      result.best_step = step;
      result.best_params = params;
    }
  };
  checkpoint(0);

  Rng shuffler(split_seed);
  std::size_t cursor = order.size();
  std::uint64_t draw_counter = 0;

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    if (cursor == order.size()) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffler.below(i)]);
      cursor = 0;
    }
    const auto& ex = dataset[order[cursor++]];
    const auto t0 = std::chrono::steady_clock::now();

    StepRecord rec;
    rec.step = step;
    rec.example_id = ex.id;
    rec.algorithm = cfg.algorithm;
    rec.policy_version = params.version;

    const auto fwd = rt::forward_scan(params, rt::gather(table, ex.history), cfg.train_mode,
                                      mix_seed(dropout_seed, step));
    const ScoredPool full = rt::score_corpus(fwd.query, table);
    const std::set<std::string> excl(ex.history.begin(), ex.history.end());
    const ScoredPool pool = rt::shortlist(full, cfg.pool_size, excl);
    if (pool.size() < cfg.k) throw Error("train_rl: pool smaller than k for example " + ex.id);

    // The anchor pool is the sampler pool plus any target it missed.
    ScoredPool nll_pool = pool;
    for (const auto& t : ex.targets) {
      if (std::find(nll_pool.ids.begin(), nll_pool.ids.end(), t) != nll_pool.ids.end()) continue;
      const std::size_t r = table.row_of(t);
      nll_pool.ids.push_back(t);
      nll_pool.rows.push_back(r);
      nll_pool.scores.push_back(full.scores[r]);
    }

    Vec d_pool(pool.size(), 0.0);
    double loss_rl = 0.0;
    const StepContext ctx{ex, pool, index, generator, cfg, params.version};

    auto ref_logp = [&](const CandidateSet& s) {
      const auto rf = rt::forward_scan(reference, rt::gather(table, ex.history), false, 0);
      const ScoredPool rp = rt::score_corpus(rf.query, table, &pool.ids);
      return pl::set_log_prob(rp, s, cfg.temperature);
    };

    bool skip = false;
    if (cfg.algorithm == Algorithm::kDpo || cfg.algorithm == Algorithm::kSimpo) {
      auto first = draw_sets(ctx, 2, draw_counter, sampler_seed);
      if (!first) {
        skip = true;
      } else {
        rec.rewards = {(*first)[0].reward, (*first)[1].reward};
        bool failed = false;
        Resampler again = [&]() -> std::pair<ScoredSet, ScoredSet> {
          auto s = draw_sets(ctx, 2, draw_counter, sampler_seed);
          if (!s) {
            failed = true;
            return {ScoredSet{}, ScoredSet{}};
          }
          return {(*s)[0], (*s)[1]};
        };
        Annotation ann = annotate_pair((*first)[0], (*first)[1], cfg.max_resamples, again);
        rec.resamples = ann.resamples_used;
        if (failed) {
          skip = true;
        } else if (!ann.pair) {
          rec.abstained = true;
        } else {
          const auto& pr = *ann.pair;
          if (pr.winner.policy_version != params.version || pr.loser.policy_version != params.version) {
            throw std::logic_error("train_rl: off-policy candidate set reached the loss");
          }
          const double lw = pl::set_log_prob(pool, pr.winner, cfg.temperature);
          const double ll = pl::set_log_prob(pool, pr.loser, cfg.temperature);
          PairLoss pl_loss;
          if (cfg.algorithm == Algorithm::kDpo) {
            std::optional<double> rw, rl;
            if (cfg.use_reference) {
              rw = ref_logp(pr.winner);
              rl = ref_logp(pr.loser);
            }
            pl_loss = dpo_loss(lw, ll, rw, rl, cfg.beta);
          } else {
            pl_loss = simpo_loss(lw, ll, cfg.beta, cfg.gamma);
          }
          loss_rl = pl_loss.loss;
          add_scaled(d_pool, pl::set_log_prob_grad(pool, pr.winner, cfg.temperature), pl_loss.d_w);
          add_scaled(d_pool, pl::set_log_prob_grad(pool, pr.loser, cfg.temperature), pl_loss.d_l);
        }
      }
    } else if (cfg.algorithm == Algorithm::kGrpo) {
      auto group = draw_sets(ctx, cfg.group_size, draw_counter, sampler_seed);
      if (!group) {
        skip = true;
      } else {
        Vec rewards, logps, refs;
        for (const auto& s : *group) {
          if (s.set.policy_version != params.version) {
            throw std::logic_error("train_rl: off-policy candidate set reached the loss");
          }
          rewards.push_back(s.reward);
          logps.push_back(pl::set_log_prob(pool, s.set, cfg.temperature));
          if (cfg.use_reference) refs.push_back(ref_logp(s.set));
        }
        rec.rewards = rewards;
        const Vec adv = grpo_advantages(rewards);
        const GroupLoss gl = grpo_loss(logps, adv, cfg.kl_coeff, cfg.use_reference ? &refs : nullptr);
        loss_rl = gl.loss;
        for (std::size_t i = 0; i < group->size(); ++i) {
          if (gl.d_logp[i] == 0.0) continue;
          add_scaled(d_pool, pl::set_log_prob_grad(pool, (*group)[i].set, cfg.temperature), gl.d_logp[i]);
        }
      }
    }

    if (skip) {
      ++result.skipped;
      rec.skipped = true;
      rec.rewards.clear();
    } else {
      if (rec.abstained) ++result.abstained;
      ScoreLoss nll = nll_from_scores(nll_pool, ex.targets);
      rec.loss_nll = nll.loss;
      rec.loss_rl = loss_rl;
      if (!std::isfinite(nll.loss) || !std::isfinite(loss_rl)) {
        throw NumericError("train_rl: non-finite loss at step " + std::to_string(step) + " (example " + ex.id +
                           ", nll " + std::to_string(nll.loss) + ", rl " + std::to_string(loss_rl) + ")");
      }
      Vec dq = rt::chain_scores(pool, d_pool, table);
      for (double& d : nll.d_scores) d *= cfg.nll_weight;
      add_scaled(dq, rt::chain_scores(nll_pool, nll.d_scores, table), 1.0);

      std::vector<Vec> dquery(fwd.trace.length());
      dquery.back() = std::move(dq);
      const rt::RetrieverParams grads = rt::backward(params, fwd.trace, dquery);
      rt::check_finite(grads, "train_rl gradient");
      rec.update_version = params.version;
      opt.step(params, grads);
    }

    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (log) *log << rec.to_json() << '\n';
    result.log.push_back(std::move(rec));

    if (step % cfg.eval_every == 0 && step != cfg.steps) checkpoint(step);
  }
  checkpoint(cfg.steps);

  result.final_params = params;
  if (result.best_val_ndcg10 < 0.0) {
    result.best_params = params;
    result.best_step = cfg.steps;
  }
  return result;
}

}  // namespace rar::pref
