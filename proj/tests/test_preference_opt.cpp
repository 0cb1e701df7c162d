#include <doctest.h>
#include <sstream>

#include "helpers.hpp"
#include "rar/pl_sampler.hpp"
#include "rar/preference_opt.hpp"

using namespace rar;
using namespace rar::pref;
namespace rt = rar::retriever;

namespace {

double fd(const std::function<double(double)>& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

ScoredSet scored(std::vector<std::string> items, double reward, bool label) {
  ScoredSet s;
  s.set.items = std::move(items);
  s.reward = reward;
  s.has_label = label;
  return s;
}

struct Fixture {
  corpus::EmbeddingTable table = testing::random_table(60, 8, 21);
  corpus::CorpusIndex index;
  std::vector<data::TrainingExample> examples;

  Fixture() {
    std::vector<corpus::MovieEntry> ms;
    for (const auto& id : table.ids()) ms.push_back(testing::movie(id, "Film " + id, 2000));
    index = corpus::CorpusIndex(ms);
    Rng rng(4);
    for (int i = 0; i < 12; ++i) {
      data::TrainingExample x;
      x.id = "x" + std::to_string(i);
      x.context = {"I want something like film " + std::to_string(i)};
      for (int h = 0; h < 3; ++h) x.history.push_back(table.ids()[rng.below(20)]);
      x.targets = {table.ids()[20 + rng.below(40)]};
      examples.push_back(x);
    }
  }
};

// Emits one title that is never a candidate.
class NothingGenerator final : public gen::Generator {
 public:
  std::string generate(const gen::PromptSpec&) override { return "1. Nothing At All"; }
};

class FailingGenerator final : public gen::Generator {
 public:
  std::string generate(const gen::PromptSpec&) override { throw TransportError("down"); }
};

TrainConfig small_config(Algorithm a) {
  TrainConfig c;
  c.algorithm = a;
  c.k = 5;
  c.pool_size = 15;
  c.steps = 20;
  c.eval_every = 10;
  c.max_resamples = 2;
  c.group_size = a == Algorithm::kGrpo ? 4 : 2;
  c.adam.lr = 1e-2;
  c.adam.warmup_steps = 2;
  c.eval.ks = {5, 10};
  c.eval.retrieval_k = 10;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("algorithm names") {
  for (auto a : {Algorithm::kDpo, Algorithm::kSimpo, Algorithm::kGrpo, Algorithm::kSft})
    CHECK(parse_algorithm(algorithm_name(a)) == a);
  CHECK_THROWS_AS(parse_algorithm("ppo"), ConfigError);
}

TEST_CASE("dpo loss values and gradients") {
  // beta = 0.1 and a unit log-ratio gap: margin 0.1, loss -log sigmoid(0.1).
  const auto a = dpo_loss(-1.0, -2.0, std::nullopt, std::nullopt, 0.1);
  CHECK(a.loss == doctest::Approx(0.6443966600735709).epsilon(1e-12));
  // Zero margin gives ln 2 whatever the reference terms are.
  CHECK(dpo_loss(-3.0, -3.0, std::nullopt, std::nullopt, 0.5).loss == doctest::Approx(std::log(2.0)));
  CHECK(dpo_loss(-1.0, -2.0, -1.0, -2.0, 0.5).loss == doctest::Approx(std::log(2.0)));
  CHECK(a.d_w < 0);
  CHECK(a.d_l > 0);
  CHECK(a.d_w == doctest::Approx(-a.d_l));

  const double lw = -4.2, ll = -3.1, rw = -4.0, rl = -3.5, beta = 0.7;
  const auto g = dpo_loss(lw, ll, rw, rl, beta);
  CHECK(g.d_w == doctest::Approx(fd([&](double x) { return dpo_loss(x, ll, rw, rl, beta).loss; }, lw)).epsilon(1e-7));
  CHECK(g.d_l == doctest::Approx(fd([&](double x) { return dpo_loss(lw, x, rw, rl, beta).loss; }, ll)).epsilon(1e-7));

  // Large margins stay finite.
  CHECK(std::isfinite(dpo_loss(-1e4, 0, std::nullopt, std::nullopt, 1.0).loss));
  CHECK(dpo_loss(0, -1e4, std::nullopt, std::nullopt, 1.0).loss == doctest::Approx(0.0));

  CHECK_THROWS_AS(dpo_loss(NAN, 0, std::nullopt, std::nullopt, 0.1), NumericError);
  CHECK_THROWS_AS(dpo_loss(0, 0, 1.0, std::nullopt, 0.1), Error);
}

TEST_CASE("simpo loss") {
  CHECK(simpo_loss(-2.0, -2.0, 0.3, 0.0).loss == doctest::Approx(std::log(2.0)));
  // A positive margin target raises the loss at equal log-probabilities.
  CHECK(simpo_loss(-2.0, -2.0, 0.3, 0.5).loss > std::log(2.0));
  const auto g = simpo_loss(-1.5, -2.5, 0.4, 0.2);
  CHECK(g.d_w == doctest::Approx(fd([](double x) { return simpo_loss(x, -2.5, 0.4, 0.2).loss; }, -1.5)).epsilon(1e-7));
  CHECK(g.d_l == doctest::Approx(fd([](double x) { return simpo_loss(-1.5, x, 0.4, 0.2).loss; }, -2.5)).epsilon(1e-7));
}

TEST_CASE("grpo advantages and loss") {
  const auto a = grpo_advantages({1, 0, 1, 0});
  CHECK(a == Vec{1, -1, 1, -1});

  const auto b = grpo_advantages({0.9, 0.3, 0.0});
  const double sd = std::sqrt(0.14);
  CHECK(std::abs(b[0] - 0.5 / sd) < 1e-12);
  CHECK(std::abs(b[1] + 0.1 / sd) < 1e-12);
  CHECK(std::abs(b[2] + 0.4 / sd) < 1e-12);

  // All-equal rewards carry no signal.
  for (double v : grpo_advantages({0.2, 0.2, 0.2})) CHECK(v == 0.0);
  CHECK_THROWS_AS(grpo_advantages({1.0}), Error);

  const auto l = grpo_loss({-1.0, -2.0}, {1.0, -1.0});
  CHECK(l.loss == doctest::Approx(-0.5));
  CHECK(l.d_logp == Vec{-0.5, 0.5});

  const Vec logps{-1.0, -2.5, -0.7}, adv{0.3, -1.1, 0.8}, ref{-1.2, -2.0, -0.9};
  const auto k = grpo_loss(logps, adv, 0.4, &ref);
  for (std::size_t i = 0; i < 3; ++i) {
    auto f = [&](double x) {
      Vec lp = logps;
      lp[i] = x;
      return grpo_loss(lp, adv, 0.4, &ref).loss;
    };
    CHECK(k.d_logp[i] == doctest::Approx(fd(f, logps[i])).epsilon(1e-7));
  }
  CHECK_THROWS_AS(grpo_loss({-1.0}, {1.0, 2.0}), DimensionError);
}

TEST_CASE("nll from scores matches a direct softmax") {
  ScoredPool p;
  p.ids = {"a", "b", "c"};
  p.scores = {1.0, 2.0, 0.5};
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  const auto n = nll_from_scores(p, {"a", "c"});
  CHECK(n.loss == doctest::Approx(0.5 * (-(1.0 - std::log(z)) - (0.5 - std::log(z)))));
  for (std::size_t j = 0; j < 3; ++j) {
    auto f = [&](double x) {
      ScoredPool q = p;
      q.scores[j] = x;
      return nll_from_scores(q, {"a", "c"}).loss;
    };
    CHECK(n.d_scores[j] == doctest::Approx(fd(f, p.scores[j])).epsilon(1e-7));
  }
  CHECK_THROWS_AS(nll_from_scores(p, {"zz"}), LookupError);
}

TEST_CASE("annotation rules") {
  std::size_t calls = 0;
  const Resampler never = [&]() -> std::pair<ScoredSet, ScoredSet> {
    ++calls;
    return {scored({"x"}, 0.0, false), scored({"y"}, 0.0, false)};
  };

  // Exactly one label-holder wins even with a lower reward.
  auto r = annotate_pair(scored({"a"}, 0.0, true), scored({"b"}, 0.9, false), 3, never);
  REQUIRE(r.pair.has_value());
  CHECK(r.pair->winner.items == std::vector<std::string>{"a"});
  CHECK(calls == 0);

  r = annotate_pair(scored({"a"}, 0.3, true), scored({"b"}, 0.6, true), 3, never);
  REQUIRE(r.pair.has_value());
  CHECK(r.pair->winner.items == std::vector<std::string>{"b"});
  CHECK(r.pair->rewards == std::pair<double, double>{0.6, 0.3});

  // Ties are redrawn up to the cap, then abstain.
  r = annotate_pair(scored({"a"}, 0.5, true), scored({"b"}, 0.5, true), 3, never);
  CHECK_FALSE(r.pair.has_value());
  CHECK(r.resamples_used == 3);
  CHECK(calls == 3);

  calls = 0;
  const Resampler second_try = [&]() -> std::pair<ScoredSet, ScoredSet> {
    ++calls;
    return {scored({"c"}, 0.0, false), scored({"d"}, 0.4, true)};
  };
  r = annotate_pair(scored({"a"}, 0.0, false), scored({"b"}, 0.0, false), 3, second_try);
  REQUIRE(r.pair.has_value());
  CHECK(r.pair->winner.items == std::vector<std::string>{"d"});
  CHECK(r.resamples_used == 1);

  r = annotate_pair(scored({"a"}, 0.0, false), scored({"b"}, 0.0, false), 0, never);
  CHECK_FALSE(r.pair.has_value());
}

TEST_CASE("a dpo step through the retriever raises the winner margin") {
  Fixture fx;
  auto p = rt::init_params(8, 6, 2, 0.0, 5);
  const auto& ex = fx.examples[0];
  const auto embs = rt::gather(fx.table, ex.history);
  const std::set<std::string> excl(ex.history.begin(), ex.history.end());
  const auto pool0 = rt::shortlist(rt::score_corpus(rt::forward_scan(p, embs, false, 0).query, fx.table), 20, excl);
  const auto w = pl::sample_set(pool0, 5, 1);
  const auto l = pl::sample_set(pool0, 5, 2);

  auto margin_and_grad = [&](const rt::RetrieverParams& q, rt::RetrieverParams* grad) {
    const auto f = rt::forward_scan(q, embs, false, 0);
    const auto pool = rt::score_corpus(f.query, fx.table, &pool0.ids);
    const double lw = pl::set_log_prob(pool, w), ll = pl::set_log_prob(pool, l);
    if (grad) {
      const auto loss = dpo_loss(lw, ll, std::nullopt, std::nullopt, 0.1);
      Vec d(pool.size(), 0.0);
      const auto gw = pl::set_log_prob_grad(pool, w), gl = pl::set_log_prob_grad(pool, l);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = loss.d_w * gw[i] + loss.d_l * gl[i];
      std::vector<Vec> dq(f.trace.length());
      dq.back() = rt::chain_scores(pool, d, fx.table);
      *grad = rt::backward(q, f.trace, dq);
    }
    return lw - ll;
  };

  rt::RetrieverParams g;
  const double before = margin_and_grad(p, &g);

  // Analytic parameter gradient of the composed loss agrees with finite differences.
  auto loss_at = [&](const rt::RetrieverParams& q) {
    const double m = margin_and_grad(q, nullptr);
    return dpo_loss(m, 0.0, std::nullopt, std::nullopt, 0.1).loss;
  };
  auto ps = p.tensors();
  const auto gs = g.tensors();
  for (std::size_t ti = 0; ti < ps.size(); ++ti) {
    for (std::size_t i = 0; i < ps[ti].second.size(); i += 7) {
      double& x = ps[ti].second[i];
      const double keep = x;
      x = keep + 1e-6;
      const double up = loss_at(p);
      x = keep - 1e-6;
      const double down = loss_at(p);
      x = keep;
      const double num = (up - down) / 2e-6;
      if (std::abs(num) + std::abs(gs[ti].second[i]) > 1e-9) CHECK(testing::rel_err(num, gs[ti].second[i]) < 1e-5);
    }
  }

  for (std::size_t ti = 0; ti < ps.size(); ++ti)
    for (std::size_t i = 0; i < ps[ti].second.size(); ++i) ps[ti].second[i] -= 1e-3 * gs[ti].second[i];
  CHECK(margin_and_grad(p, nullptr) > before);
}

TEST_CASE("train_rl is on-policy and logs every step") {
  Fixture fx;
  gen::IdentityGenerator idgen;
  for (auto a : {Algorithm::kDpo, Algorithm::kSimpo, Algorithm::kGrpo}) {
    auto cfg = small_config(a);
    const auto p0 = rt::init_params(8, 6, 2, 0.1, 5);
    std::ostringstream log;
    const auto res = train_rl(fx.examples, p0, fx.table, fx.index, idgen, cfg, nullptr, &log);
    REQUIRE(res.log.size() == cfg.steps);
    std::uint64_t expect = 0;
    for (const auto& r : res.log) {
      CHECK(r.policy_version == expect);
      CHECK(r.update_version == r.policy_version);
      ++expect;
      CHECK(r.rewards.size() == cfg.group_size);
    }
    CHECK(res.final_params.version == cfg.steps);
    CHECK(res.best_params.same_values(res.final_params));
    const std::string text = log.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == long(cfg.steps));
  }
}

TEST_CASE("with uninformative feedback every pair abstains and only the anchor trains") {
  Fixture fx;
  NothingGenerator nothing;
  auto cfg = small_config(Algorithm::kDpo);
  cfg.k = cfg.pool_size;  // both sets hold the whole pool, so labels always tie
  const auto p0 = rt::init_params(8, 6, 2, 0.1, 5);
  const auto dpo = train_rl(fx.examples, p0, fx.table, fx.index, nothing, cfg);
  CHECK(dpo.abstained == cfg.steps);
  for (const auto& r : dpo.log) CHECK(r.resamples == cfg.max_resamples);

  cfg.algorithm = Algorithm::kSft;
  const auto sft = train_rl(fx.examples, p0, fx.table, fx.index, nothing, cfg);
  CHECK(sft.abstained == 0);
  CHECK(dpo.final_params.same_values(sft.final_params));
}

TEST_CASE("generator failures skip the update") {
  Fixture fx;
  FailingGenerator broken;
  auto cfg = small_config(Algorithm::kGrpo);
  const auto p0 = rt::init_params(8, 6, 2, 0.1, 5);
  const auto res = train_rl(fx.examples, p0, fx.table, fx.index, broken, cfg);
  CHECK(res.skipped == cfg.steps);
  CHECK(res.final_params.same_values(p0));
  CHECK(res.final_params.version == 0);
}

TEST_CASE("validation picks a best checkpoint after step 0") {
  Fixture fx;
  gen::IdentityGenerator idgen;
  auto cfg = small_config(Algorithm::kDpo);
  const std::vector<data::TrainingExample> val(fx.examples.begin(), fx.examples.begin() + 4);
  const auto res = train_rl(fx.examples, rt::init_params(8, 6, 2, 0.1, 5), fx.table, fx.index, idgen, cfg, &val);
  REQUIRE(res.validation.size() == 3);
  CHECK(res.validation[0].step == 0);
  CHECK(res.validation[1].step == 10);
  CHECK(res.validation[2].step == 20);
  CHECK(res.best_step > 0);
  CHECK(res.best_val_ndcg10 == std::max(res.validation[1].ndcg10, res.validation[2].ndcg10));
}

TEST_CASE("train config validation") {
  auto c = small_config(Algorithm::kGrpo);
  c.group_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(Algorithm::kDpo);
  c.k = c.pool_size + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(Algorithm::kDpo);
  c.beta = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
