#include <doctest.h>

#include "helpers.hpp"
#include "rar/retriever.hpp"

using namespace rar;
using namespace rar::retriever;

namespace {

std::vector<Vec> random_inputs(std::size_t T, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec> xs(T, Vec(dim));
  for (auto& x : xs)
    for (double& v : x) v = rng.normal();
  return xs;
}

// L = sum_t w_t . query_t
double probe_loss(const RetrieverParams& p, const std::vector<Vec>& xs, const std::vector<Vec>& w, bool train,
                  std::uint64_t seed) {
  const auto f = forward_sequential(p, xs, train, seed);
  double l = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) l += dot(w[t], query_at(p, f.trace, t));
  return l;
}

// Central differences on every scalar of every tensor against an analytic gradient.
template <typename LossFn>
void check_gradient(RetrieverParams p, const RetrieverParams& grad, LossFn loss, double tol) {
  const double h = 1e-6;
  auto ps = p.tensors();
  const auto gs = grad.tensors();
  double worst = 0;
  for (std::size_t ti = 0; ti < ps.size(); ++ti) {
    for (std::size_t i = 0; i < ps[ti].second.size(); ++i) {
      double& x = ps[ti].second[i];
      const double keep = x;
      x = keep + h;
      const double up = loss(p);
      x = keep - h;
      const double down = loss(p);
      x = keep;
      const double fd = (up - down) / (2 * h);
      const double an = gs[ti].second[i];
      if (std::abs(fd) + std::abs(an) > 1e-7) worst = std::max(worst, testing::rel_err(fd, an));
    }
  }
  CHECK(worst < tol);
}

}  // namespace

TEST_CASE("lambda stays inside the unit interval") {
  auto p = init_params(8, 6, 2, 0.0, 1);
  p.layers[0].raw_lambda = Vec{-50, -1, 0, 1, 50, 3};
  for (double l : p.lambda(0)) CHECK(std::abs(l) <= kLambdaMax);
}

TEST_CASE("scan forward equals sequential forward") {
  const auto p = init_params(12, 10, 3, 0.2, 4);
  for (std::size_t T : {1u, 7u, 64u}) {
    const auto xs = random_inputs(T, 12, T);
    for (bool train : {false, true}) {
      const auto a = forward_sequential(p, xs, train, 99);
      const auto b = forward_scan(p, xs, train, 99);
      REQUIRE(a.query.size() == b.query.size());
      for (std::size_t i = 0; i < a.query.size(); ++i) CHECK(std::abs(a.query[i] - b.query[i]) < 1e-10);
      for (std::size_t t = 0; t < T; ++t) {
        const auto qa = query_at(p, a.trace, t), qb = query_at(p, b.trace, t);
        for (std::size_t i = 0; i < qa.size(); ++i) CHECK(std::abs(qa[i] - qb[i]) < 1e-10);
      }
    }
  }
  CHECK_THROWS_AS(forward_scan(p, {}, false, 0), Error);
  CHECK_THROWS_AS(forward_scan(p, random_inputs(3, 5, 1), false, 0), DimensionError);
}

TEST_CASE("dropout is deterministic in the seed and off in eval mode") {
  const auto p = init_params(8, 8, 2, 0.5, 2);
  const auto xs = random_inputs(5, 8, 3);
  CHECK(forward_scan(p, xs, true, 1).query == forward_scan(p, xs, true, 1).query);
  CHECK(forward_scan(p, xs, true, 1).query != forward_scan(p, xs, true, 2).query);
  CHECK(forward_scan(p, xs, false, 1).query == forward_scan(p, xs, false, 2).query);
}

TEST_CASE("backward matches finite differences") {
  const std::size_t D = 5, H = 4, T = 6;
  auto p = init_params(D, H, 2, 0.3, 8);
  // Push lambdas away from zero so the recurrence path carries signal.
  for (auto& l : p.layers)
    for (double& r : l.raw_lambda) r += 0.8;
  const auto xs = random_inputs(T, D, 5);
  const auto w = random_inputs(T, D, 6);
  for (bool train : {false, true}) {
    const auto f = forward_sequential(p, xs, train, 17);
    const auto g = backward(p, f.trace, w);
    check_gradient(p, g, [&](const RetrieverParams& q) { return probe_loss(q, xs, w, train, 17); }, 1e-5);
    // The scan trace feeds the same backward pass.
    const auto g2 = backward(p, forward_scan(p, xs, train, 17).trace, w);
    const auto a = g.tensors(), b = g2.tensors();
    for (std::size_t ti = 0; ti < a.size(); ++ti)
      for (std::size_t i = 0; i < a[ti].second.size(); ++i) CHECK(std::abs(a[ti].second[i] - b[ti].second[i]) < 1e-9);
  }
}

TEST_CASE("pretraining loss gradient matches finite differences") {
  const auto table = testing::random_table(40, 6, 3);
  auto p = init_params(6, 5, 2, 0.0, 9);
  std::vector<TrainSequence> batch{sequence_from_session({"i001", "i004", "i007", "i002"}),
                                   sequence_from_example({"i010", "i011"}, {"i020", "i021"})};
  PretrainConfig cfg;
  cfg.negatives_per_step = 10;
  cfg.train_mode = false;
  const auto lg = pretrain_loss(p, batch, table, cfg, 5);
  CHECK(lg.loss > 0);
  check_gradient(p, lg.grad, [&](const RetrieverParams& q) { return pretrain_loss(q, batch, table, cfg, 5).loss; },
                 1e-5);
}

TEST_CASE("training sequences") {
  const auto s = sequence_from_session({"a", "b", "c"});
  CHECK(s.inputs == std::vector<std::string>{"a", "b"});
  REQUIRE(s.targets.size() == 2);
  CHECK(s.targets[1] == std::pair<std::size_t, std::string>{1, "c"});
  const auto e = sequence_from_example({"a", "b"}, {"x", "y"});
  CHECK(e.inputs == std::vector<std::string>{"a", "b"});
  CHECK(e.targets[0].first == 1);
  CHECK(e.targets[1].second == "y");
}

TEST_CASE("scoring, top-k and shortlist") {
  corpus::EmbeddingTable t(2, "x");
  t.add("a", Vec{1, 0});
  t.add("b", Vec{0, 1});
  t.add("c", Vec{1, 0});
  t.add("d", Vec{-1, 0});
  const Vec q{2, 1};
  const auto s = score_corpus(q, t);
  CHECK(s.scores == Vec{2, 1, 2, -2});
  CHECK(s.tag == "corpus");
  CHECK(retrieve_topk(s, 3).items == std::vector<std::string>{"a", "c", "b"});
  CHECK(retrieve_topk(s, 2, {"a"}).items == std::vector<std::string>{"c", "b"});
  CHECK_THROWS_AS(retrieve_topk(s, 10), Error);
  const auto sl = shortlist(s, 2, {"c"});
  CHECK(sl.ids == std::vector<std::string>{"a", "b"});
  CHECK(sl.tag == "top2");
  const std::vector<std::string> pool{"d", "b"};
  const auto ps = score_corpus(q, t, &pool);
  CHECK(ps.scores == Vec{-2, 1});
  CHECK(chain_scores(ps, Vec{1, 2}, t) == Vec{-1, 2});
}

TEST_CASE("adam schedule and update") {
  auto p = init_params(4, 3, 1, 0.0, 1);
  AdamConfig c;
  c.lr = 1.0;
  c.warmup_steps = 4;
  c.total_steps = 8;
  Adam opt(p, c);
  auto g = p.zeros_like();
  for (auto& [name, t] : g.tensors())
    for (double& v : t) v = 0.5;
  const std::vector<double> expect{0.25, 0.5, 0.75, 1.0, 1.0, 0.5 * (1 + std::cos(std::numbers::pi / 4)), 0.5,
                                   0.5 * (1 + std::cos(3 * std::numbers::pi / 4)), 0.0};
  for (double e : expect) {
    CHECK(opt.learning_rate() == doctest::Approx(e));
    opt.step(p, g);
  }
  CHECK(p.version == expect.size());

  // First step moves each scalar by lr against the gradient sign.
  auto q = init_params(4, 3, 1, 0.0, 1);
  AdamConfig c1;
  c1.lr = 0.01;
  c1.warmup_steps = 0;
  Adam o1(q, c1);
  const auto before = q;
  o1.step(q, g);
  CHECK(q.w_in.data[0] == doctest::Approx(before.w_in.data[0] - 0.01));

  auto bad = g;
  bad.w_out.data[0] = NAN;
  CHECK_THROWS_AS(o1.step(q, bad), NumericError);
}

TEST_CASE("checkpoint round trip") {
  auto p = init_params(6, 4, 2, 0.1, 3);
  Adam opt(p, AdamConfig{});
  auto g = p.zeros_like();
  g.w_in.data[3] = 1.0;
  opt.step(p, g);
  testing::TempDir dir("ckpt");
  save_checkpoint({p, opt, 7}, dir.path / "c.json");
  const auto back = load_checkpoint(dir.path / "c.json");
  CHECK(back.params.same_values(p));
  CHECK(back.step == 7);
  REQUIRE(back.optimizer.has_value());
  CHECK(back.optimizer->steps_taken() == 1);
  CHECK(back.optimizer->first_moment() == opt.first_moment());
  CHECK(back.optimizer->second_moment() == opt.second_moment());
  CHECK_THROWS(load_checkpoint(dir.path / "missing.json"));
  CHECK_THROWS(checkpoint_from_json("{\"dim\": 3}"));
}
