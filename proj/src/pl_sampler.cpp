#include "rar/pl_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace rar::pl {

namespace {

void check_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be a positive finite number");
  }
}

/// Pool positions of the set's items, in selection order.
std::vector<std::size_t> locate(const ScoredPool& pool, const CandidateSet& set) {
  std::unordered_map<std::string_view, std::size_t> where;
  where.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) where.emplace(pool.ids[i], i);
  std::vector<std::size_t> pos;
  pos.reserve(set.size());
  std::vector<bool> used(pool.size(), false);
  for (const auto& id : set.items) {
    auto it = where.find(id);
    if (it == where.end()) throw LookupError("candidate " + id + " is not in pool " + pool.tag);
    if (used[it->second]) throw LookupError("candidate " + id + " appears twice in the set");
    used[it->second] = true;
    pos.push_back(it->second);
  }
  return pos;
}

}  // namespace

CandidateSet sample_set(const ScoredPool& pool, std::size_t k, std::uint64_t seed, double temperature) {
  check_temperature(temperature);
  if (k == 0) throw ConfigError("sample_set: k must be positive");
  if (k > pool.size()) {
    throw LookupError("sample_set: k = " + std::to_string(k) + " exceeds pool size " +
                      std::to_string(pool.size()));
  }
  for (double v : pool.scores)
    if (!std::isfinite(v)) throw NumericError("sample_set: non-finite score in pool");
  Rng rng(seed);
  Vec keys(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) keys[i] = pool.scores[i] / temperature + rng.gumbel();

  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (keys[a] != keys[b]) return keys[a] > keys[b];
                      return pool.ids[a] < pool.ids[b];
                    });
  CandidateSet out;
  out.pool_tag = pool.tag;
  for (std::size_t i = 0; i < k; ++i) {
    out.items.push_back(pool.ids[idx[i]]);
    out.scores.push_back(pool.scores[idx[i]]);
  }
  return out;
}

double set_log_prob(const ScoredPool& pool, const CandidateSet& set, double temperature) {
  check_temperature(temperature);
  const auto pos = locate(pool, set);
  std::vector<bool> removed(pool.size(), false);
  double total = 0.0;
  for (std::size_t chosen : pos) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (!removed[j]) mx = std::max(mx, pool.scores[j] / temperature);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (!removed[j]) z += std::exp(pool.scores[j] / temperature - mx);
    }
    total += pool.scores[chosen] / temperature - (mx + std::log(z));
    removed[chosen] = true;
  }
  return total;
}

Vec set_log_prob_grad(const ScoredPool& pool, const CandidateSet& set, double temperature) {
  check_temperature(temperature);
  const auto pos = locate(pool, set);
  Vec grad(pool.size(), 0.0);
  std::vector<bool> removed(pool.size(), false);
  Vec w(pool.size());
  for (std::size_t chosen : pos) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (!removed[j]) mx = std::max(mx, pool.scores[j] / temperature);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      w[j] = removed[j] ? 0.0 : std::exp(pool.scores[j] / temperature - mx);
      z += w[j];
    }
    for (std::size_t j = 0; j < pool.size(); ++j) grad[j] -= w[j] / z;
    grad[chosen] += 1.0;
    removed[chosen] = true;
  }
  for (double& g : grad) g /= temperature;
  return grad;
}

}  // namespace rar::pl
