#include "rar/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "rar/kernels.hpp"

namespace rar::retriever {

using nlohmann::json;

Vec RetrieverParams::lambda(std::size_t layer) const {
  const Vec& raw = layers.at(layer).raw_lambda;
  Vec out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = kLambdaMax * std::tanh(raw[i]);
  return out;
}

RetrieverParams RetrieverParams::zeros_like() const {
  RetrieverParams z;
  z.dim = dim;
  z.hidden = hidden;
  z.dropout = dropout;
  z.w_in = Matrix(w_in.rows, w_in.cols);
  z.w_out = Matrix(w_out.rows, w_out.cols);
  for (const auto& l : layers) {
    z.layers.push_back({Vec(l.raw_lambda.size(), 0.0), Matrix(l.b.rows, l.b.cols),
                        Matrix(l.c.rows, l.c.cols)});
  }
  return z;
}

std::size_t RetrieverParams::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors()) n += t.size();
  return n;
}

std::vector<std::pair<std::string, std::span<double>>> RetrieverParams::tensors() {
  std::vector<std::pair<std::string, std::span<double>>> out;
  out.emplace_back("w_in", std::span<double>(w_in.data));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "raw_lambda", std::span<double>(layers[l].raw_lambda));
    out.emplace_back(p + "b", std::span<double>(layers[l].b.data));
    out.emplace_back(p + "c", std::span<double>(layers[l].c.data));
  }
  out.emplace_back("w_out", std::span<double>(w_out.data));
  return out;
}

std::vector<std::pair<std::string, std::span<const double>>> RetrieverParams::tensors() const {
  auto mut = const_cast<RetrieverParams*>(this)->tensors();
  std::vector<std::pair<std::string, std::span<const double>>> out;
  out.reserve(mut.size());
  for (auto& [n, s] : mut) out.emplace_back(n, std::span<const double>(s));
  return out;
}

bool RetrieverParams::same_values(const RetrieverParams& o) const {
  return dim == o.dim && hidden == o.hidden && dropout == o.dropout && w_in == o.w_in &&
         layers == o.layers && w_out == o.w_out;
}

RetrieverParams init_params(std::size_t dim, std::size_t hidden, std::size_t num_layers,
                            double dropout, std::uint64_t seed) {
  if (dim == 0 || hidden == 0 || num_layers == 0) {
    throw ConfigError("retriever dims and layer count must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  Rng rng(seed);
  auto fill = [&](Matrix& m, double scale) {
    for (double& x : m.data) x = scale * rng.normal();
  };
  RetrieverParams p;
  p.dim = dim;
  p.hidden = hidden;
  p.dropout = dropout;
  p.w_in = Matrix(hidden, dim);
  fill(p.w_in, 1.0 / std::sqrt(double(dim)));
  for (std::size_t l = 0; l < num_layers; ++l) {
    LayerParams layer;
    layer.raw_lambda.resize(hidden);
    for (double& r : layer.raw_lambda) {
      // |lambda| spread over [0.3, 0.9] at init.
      const double lam = 0.3 + 0.6 * rng.uniform();
      r = std::atanh(lam / kLambdaMax);
    }
    layer.b = Matrix(hidden, hidden);
    layer.c = Matrix(hidden, hidden);
    fill(layer.b, 0.5 / std::sqrt(double(hidden)));
    fill(layer.c, 0.5 / std::sqrt(double(hidden)));
    p.layers.push_back(std::move(layer));
  }
  p.w_out = Matrix(dim, hidden);
  fill(p.w_out, 1.0 / std::sqrt(double(hidden)));
  return p;
}

void check_finite(const RetrieverParams& p, const char* what) {
  for (const auto& [name, t] : p.tensors()) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!std::isfinite(t[i])) {
        throw NumericError(std::string(what) + ": non-finite value in " + name + "[" +
                           std::to_string(i) + "] = " + std::to_string(t[i]));
      }
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

void check_inputs(const RetrieverParams& p, const std::vector<Vec>& embeddings) {
  if (embeddings.empty()) throw DimensionError("retriever input sequence is empty");
  for (std::size_t t = 0; t < embeddings.size(); ++t) {
    if (embeddings[t].size() != p.dim) {
      throw DimensionError("embedding " + std::to_string(t) + " has length " +
                           std::to_string(embeddings[t].size()) + ", expected " +
                           std::to_string(p.dim));
    }
  }
}

std::vector<std::vector<Vec>> make_masks(const RetrieverParams& p, std::size_t length,
                                         bool train_mode, std::uint64_t seed) {
  std::vector<std::vector<Vec>> masks(p.num_layers());
  if (!train_mode || p.dropout <= 0.0) return masks;
  const double keep_scale = 1.0 / (1.0 - p.dropout);
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    Rng rng(mix_seed(seed, l + 1));
    masks[l].assign(length, Vec(p.hidden, 0.0));
    for (auto& m : masks[l]) {
      for (double& x : m) x = rng.uniform() >= p.dropout ? keep_scale : 0.0;
    }
  }
  return masks;
}

Forward forward_impl(const RetrieverParams& p, const std::vector<Vec>& embeddings, bool train_mode,
                     std::uint64_t seed, bool use_scan) {
  check_inputs(p, embeddings);
  const std::size_t len = embeddings.size();
  auto masks = make_masks(p, len, train_mode, seed);

  Forward f;
  f.trace.embeddings = embeddings;
  std::vector<Vec> x = use_scan ? kernels::matvec_all(p.w_in, embeddings)
                                : kernels::matvec_all_serial(p.w_in, embeddings);
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    const LayerParams& layer = p.layers[l];
    const Vec lam = p.lambda(l);
    LayerTrace lt;
    std::vector<Vec> h = use_scan ? kernels::matvec_all(layer.b, x) : kernels::matvec_all_serial(layer.b, x);
    if (use_scan) {
      f.trace.scan_combines += kernels::recurrence_scan(lam, h);
    } else {
      kernels::recurrence_serial(lam, h);
    }
    std::vector<Vec> o = use_scan ? kernels::matvec_all(layer.c, h) : kernels::matvec_all_serial(layer.c, h);
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t i = 0; i < p.hidden; ++i) {
        o[t][i] += x[t][i];
        if (!masks[l].empty()) o[t][i] *= masks[l][t][i];
      }
    }
    lt.input = std::move(x);
    lt.state = std::move(h);
    lt.output = o;
    lt.mask = std::move(masks[l]);
    f.trace.layers.push_back(std::move(lt));
    x = std::move(o);
  }
  f.query = matvec(p.w_out, x.back());
  return f;
}

}  // namespace

Forward forward_sequential(const RetrieverParams& p, const std::vector<Vec>& embeddings,
                           bool train_mode, std::uint64_t seed) {
  return forward_impl(p, embeddings, train_mode, seed, false);
}

Forward forward_scan(const RetrieverParams& p, const std::vector<Vec>& embeddings,
                     bool train_mode, std::uint64_t seed) {
  return forward_impl(p, embeddings, train_mode, seed, true);
}

Vec query_at(const RetrieverParams& p, const HiddenTrace& trace, std::size_t t) {
  return matvec(p.w_out, trace.top().at(t));
}

RetrieverParams backward(const RetrieverParams& p, const HiddenTrace& trace,
                         const std::vector<Vec>& dquery) {
  const std::size_t len = trace.length();
  if (dquery.size() != len) throw DimensionError("backward: one dquery slot per position required");
  RetrieverParams g = p.zeros_like();
  const std::size_t hdim = p.hidden;

  std::vector<Vec> dy(len, Vec(hdim, 0.0));
  for (std::size_t t = 0; t < len; ++t) {
    if (dquery[t].empty()) continue;
    add_outer(g.w_out, dquery[t], trace.top()[t]);
    dy[t] = matvec_t(p.w_out, dquery[t]);
  }

  for (std::size_t li = p.num_layers(); li-- > 0;) {
    const LayerParams& layer = p.layers[li];
    const LayerTrace& lt = trace.layers[li];
    LayerParams& gl = g.layers[li];
    const Vec lam = p.lambda(li);

    std::vector<Vec> dx(len), dh(len);
    for (std::size_t t = 0; t < len; ++t) {
      Vec dout = dy[t];
      if (!lt.mask.empty()) {
        for (std::size_t i = 0; i < hdim; ++i) dout[i] *= lt.mask[t][i];
      }
      add_outer(gl.c, dout, lt.state[t]);
      dh[t] = matvec_t(layer.c, dout);
      dx[t] = std::move(dout);  // residual path
    }

    Vec dlam(hdim, 0.0);
    Vec carry(hdim, 0.0);
    for (std::size_t t = len; t-- > 0;) {
      for (std::size_t i = 0; i < hdim; ++i) carry[i] = dh[t][i] + lam[i] * carry[i];
      if (t > 0) {
        for (std::size_t i = 0; i < hdim; ++i) dlam[i] += carry[i] * lt.state[t - 1][i];
      }
      add_outer(gl.b, carry, lt.input[t]);
      const Vec back = matvec_t(layer.b, carry);
      for (std::size_t i = 0; i < hdim; ++i) dx[t][i] += back[i];
    }
    for (std::size_t i = 0; i < hdim; ++i) {
      const double th = std::tanh(layer.raw_lambda[i]);
      gl.raw_lambda[i] = dlam[i] * kLambdaMax * (1.0 - th * th);
    }
    dy = std::move(dx);
  }

  for (std::size_t t = 0; t < len; ++t) add_outer(g.w_in, dy[t], trace.embeddings[t]);
  return g;
}

std::vector<Vec> gather(const corpus::EmbeddingTable& table, const std::vector<std::string>& ids) {
  std::vector<Vec> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto v = table.vec(id);
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

ScoredPool score_corpus(std::span<const double> query, const corpus::EmbeddingTable& table,
                        const std::vector<std::string>* pool) {
  ScoredPool out;
  if (pool == nullptr) {
    out.ids = table.ids();
    out.rows.resize(table.size());
    for (std::size_t r = 0; r < table.size(); ++r) out.rows[r] = r;
    out.scores.resize(table.size());
    kernels::score_rows(table.matrix(), query, out.scores);
    out.tag = "corpus";
    return out;
  }
  out.ids = *pool;
  out.rows.reserve(pool->size());
  for (const auto& id : *pool) out.rows.push_back(table.row_of(id));
  out.scores.resize(pool->size());
  kernels::score_selected(table.matrix(), out.rows, query, out.scores);
  out.tag = "pool" + std::to_string(pool->size());
  return out;
}

namespace {

std::vector<std::size_t> ranked_indices(const ScoredPool& scores, const std::set<std::string>& exclusions,
                                        std::size_t limit) {
  std::vector<std::size_t> idx;
  idx.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!exclusions.count(scores.ids[i])) idx.push_back(i);
  }
  auto cmp = [&](std::size_t a, std::size_t b) {
    if (scores.scores[a] != scores.scores[b]) return scores.scores[a] > scores.scores[b];
    return scores.ids[a] < scores.ids[b];
  };
  limit = std::min(limit, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(limit), idx.end(), cmp);
  idx.resize(limit);
  return idx;
}

}  // namespace

CandidateSet retrieve_topk(const ScoredPool& scores, std::size_t k, const std::set<std::string>& exclusions) {
  if (k == 0) throw ConfigError("retrieve_topk: k must be positive");
  std::size_t available = 0;
  for (const auto& id : scores.ids) available += exclusions.count(id) ? 0 : 1;
  if (available < k) {
    throw LookupError("retrieve_topk: need " + std::to_string(k) + " items, only " +
                      std::to_string(available) + " available after exclusions");
  }
  CandidateSet out;
  out.pool_tag = scores.tag;
  for (std::size_t i : ranked_indices(scores, exclusions, k)) {
    out.items.push_back(scores.ids[i]);
    out.scores.push_back(scores.scores[i]);
  }
  return out;
}

ScoredPool shortlist(const ScoredPool& scores, std::size_t m, const std::set<std::string>& exclusions) {
  ScoredPool out;
  for (std::size_t i : ranked_indices(scores, exclusions, m)) {
    out.ids.push_back(scores.ids[i]);
    out.scores.push_back(scores.scores[i]);
    out.rows.push_back(scores.rows[i]);
  }
  out.tag = "top" + std::to_string(m);
  return out;
}

Vec chain_scores(const ScoredPool& pool, std::span<const double> dscores,
                 const corpus::EmbeddingTable& table) {
  if (dscores.size() != pool.size()) throw DimensionError("chain_scores: gradient/pool size mismatch");
  Vec dq(table.dim(), 0.0);
  for (std::size_t j = 0; j < pool.size(); ++j) {
    if (dscores[j] == 0.0) continue;
    auto v = table.vec_at(pool.rows[j]);
    for (std::size_t c = 0; c < dq.size(); ++c) dq[c] += dscores[j] * v[c];
  }
  return dq;
}

// ---------------------------------------------------------------------------

Adam::Adam(const RetrieverParams& like, AdamConfig cfg)
    : cfg_(cfg), m_(like.num_scalars(), 0.0), v_(like.num_scalars(), 0.0) {
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("learning rate must be positive");
}

double Adam::learning_rate() const {
  if (cfg_.warmup_steps > 0 && t_ < cfg_.warmup_steps) {
    return cfg_.lr * double(t_ + 1) / double(cfg_.warmup_steps);
  }
  if (cfg_.total_steps > cfg_.warmup_steps) {
    const double span = double(cfg_.total_steps - cfg_.warmup_steps);
    const double progress = std::min(1.0, double(t_ - cfg_.warmup_steps) / span);
    return cfg_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  return cfg_.lr;
}

void Adam::step(RetrieverParams& params, const RetrieverParams& grads) {
  check_finite(grads, "gradient");
  auto ps = params.tensors();
  auto gs = grads.tensors();
  if (ps.size() != gs.size()) throw DimensionError("Adam: params/grads layout mismatch");

  double scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [n, g] : gs) {
      for (double x : g) sq += x * x;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }

  const double lr = learning_rate();
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  std::size_t k = 0;
  for (std::size_t ti = 0; ti < ps.size(); ++ti) {
    auto& p = ps[ti].second;
    const auto& g = gs[ti].second;
    if (p.size() != g.size()) throw DimensionError("Adam: tensor " + ps[ti].first + " shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i, ++k) {
      const double gi = g[i] * scale;
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * gi;
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * gi * gi;
      p[i] -= lr * (m_[k] / bc1) / (std::sqrt(v_[k] / bc2) + cfg_.eps);
    }
  }
  ++params.version;
}

// ---------------------------------------------------------------------------

TrainSequence sequence_from_session(const std::vector<std::string>& items) {
  TrainSequence s;
  if (items.size() < 2) return s;
  s.inputs.assign(items.begin(), items.end() - 1);
  for (std::size_t t = 0; t + 1 < items.size(); ++t) s.targets.emplace_back(t, items[t + 1]);
  return s;
}

TrainSequence sequence_from_example(const std::vector<std::string>& history,
                                    const std::vector<std::string>& targets) {
  TrainSequence s;
  s.inputs = history;
  if (history.empty()) return s;
  for (const auto& t : targets) s.targets.emplace_back(history.size() - 1, t);
  return s;
}

namespace {

struct SequenceWork {
  std::vector<Vec> embeddings;
  std::vector<std::pair<std::size_t, std::size_t>> targets;  // (position, row)
  double loss = 0.0;
  RetrieverParams grad;
};

}  // namespace

LossAndGrad pretrain_loss(const RetrieverParams& p, const std::vector<TrainSequence>& batch,
                          const corpus::EmbeddingTable& table, const PretrainConfig& cfg,
                          std::uint64_t seed) {
  if (table.dim() != p.dim) throw DimensionError("embedding table dim does not match retriever");
  std::vector<SequenceWork> work(batch.size());
  std::vector<std::size_t> batch_rows;
  std::size_t pairs = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& seq = batch[b];
    if (seq.inputs.empty() || seq.targets.empty()) {
      throw DimensionError("pretrain example " + std::to_string(b) + " needs history and a target");
    }
    work[b].embeddings = gather(table, seq.inputs);
    for (const auto& [pos, id] : seq.targets) {
      if (pos >= seq.inputs.size()) throw DimensionError("target position past end of sequence");
      const std::size_t row = table.row_of(id);
      work[b].targets.emplace_back(pos, row);
      batch_rows.push_back(row);
      ++pairs;
    }
  }
  std::sort(batch_rows.begin(), batch_rows.end());
  batch_rows.erase(std::unique(batch_rows.begin(), batch_rows.end()), batch_rows.end());
  if (pairs == 0) throw DimensionError("empty pretraining batch");
  const double inv_pairs = 1.0 / double(pairs);
  const std::size_t n_items = table.size();

  const auto nb = static_cast<std::ptrdiff_t>(batch.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    SequenceWork& w = work[b];
    const std::uint64_t seq_seed = mix_seed(seed, static_cast<std::uint64_t>(b));
    Forward f = forward_scan(p, w.embeddings, cfg.train_mode, seq_seed);
    Rng rng(mix_seed(seq_seed, 0x6e6567ULL));

    std::vector<Vec> dq(w.embeddings.size());
    std::vector<std::size_t> cand;
    std::unordered_set<std::size_t> seen;
    for (const auto& [pos, target] : w.targets) {
      cand.clear();
      seen.clear();
      cand.push_back(target);
      seen.insert(target);
      if (n_items > 1) {
        for (std::size_t s = 0; s < cfg.negatives_per_step; ++s) {
          std::size_t r;
          do {
            r = rng.below(n_items);
          } while (r == target);
          if (seen.insert(r).second) cand.push_back(r);
        }
      }
      if (cfg.in_batch_negatives) {
        for (std::size_t r : batch_rows) {
          if (seen.insert(r).second) cand.push_back(r);
        }
      }

      const Vec q = query_at(p, f.trace, pos);
      Vec logits(cand.size());
      double mx = -INFINITY;
      for (std::size_t c = 0; c < cand.size(); ++c) {
        logits[c] = dot(q, table.vec_at(cand[c]));
        mx = std::max(mx, logits[c]);
      }
      double z = 0.0;
      for (double l : logits) z += std::exp(l - mx);
      const double lse = mx + std::log(z);
      w.loss += (lse - logits[0]) * inv_pairs;

      Vec& d = dq[pos];
      if (d.empty()) d.assign(p.dim, 0.0);
      for (std::size_t c = 0; c < cand.size(); ++c) {
        const double coef = (std::exp(logits[c] - lse) - (c == 0 ? 1.0 : 0.0)) * inv_pairs;
        auto v = table.vec_at(cand[c]);
        for (std::size_t k = 0; k < p.dim; ++k) d[k] += coef * v[k];
      }
    }
    w.grad = backward(p, f.trace, dq);
  }

  LossAndGrad out;
  out.grad = p.zeros_like();
  auto acc = out.grad.tensors();
  for (auto& w : work) {
    out.loss += w.loss;
    auto g = w.grad.tensors();
    for (std::size_t t = 0; t < acc.size(); ++t) {
      for (std::size_t i = 0; i < acc[t].second.size(); ++i) acc[t].second[i] += g[t].second[i];
    }
  }
  return out;
}

double pretrain_step(RetrieverParams& p, Adam& opt, const std::vector<TrainSequence>& batch,
                     const corpus::EmbeddingTable& table, const PretrainConfig& cfg,
                     std::uint64_t seed) {
  LossAndGrad lg = pretrain_loss(p, batch, table, cfg, seed);
  if (!std::isfinite(lg.loss)) {
    throw NumericError("pretraining loss is non-finite (" + std::to_string(lg.loss) + ") at step " +
                       std::to_string(opt.steps_taken()) + ", batch of " + std::to_string(batch.size()));
  }
  opt.step(p, lg.grad);
  return lg.loss;
}

// ---------------------------------------------------------------------------

std::string checkpoint_to_json(const Checkpoint& ck) {
  const RetrieverParams& p = ck.params;
  json j;
  j["format"] = "rar-retriever";
  j["format_version"] = 1;
  j["dim"] = p.dim;
  j["hidden"] = p.hidden;
  j["num_layers"] = p.num_layers();
  j["dropout"] = p.dropout;
  j["lambda_max"] = kLambdaMax;
  j["version"] = p.version;
  j["step"] = ck.step;
  json tensors = json::object();
  for (const auto& [name, t] : p.tensors()) tensors[name] = std::vector<double>(t.begin(), t.end());
  j["tensors"] = std::move(tensors);
  if (ck.optimizer) {
    const Adam& a = *ck.optimizer;
    const AdamConfig& c = a.config();
    j["optimizer"] = {{"kind", "adam"},
                      {"lr", c.lr},
                      {"beta1", c.beta1},
                      {"beta2", c.beta2},
                      {"eps", c.eps},
                      {"warmup_steps", c.warmup_steps},
                      {"total_steps", c.total_steps},
                      {"clip_norm", c.clip_norm},
                      {"t", a.steps_taken()},
                      {"m", a.first_moment()},
                      {"v", a.second_moment()}};
  } else {
    j["optimizer"] = nullptr;
  }
  return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  Checkpoint ck;
  try {
    json j = json::parse(text);
    if (j.at("format") != "rar-retriever") throw Error("not a retriever checkpoint");
    if (j.at("format_version").get<int>() != 1) throw Error("unsupported checkpoint version");
    RetrieverParams& p = ck.params;
    p.dim = j.at("dim").get<std::size_t>();
    p.hidden = j.at("hidden").get<std::size_t>();
    p.dropout = j.at("dropout").get<double>();
    const auto layers = j.at("num_layers").get<std::size_t>();
    p.w_in = Matrix(p.hidden, p.dim);
    p.w_out = Matrix(p.dim, p.hidden);
    for (std::size_t l = 0; l < layers; ++l) {
      p.layers.push_back({Vec(p.hidden, 0.0), Matrix(p.hidden, p.hidden), Matrix(p.hidden, p.hidden)});
    }
    p.version = j.at("version").get<std::uint64_t>();
    ck.step = j.at("step").get<std::size_t>();
    const json& tensors = j.at("tensors");
    for (auto& [name, span] : p.tensors()) {
      const auto values = tensors.at(name).get<std::vector<double>>();
      if (values.size() != span.size()) throw DimensionError("checkpoint tensor " + name + " has wrong size");
      std::copy(values.begin(), values.end(), span.begin());
    }
    const json& o = j.at("optimizer");
    if (!o.is_null()) {
      AdamConfig c;
      c.lr = o.at("lr").get<double>();
      c.beta1 = o.at("beta1").get<double>();
      c.beta2 = o.at("beta2").get<double>();
      c.eps = o.at("eps").get<double>();
      c.warmup_steps = o.at("warmup_steps").get<std::size_t>();
      c.total_steps = o.at("total_steps").get<std::size_t>();
      c.clip_norm = o.at("clip_norm").get<double>();
      Adam a(p, c);
      a.set_steps_taken(o.at("t").get<std::size_t>());
      a.first_moment() = o.at("m").get<Vec>();
      a.second_moment() = o.at("v").get<Vec>();
      if (a.first_moment().size() != p.num_scalars() || a.second_moment().size() != p.num_scalars()) {
        throw DimensionError("checkpoint optimizer state has wrong size");
      }
      ck.optimizer = std::move(a);
    }
  } catch (const json::exception& ex) {
    throw Error(std::string("malformed checkpoint: ") + ex.what());
  }
  check_finite(ck.params, "checkpoint");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  out << checkpoint_to_json(ck) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace rar::retriever
