#include "rar/commands.hpp"

#include <chrono>
#include <fstream>
#include <set>

#include <json.hpp>

#include "rar/datasets.hpp"
#include "rar/synthetic_world.hpp"

namespace rar::cmd {

using nlohmann::json;
namespace fs = std::filesystem;
namespace rt = retriever;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream o(path);
  if (!o) throw Error("cannot write " + path.string());
  o << text;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path)) throw Error(std::string(what) + " not found: " + path.string());
}

gen::GeneratorEndpoint endpoint(const RunConfig& cfg) {
  gen::GeneratorEndpoint ep;
  ep.base_url = cfg.str("generator.base_url");
  ep.model_name = cfg.str("generator.model");
  ep.api_key_env = cfg.str("generator.api_key_env");
  ep.auth_header = cfg.str("generator.auth_header");
  ep.timeout_ms = int(cfg.integer("generator.timeout_ms"));
  ep.max_retries = int(cfg.integer("generator.max_retries"));
  ep.max_concurrency = cfg.size("generator.max_concurrency");
  ep.thinking_passthrough = cfg.str("generator.thinking_passthrough");
  ep.validate();
  return ep;
}

std::array<double, 3> split_ratios(const RunConfig& cfg) {
  const auto parts = cfg.list("data.split");
  if (parts.size() != 3) throw ConfigError("data.split needs three ratios");
  std::array<double, 3> r{};
  for (int i = 0; i < 3; ++i) {
    try {
      r[i] = std::stod(parts[i]);
    } catch (const std::exception&) {
      throw ConfigError("data.split: bad ratio '" + parts[i] + "'");
    }
  }
  return r;
}

struct Loaded {
  corpus::CorpusIndex index;
  corpus::EmbeddingTable table;
};

Loaded load_corpus_and_table(const RunConfig& cfg) {
  require_file(cfg.path("corpus"), "corpus");
  require_file(cfg.path("embeddings"), "embeddings");
  Loaded l{corpus::read_corpus(cfg.path("corpus")), corpus::read_embeddings(cfg.path("embeddings"))};
  l.table.check_matches(l.index);
  return l;
}

}  // namespace

std::unique_ptr<corpus::EmbeddingProvider> make_provider(const RunConfig& cfg) {
  const std::string& kind = cfg.str("embed.provider");
  if (kind == "hash") {
    return std::make_unique<corpus::HashEmbeddingProvider>(cfg.size("embed.dim"),
                                                           std::uint64_t(cfg.integer("embed.salt")));
  }
  if (kind == "http") {
    gen::GeneratorEndpoint ep = endpoint(cfg);
    if (!cfg.str("embed.model").empty()) ep.model_name = cfg.str("embed.model");
    return std::make_unique<gen::HttpEmbeddingProvider>(ep, cfg.size("embed.dim"));
  }
  throw ConfigError("embed.provider must be hash or http, got '" + kind + "'");
}

std::unique_ptr<gen::Generator> make_generator(const RunConfig& cfg, const corpus::EmbeddingTable& table,
                                               const corpus::EmbeddingProvider& provider) {
  const std::string& kind = cfg.str("generator.kind");
  if (kind == "mock") {
    return std::make_unique<gen::MockGenerator>(table, provider, cfg.real("generator.noise"),
                                                stream_seed(std::uint64_t(cfg.integer("seed")), "mock-noise"));
  }
  if (kind == "identity") return std::make_unique<gen::IdentityGenerator>();
  if (kind == "http") return std::make_unique<gen::HttpGenerator>(endpoint(cfg));
  throw ConfigError("generator.kind must be mock, identity or http, got '" + kind + "'");
}

eval::EvalConfig eval_config(const RunConfig& cfg) {
  eval::EvalConfig e;
  e.retrieval_k = cfg.size("eval.k");
  e.ks = cfg.size_list("eval.ks");
  e.bucket_thresholds = cfg.size_list("eval.buckets");
  e.seed = std::uint64_t(cfg.integer("seed"));
  e.config_hash = cfg.hash();
  if (e.ks.empty()) throw ConfigError("eval.ks must not be empty");
  return e;
}

pref::TrainConfig train_config(const RunConfig& cfg) {
  pref::TrainConfig t;
  t.algorithm = pref::parse_algorithm(cfg.str("train.algorithm"));
  t.beta = cfg.real("train.beta");
  t.gamma = cfg.real("train.gamma");
  t.group_size = cfg.size("train.group_size");
  if (t.group_size == 0) t.group_size = t.algorithm == pref::Algorithm::kGrpo ? 8 : 2;
  t.k = cfg.size("train.k");
  t.pool_size = cfg.size("train.pool");
  t.temperature = cfg.real("train.temperature");
  t.max_resamples = cfg.size("train.max_resamples");
  t.use_reference = cfg.flag("train.use_reference");
  t.kl_coeff = cfg.real("train.kl_coeff");
  t.nll_weight = cfg.real("train.nll_weight");
  t.steps = cfg.size("train.steps");
  t.eval_every = cfg.size("train.eval_every");
  t.train_mode = cfg.flag("train.dropout");
  t.adam.lr = cfg.real("train.lr");
  t.adam.warmup_steps = cfg.size("train.warmup");
  t.adam.clip_norm = cfg.real("train.clip_norm");
  t.adam.total_steps = t.steps;
  t.eval = eval_config(cfg);
  t.seed = std::uint64_t(cfg.integer("seed"));
  if (!(t.adam.lr > 0.0)) throw ConfigError("train.lr must be positive");
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------

corpus::DropReport ingest(const RunConfig& cfg, std::ostream& out) {
  std::vector<fs::path> sources;
  for (const auto& s : cfg.list("paths.sources")) sources.emplace_back(s);
  if (sources.empty()) throw ConfigError("paths.sources lists no source files");
  auto result = corpus::ingest_sources(sources, corpus::parse_conflict_policy(cfg.str("ingest.conflict")));
  ensure_parent(cfg.path("corpus"));
  corpus::write_corpus(result.index, cfg.path("corpus"));
  write_text(cfg.path("drop_report"), corpus::drop_report_json(result.report) + "\n");
  out << "ingest: " << result.report.records_read << " records, " << result.report.kept << " kept, "
      << result.report.merged_duplicates << " merged, " << result.report.total_dropped() << " dropped\n";
  return result.report;
}

void embed(const RunConfig& cfg, std::ostream& out) {
  require_file(cfg.path("corpus"), "corpus");
  const auto index = corpus::read_corpus(cfg.path("corpus"));
  const auto provider = make_provider(cfg);
  const auto table = corpus::build_embeddings(index, *provider);
  ensure_parent(cfg.path("embeddings"));
  corpus::write_embeddings(table, cfg.path("embeddings"));
  out << "embed: " << table.size() << " vectors, dim " << table.dim() << ", " << table.provider_tag() << "\n";
}

std::string PreprocessReport::to_json() const {
  return json{{"conversations", conversations},
              {"unresolved_mentions", unresolved_mentions},
              {"recommender_turns", split.recommender_turns},
              {"turns_without_items", split.no_items},
              {"turns_all_repeated", split.all_repeated},
              {"examples", examples},
              {"dropped_no_history", dropped_no_history},
              {"subsampled_to", subsampled_to},
              {"train", train},
              {"val", val},
              {"test", test},
              {"sessions", sessions},
              {"session_items_unknown", session_items_unknown}}
      .dump(2);
}

PreprocessReport preprocess(const RunConfig& cfg, std::ostream& out) {
  require_file(cfg.path("corpus"), "corpus");
  require_file(cfg.path("conversations"), "conversations");
  const auto index = corpus::read_corpus(cfg.path("corpus"));
  const std::uint64_t root = std::uint64_t(cfg.integer("seed"));
  PreprocessReport rep;

  std::vector<Conversation> linked;
  for (auto& c : data::read_conversations(cfg.path("conversations"))) {
    linked.push_back(corpus::link_mentions(std::move(c), index));
    rep.unresolved_mentions += linked.back().unresolved.size();
  }
  rep.conversations = linked.size();
  data::write_conversations(linked, cfg.path("linked"));

  std::vector<data::TrainingExample> examples;
  const std::size_t max_history = cfg.size("data.max_history");
  for (const auto& c : linked) {
    for (auto& ex : data::split_conversation(c, max_history, &rep.split)) {
      if (ex.history.empty()) {
        ++rep.dropped_no_history;
        continue;
      }
      examples.push_back(std::move(ex));
    }
  }
  rep.examples = examples.size();
  const std::uint64_t split_seed = stream_seed(root, "split");
  examples = data::subsample(std::move(examples), cfg.size("data.subsample_cap"), mix_seed(split_seed, 1));
  rep.subsampled_to = examples.size();
  auto splits = data::split_dataset(std::move(examples), split_ratios(cfg), split_seed);
  rep.train = splits.train.size();
  rep.val = splits.val.size();
  rep.test = splits.test.size();
  data::write_examples(splits.train, cfg.path("train"));
  data::write_examples(splits.val, cfg.path("val"));
  data::write_examples(splits.test, cfg.path("test"));

  if (fs::exists(cfg.path("interactions"))) {
    auto inter = data::read_interactions(cfg.path("interactions"));
    std::vector<data::Interaction> known;
    for (auto& x : inter) {
      if (index.contains(x.item)) {
        known.push_back(std::move(x));
      } else {
        ++rep.session_items_unknown;
      }
    }
    const auto sessions = data::sessionize(std::move(known), cfg.integer("data.session_gap"));
    rep.sessions = sessions.size();
    data::write_sessions(sessions, cfg.path("sessions"));
  }
  write_text(cfg.path("preprocess_report"), rep.to_json() + "\n");
  out << "preprocess: " << rep.examples << " examples (" << rep.dropped_no_history << " without history dropped), split "
      << rep.train << "/" << rep.val << "/" << rep.test << ", " << rep.sessions << " sessions\n";
  return rep;
}

PretrainSummary pretrain(const RunConfig& cfg, bool resume, std::size_t stop_after, std::ostream& out) {
  const Loaded l = load_corpus_and_table(cfg);
  const std::uint64_t root = std::uint64_t(cfg.integer("seed"));

  std::vector<rt::TrainSequence> seqs;
  if (cfg.flag("pretrain.use_sessions") && fs::exists(cfg.path("sessions"))) {
    for (const auto& s : data::read_sessions(cfg.path("sessions"))) seqs.push_back(rt::sequence_from_session(s.items));
  }
  if (cfg.flag("pretrain.use_examples")) {
    require_file(cfg.path("train"), "training split");
    for (const auto& ex : data::read_examples(cfg.path("train"))) {
      if (!ex.history.empty()) seqs.push_back(rt::sequence_from_example(ex.history, ex.targets));
    }
  }
  if (seqs.empty()) throw Error("pretrain: no training sequences");

  const std::size_t steps = cfg.size("pretrain.steps");
  const std::size_t batch = std::min(cfg.size("pretrain.batch"), seqs.size());
  if (batch == 0) throw ConfigError("pretrain.batch must be positive");
  rt::AdamConfig acfg;
  acfg.lr = cfg.real("pretrain.lr");
  acfg.warmup_steps = cfg.size("pretrain.warmup");
  acfg.total_steps = steps;
  if (!(acfg.lr > 0.0) || !std::isfinite(acfg.lr)) throw ConfigError("pretrain.lr must be positive");
  rt::PretrainConfig pcfg;
  pcfg.negatives_per_step = cfg.size("pretrain.negatives");

  rt::Checkpoint ck;
  if (resume) {
    require_file(cfg.path("pretrain_checkpoint"), "pretrain checkpoint");
    ck = rt::load_checkpoint(cfg.path("pretrain_checkpoint"));
    if (!ck.optimizer) throw Error("pretrain checkpoint has no optimizer state to resume from");
  } else {
    ck.params = rt::init_params(l.table.dim(), cfg.size("retriever.hidden"), cfg.size("retriever.layers"),
                                cfg.real("retriever.dropout"), mix_seed(root, 0x1417));
    ck.optimizer = rt::Adam(ck.params, acfg);
  }

  // Batch composition is a pure function of the step so a resumed run sees
  // the same batches.
  const std::uint64_t order_seed = mix_seed(stream_seed(root, "split"), 0x9e7);
  const std::uint64_t dropout_seed = stream_seed(root, "dropout");
  auto epoch_order = [&](std::size_t epoch) {
    std::vector<std::size_t> idx(seqs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(mix_seed(order_seed, epoch));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
  };

  std::ofstream log;
  ensure_parent(cfg.path("pretrain_log"));
  log.open(cfg.path("pretrain_log"), resume ? std::ios::app : std::ios::trunc);
  PretrainSummary sum;
  const std::size_t end = stop_after ? std::min(stop_after, steps) : steps;
  std::size_t cached_epoch = SIZE_MAX;
  std::vector<std::size_t> order;
  for (std::size_t step = ck.step; step < end; ++step) {
    std::vector<rt::TrainSequence> b;
    for (std::size_t j = 0; j < batch; ++j) {
      const std::size_t flat = step * batch + j;
      const std::size_t epoch = flat / seqs.size();
      if (epoch != cached_epoch) {
        order = epoch_order(epoch);
        cached_epoch = epoch;
      }
      b.push_back(seqs[order[flat % seqs.size()]]);
    }
    const double loss = rt::pretrain_step(ck.params, *ck.optimizer, b, l.table, pcfg, mix_seed(dropout_seed, step));
    if (sum.steps == 0) sum.first_loss = loss;
    sum.last_loss = loss;
    ++sum.steps;
    ck.step = step + 1;
    log << json{{"step", ck.step}, {"loss", loss}}.dump() << '\n';
  }
  ensure_parent(cfg.path("pretrain_checkpoint"));
  rt::save_checkpoint(ck, cfg.path("pretrain_checkpoint"));
  out << "pretrain: " << sum.steps << " steps, loss " << sum.first_loss << " -> " << sum.last_loss << "\n";
  return sum;
}

pref::TrainResult train(const RunConfig& cfg, std::ostream& out) {
  const pref::TrainConfig tcfg = train_config(cfg);
  const Loaded l = load_corpus_and_table(cfg);
  require_file(cfg.path("pretrain_checkpoint"), "pretrained checkpoint");
  require_file(cfg.path("train"), "training split");
  rt::Checkpoint start = rt::load_checkpoint(cfg.path("pretrain_checkpoint"));
  const auto train_set = data::read_examples(cfg.path("train"));
  std::vector<data::TrainingExample> val;
  if (fs::exists(cfg.path("val"))) val = data::read_examples(cfg.path("val"));

  const auto provider = make_provider(cfg);
  const auto generator = make_generator(cfg, l.table, *provider);

  const bool sft = tcfg.algorithm == pref::Algorithm::kSft;
  const fs::path ck_path = cfg.path(sft ? "sft_checkpoint" : "checkpoint");
  ensure_parent(cfg.path(sft ? "sft_log" : "train_log"));
  std::ofstream log(cfg.path(sft ? "sft_log" : "train_log"));
  pref::TrainResult res = pref::train_rl(train_set, std::move(start.params), l.table, l.index, *generator, tcfg,
                                         val.empty() ? nullptr : &val, &log);

  rt::Checkpoint best;
  best.params = res.best_params;
  best.step = res.best_step;
  ensure_parent(ck_path);
  rt::save_checkpoint(best, ck_path);
  fs::path meta = ck_path;
  meta += ".meta.json";
  json vj = json::array();
  for (const auto& v : res.validation) vj.push_back({{"step", v.step}, {"ndcg@10", v.ndcg10}});
  write_text(meta, json{{"config_hash", cfg.hash()},
                        {"best_val_ndcg10", res.best_val_ndcg10},
                        {"step", res.best_step},
                        {"algorithm", pref::algorithm_name(tcfg.algorithm)},
                        {"abstained", res.abstained},
                        {"skipped", res.skipped},
                        {"validation", vj}}
                       .dump(2) +
                       "\n");
  const std::size_t n = res.log.size();
  out << "train(" << pref::algorithm_name(tcfg.algorithm) << "): " << n << " steps, mean reward "
      << res.mean_reward(0, std::min<std::size_t>(100, n)) << " (first 100) -> "
      << res.mean_reward(n > 100 ? n - 100 : 0, n) << " (last 100), " << res.abstained << " abstained, "
      << res.skipped << " skipped, best val NDCG@10 " << res.best_val_ndcg10 << " at step " << res.best_step << "\n";
  return res;
}

eval::EvalReport evaluate(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& report_path,
                          std::ostream& out) {
  const Loaded l = load_corpus_and_table(cfg);
  require_file(checkpoint, "checkpoint");
  require_file(cfg.path("test"), "test split");
  const auto ck = rt::load_checkpoint(checkpoint);
  const auto test = data::read_examples(cfg.path("test"));
  std::unordered_map<std::string, std::size_t> counts;
  if (fs::exists(cfg.path("train"))) counts = eval::item_counts(data::read_examples(cfg.path("train")));

  const auto provider = make_provider(cfg);
  const auto generator = make_generator(cfg, l.table, *provider);
  const auto report = eval::evaluate(ck.params, l.table, l.index, *generator, test, eval_config(cfg), &counts);
  write_text(report_path, report.to_json() + "\n");
  out << report.to_table();
  return report;
}

std::string SimulateSummary::to_json() const {
  return json{{"sft_ndcg@10", sft.metrics.at("ndcg@10")},
              {"rl_ndcg@10", rl.metrics.at("ndcg@10")},
              {"reward_first100", reward_first100},
              {"reward_last100", reward_last100}}
      .dump(2);
}

SimulateSummary simulate(const RunConfig& base, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = base;
  const fs::path work = cfg.path("workdir");
  fs::create_directories(work);

  world::WorldConfig wc;
  wc.n_items = cfg.size("world.items");
  wc.n_topics = cfg.size("world.topics");
  wc.n_examples = cfg.size("world.examples");
  wc.session_users = cfg.size("world.session_users");
  wc.seed = mix_seed(std::uint64_t(cfg.integer("seed")), 0xa11);
  const world::World w = world::make_world(wc);

  const fs::path sources = work / "sources.jsonl";
  {
    std::ofstream o(sources);
    for (const auto& e : w.source_records) o << corpus::entry_to_json(e) << '\n';
  }
  cfg.set("paths.sources", sources.string());
  data::write_conversations(w.conversations, cfg.path("conversations"));
  {
    std::ofstream o(cfg.path("interactions"));
    o << "user,item,timestamp\n";
    for (const auto& x : w.interactions) o << x.user << ',' << x.item << ',' << x.timestamp << '\n';
  }
  out << "simulate: world with " << w.items.size() << " items, " << w.conversations.size() << " conversations, "
      << w.interactions.size() << " interactions\n";

  ingest(cfg, out);
  embed(cfg, out);
  preprocess(cfg, out);
  pretrain(cfg, false, 0, out);

  SimulateSummary s;
  RunConfig sft_cfg = cfg;
  sft_cfg.set("train.algorithm", "sft");
  train(sft_cfg, out);
  out << "SFT checkpoint:\n";
  s.sft = evaluate(cfg, cfg.path("sft_checkpoint"), work / "report_sft.json", out);
  const auto res = train(cfg, out);
  const std::size_t n = res.log.size();
  s.reward_first100 = res.mean_reward(0, std::min<std::size_t>(100, n));
  s.reward_last100 = res.mean_reward(n > 100 ? n - 100 : 0, n);
  out << "RL checkpoint:\n";
  s.rl = evaluate(cfg, cfg.path("checkpoint"), cfg.path("report"), out);
  s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(work / "simulate_summary.json", s.to_json() + "\n");
  return s;
}

}  // namespace rar::cmd
