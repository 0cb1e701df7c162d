#include "rar/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "rar/common.hpp"

namespace rar {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> d{
      {"seed", "7"},
      {"paths.workdir", "run"},
      {"paths.sources", ""},
      {"paths.corpus", "corpus.jsonl"},
      {"paths.drop_report", "drop_report.json"},
      {"paths.embeddings", "embeddings.jsonl"},
      {"paths.conversations", "conversations.jsonl"},
      {"paths.linked", "linked.jsonl"},
      {"paths.interactions", "interactions.csv"},
      {"paths.sessions", "sessions.jsonl"},
      {"paths.train", "train.jsonl"},
      {"paths.val", "val.jsonl"},
      {"paths.test", "test.jsonl"},
      {"paths.preprocess_report", "preprocess_report.json"},
      {"paths.pretrain_checkpoint", "pretrained.json"},
      {"paths.checkpoint", "rl.json"},
      {"paths.sft_checkpoint", "sft.json"},
      {"paths.sft_log", "sft_log.jsonl"},
      {"paths.train_log", "train_log.jsonl"},
      {"paths.pretrain_log", "pretrain_log.jsonl"},
      {"paths.report", "report.json"},
      {"ingest.conflict", "prefer_most_fields"},
      {"embed.provider", "hash"},
      {"embed.dim", "256"},
      {"embed.salt", "0"},
      {"embed.model", ""},
      {"data.max_history", "64"},
      {"data.session_gap", "1800"},
      {"data.subsample_cap", "2500"},
      {"data.split", "0.8,0.1,0.1"},
      {"retriever.hidden", "64"},
      {"retriever.layers", "2"},
      {"retriever.dropout", "0.1"},
      {"pretrain.steps", "600"},
      {"pretrain.batch", "32"},
      {"pretrain.lr", "0.003"},
      {"pretrain.warmup", "100"},
      {"pretrain.negatives", "100"},
      {"pretrain.use_sessions", "true"},
      {"pretrain.use_examples", "true"},
      {"train.algorithm", "dpo"},
      {"train.beta", "0.05"},
      {"train.gamma", "0"},
      {"train.group_size", "0"},
      {"train.k", "25"},
      {"train.pool", "200"},
      {"train.temperature", "1"},
      {"train.lr", "0.0001"},
      {"train.warmup", "100"},
      {"train.clip_norm", "0"},
      {"train.steps", "500"},
      {"train.eval_every", "200"},
      {"train.max_resamples", "8"},
      {"train.use_reference", "false"},
      {"train.kl_coeff", "0"},
      {"train.nll_weight", "1"},
      {"train.dropout", "true"},
      {"generator.kind", "mock"},
      {"generator.noise", "0.1"},
      {"generator.base_url", ""},
      {"generator.model", ""},
      {"generator.api_key_env", ""},
      {"generator.auth_header", "Authorization"},
      {"generator.timeout_ms", "60000"},
      {"generator.max_retries", "3"},
      {"generator.max_concurrency", "4"},
      {"generator.thinking_passthrough", ""},
      {"eval.k", "25"},
      {"eval.ks", "5,10"},
      {"eval.buckets", "5,20"},
      {"world.items", "1000"},
      {"world.topics", "12"},
      {"world.examples", "2500"},
      {"world.session_users", "600"},
  };
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!defaults().count(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(serialize())));
  return buf;
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  const std::string& s = str(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + s + "'");
}

long RunConfig::integer(const std::string& key) const {
  const std::string& s = str(key);
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected an integer, got '" + s + "'");
}

std::size_t RunConfig::size(const std::string& key) const {
  const long v = integer(key);
  if (v < 0) throw ConfigError(key + ": must be non-negative");
  return std::size_t(v);
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(str(key));
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::vector<std::size_t> RunConfig::size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& s : list(key)) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a list of non-negative integers");
    }
  }
  return out;
}

std::filesystem::path RunConfig::path(const std::string& name) const {
  std::filesystem::path p = str("paths." + name);
  if (p.empty() || p.is_absolute() || name == "workdir") return p;
  return std::filesystem::path(str("paths.workdir")) / p;
}

}  // namespace rar
