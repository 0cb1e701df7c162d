#include "rar/generator_bridge.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace rar::gen {

using nlohmann::json;

const char* const kInstructionTemplate =
    "You are an expert in movie recommendations. Analyze the provided conversation history to identify "
    "the user's preferences, such as genres and actors. Then, rank the {k} candidate movies by how well "
    "they match these preferences. Return your answer as a numbered list with each movie on a new line "
    "in the format: '<rank>. <movie name>'. Do not include any additional commentary, formatting or "
    "chattiness.";

std::string PromptSpec::text() const {
  std::string out = instruction;
  out += "\n\n";
  for (const auto& c : candidates) {
    out += c.block;
    out += "\n\n";
  }
  out += "Conversation history:\n\n";
  for (const auto& turn : context) {
    out += turn;
    out += '\n';
  }
  return out;
}

PromptSpec build_prompt(const std::vector<std::string>& context,
                        const std::vector<const corpus::MovieEntry*>& candidates, std::size_t k) {
  if (candidates.empty()) throw Error("build_prompt: no candidates");
  PromptSpec p;
  p.k = k;
  p.instruction = kInstructionTemplate;
  const std::string slot = "{k}";
  p.instruction.replace(p.instruction.find(slot), slot.size(), std::to_string(k));
  p.context = context;
  for (const auto* e : candidates) p.candidates.push_back({e->id, e->title, corpus::serialize_metadata(*e)});
  return p;
}

PromptSpec build_prompt(const std::vector<std::string>& context, const std::vector<std::string>& candidate_ids,
                        const corpus::CorpusIndex& index, std::size_t k) {
  std::vector<const corpus::MovieEntry*> entries;
  entries.reserve(candidate_ids.size());
  for (const auto& id : candidate_ids) entries.push_back(&index.at(id));
  return build_prompt(context, entries, k);
}

// ---------------------------------------------------------------------------

namespace {

struct RankedLine {
  long rank;
  std::size_t order;
  std::string id;
};

std::string strip_emphasis(std::string s) {
  // Drop markdown emphasis and surrounding quotes around a title.
  s.erase(std::remove(s.begin(), s.end(), '*'), s.end());
  auto b = s.find_first_not_of(" \t\"'`_");
  auto e = s.find_last_not_of(" \t\"'`_\r");
  if (b == std::string::npos) return {};
  return s.substr(b, e - b + 1);
}

}  // namespace

RankedOutput parse_ranking(const std::string& raw_text, const std::vector<PromptCandidate>& candidates) {
  static const std::regex kLine(R"(^\s*(?:[-*+•]\s+)?(?:\*\*)?(\d+)\s*[.)](?:\*\*)?\s+(.*\S)\s*$)");

  std::vector<std::string> norms;
  std::vector<std::optional<int>> years;
  norms.reserve(candidates.size());
  for (const auto& c : candidates) {
    norms.push_back(corpus::normalize_title(c.title));
    years.push_back(corpus::split_year_suffix(c.title).year);
  }

  RankedOutput out;
  out.raw_text = raw_text;
  std::vector<RankedLine> lines;
  std::istringstream in(raw_text);
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (!std::regex_match(line, m, kLine)) continue;
    ++out.emitted_lines;
    const long rank = std::stol(m[1].str());
    const std::string title = strip_emphasis(m[2].str());
    const auto parts = corpus::split_year_suffix(title);
    const std::string norm = corpus::normalize_title(parts.title);

    std::optional<std::size_t> hit;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (norms[i] != norm) continue;
      if (!hit) hit = i;
      // Several candidates share a title: the stated year decides.
      if (parts.year && years[i] == parts.year) {
        hit = i;
        break;
      }
    }
    double best = hit ? 1.0 : 0.0;
    if (!hit) {
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double s = corpus::fuzzy_similarity(norm, norms[i]);
        if (s > best) {
          best = s;
          if (s >= corpus::kFuzzyThreshold) hit = i;
        }
      }
    }
    if (!hit) {
      out.unmatched.push_back({line, best});
      continue;
    }
    lines.push_back({rank, lines.size(), candidates[*hit].id});
  }

  std::stable_sort(lines.begin(), lines.end(), [](const RankedLine& a, const RankedLine& b) { return a.rank < b.rank; });
  for (const auto& l : lines) {
    if (std::find(out.items.begin(), out.items.end(), l.id) == out.items.end()) out.items.push_back(l.id);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string mock_generate(const std::vector<MockCandidate>& candidates, std::span<const double> context_vector,
                          double noise_scale, std::uint64_t seed) {
  struct Scored {
    double score;
    std::size_t index;
  };
  std::vector<Scored> scored;
  scored.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double s = dot(context_vector, candidates[i].embedding);
    if (noise_scale > 0.0) {
      Rng rng(mix_seed(seed, candidates[i].key));
      s += noise_scale * rng.normal();
    }
    scored.push_back({s, i});
  }
  std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::string out;
  for (std::size_t r = 0; r < scored.size(); ++r) {
    out += std::to_string(r + 1) + ". " + candidates[scored[r].index].title + "\n";
  }
  return out;
}

MockGenerator::MockGenerator(const corpus::EmbeddingTable& table, const corpus::EmbeddingProvider& provider,
                             double noise_scale, std::uint64_t seed)
    : table_(table), provider_(provider), noise_scale_(noise_scale), seed_(seed) {
  if (noise_scale < 0.0) throw ConfigError("noise_scale must be non-negative");
  if (provider.dim() != table.dim()) throw DimensionError("mock generator: provider/table dim mismatch");
}

Vec MockGenerator::context_vector(const std::vector<std::string>& context) const {
  std::string joined;
  for (const auto& t : context) {
    joined += t;
    joined += '\n';
  }
  return provider_.embed(joined);
}

std::string MockGenerator::generate(const PromptSpec& prompt) {
  std::string joined;
  for (const auto& t : prompt.context) joined += t + '\n';
  const Vec ctx = context_vector(prompt.context);
  std::vector<MockCandidate> cands;
  cands.reserve(prompt.candidates.size());
  for (const auto& c : prompt.candidates) cands.push_back({c.title, table_.vec(c.id), hash_string(c.id)});
  // Noise depends on (conversation, candidate) only, never on set composition.
  return mock_generate(cands, ctx, noise_scale_, mix_seed(seed_, hash_string(joined)));
}

std::string IdentityGenerator::generate(const PromptSpec& prompt) {
  std::string out;
  for (std::size_t i = 0; i < prompt.candidates.size(); ++i) {
    out += std::to_string(i + 1) + ". " + prompt.candidates[i].title + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

void GeneratorEndpoint::validate() const {
  if (base_url.empty()) throw ConfigError("generator endpoint needs a base_url");
  if (timeout_ms <= 0) throw ConfigError("timeout_ms must be positive");
  if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (max_concurrency == 0) throw ConfigError("max_concurrency must be positive");
  if (backoff_base_ms < 0 || backoff_factor < 1.0) throw ConfigError("invalid backoff settings");
}

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl s;
  s.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) s.prefix = url.substr(path_start);
  while (!s.prefix.empty() && s.prefix.back() == '/') s.prefix.pop_back();
  return s;
}

std::string truncate(const std::string& s, std::size_t n = 200) {
  return s.size() <= n ? s : s.substr(0, n) + "...";
}

}  // namespace

std::string post_json(const GeneratorEndpoint& ep, const std::string& path, const std::string& body,
                      HttpStats* stats) {
  ep.validate();
  const SplitUrl url = split_url(ep.base_url);
  httplib::Headers headers;
  if (!ep.api_key_env.empty()) {
    const char* key = std::getenv(ep.api_key_env.c_str());
    if (key == nullptr) throw ConfigError("environment variable " + ep.api_key_env + " is not set");
    headers.emplace(ep.auth_header, ep.auth_prefix + key);
  }

  httplib::Client client(url.origin);
  const auto timeout = std::chrono::milliseconds(ep.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  Rng jitter_rng(hash_string(body) ^ reinterpret_cast<std::uintptr_t>(&body));
  std::string last_error;
  for (int attempt = 0; attempt <= ep.max_retries; ++attempt) {
    if (attempt > 0) {
      double wait = ep.backoff_base_ms * std::pow(ep.backoff_factor, attempt - 1);
      if (ep.jitter) wait *= 0.5 + jitter_rng.uniform();
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(wait));
    }
    if (stats) ++stats->attempts;
    auto res = client.Post(url.prefix + path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status) + ": " + truncate(res->body);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw ProtocolError("HTTP " + std::to_string(res->status) + " from " + ep.base_url + path + ": " +
                          truncate(res->body));
    }
    if (stats) ++stats->calls;
    return res->body;
  }
  throw TransportError("giving up on " + ep.base_url + path + " after " + std::to_string(ep.max_retries + 1) +
                       " attempts; last: " + last_error);
}

std::string http_generate(const GeneratorEndpoint& ep, const PromptSpec& prompt, HttpStats* stats) {
  json body;
  if (!ep.thinking_passthrough.empty()) {
    try {
      body = json::parse(ep.thinking_passthrough);
    } catch (const json::exception& ex) {
      throw ConfigError(std::string("thinking_passthrough is not valid JSON: ") + ex.what());
    }
    if (!body.is_object()) throw ConfigError("thinking_passthrough must be a JSON object");
  }
  body["model"] = ep.model_name;
  body["messages"] = json::array({{{"role", "user"}, {"content", prompt.text()}}});

  const std::string raw = post_json(ep, "/chat/completions", body.dump(), stats);
  try {
    json j = json::parse(raw);
    const json& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw ProtocolError("message.content is not a string");
    return content.get<std::string>();
  } catch (const json::exception& ex) {
    throw ProtocolError(std::string("unexpected chat-completion response (") + ex.what() + "): " + truncate(raw));
  }
}

HttpGenerator::HttpGenerator(GeneratorEndpoint ep)
    : ep_(std::move(ep)), gate_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(ep_.max_concurrency, 1))) {
  ep_.validate();
}

std::string HttpGenerator::generate(const PromptSpec& prompt) {
  gate_.acquire();
  struct Release {
    std::counting_semaphore<>& g;
    ~Release() { g.release(); }
  } release{gate_};
  return http_generate(ep_, prompt, &stats_);
}

HttpEmbeddingProvider::HttpEmbeddingProvider(GeneratorEndpoint ep, std::size_t dim) : ep_(std::move(ep)), dim_(dim) {
  ep_.validate();
  if (dim == 0) throw ConfigError("embedding dim must be positive");
}

Vec HttpEmbeddingProvider::embed(std::string_view text) const {
  json body{{"model", ep_.model_name}, {"input", std::string(text)}};
  const std::string raw = post_json(ep_, "/embeddings", body.dump());
  try {
    json j = json::parse(raw);
    Vec v = j.at("data").at(0).at("embedding").get<Vec>();
    if (v.size() != dim_) {
      throw DimensionError("embedding endpoint returned " + std::to_string(v.size()) + " values, expected " +
                           std::to_string(dim_));
    }
    return v;
  } catch (const json::exception& ex) {
    throw ProtocolError(std::string("unexpected embedding response (") + ex.what() + "): " + truncate(raw));
  }
}

// ---------------------------------------------------------------------------

std::vector<std::optional<std::string>> generate_all(Generator& gen, const std::vector<PromptSpec>& prompts,
                                                     std::vector<std::string>* errors) {
  std::vector<std::optional<std::string>> results(prompts.size());
  std::vector<std::string> errs(prompts.size());
  auto run = [&](std::size_t i) {
    try {
      results[i] = gen.generate(prompts[i]);
    } catch (const std::exception& ex) {
      errs[i] = ex.what();
    }
  };
  const std::size_t workers = gen.concurrent() ? std::min(gen.max_concurrency(), prompts.size()) : 1;
  if (workers <= 1) {
    for (std::size_t i = 0; i < prompts.size(); ++i) run(i);
  } else {
    // Each result lands in its own slot; order never depends on timing.
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < prompts.size(); i = next++) run(i);
      });
    }
  }
  if (errors) *errors = std::move(errs);
  return results;
}

}  // namespace rar::gen
