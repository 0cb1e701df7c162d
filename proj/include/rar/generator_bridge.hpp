#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "rar/common.hpp"
#include "rar/corpus_store.hpp"

namespace rar::gen {

/// Instruction text with a "{k}" slot for the number of candidates.
extern const char* const kInstructionTemplate;

struct PromptCandidate {
  std::string id;
  std::string title;
  std::string block;  // key-value metadata serialization
};

struct PromptSpec {
  std::string instruction;
  std::vector<PromptCandidate> candidates;
  std::vector<std::string> context;
  std::size_t k = 0;

  /// Full prompt: instruction, candidate blocks in retrieval order, then
  /// "Conversation history:" and the turns in order.
  std::string text() const;
};

PromptSpec build_prompt(const std::vector<std::string>& context,
                        const std::vector<const corpus::MovieEntry*>& candidates, std::size_t k);

/// Convenience: look candidates up by id.
PromptSpec build_prompt(const std::vector<std::string>& context, const std::vector<std::string>& candidate_ids,
                        const corpus::CorpusIndex& index, std::size_t k);

struct UnmatchedLine {
  std::string line;
  double best_similarity = 0.0;
};

struct RankedOutput {
  std::vector<std::string> items;
  std::string raw_text;
  std::vector<UnmatchedLine> unmatched;
  std::size_t emitted_lines = 0;  // lines in "<rank>. <title>" form
};

/// Pulls "<rank>. <title>" lines out of free text and maps each title onto
/// a prompt candidate (exact normalized, else fuzzy >= 0.85). Titles that
/// match nothing are reported, never admitted.
RankedOutput parse_ranking(const std::string& raw_text, const std::vector<PromptCandidate>& candidates);

// Generators -------------------------------------------------------------------

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string generate(const PromptSpec& prompt) = 0;
  /// Calls may overlap when true.
  virtual bool concurrent() const { return false; }
  virtual std::size_t max_concurrency() const { return 1; }
};

struct MockCandidate {
  std::string title;
  std::span<const double> embedding;
  std::uint64_t key = 0;  // per-candidate noise stream
};

/// Ranks candidates by dot(context_vector, embedding) + noise_scale * N(0,1)
/// and writes them back in "<rank>. <title>" form.
std::string mock_generate(const std::vector<MockCandidate>& candidates, std::span<const double> context_vector,
                          double noise_scale, std::uint64_t seed);

/// Offline stand-in for the frozen black-box generator. It reads the
/// conversation through the same embedding provider as the corpus and
/// ranks candidates by similarity to it, so its preferences come from the
/// dialogue text rather than the item history the retriever sees.
class MockGenerator final : public Generator {
 public:
  MockGenerator(const corpus::EmbeddingTable& table, const corpus::EmbeddingProvider& provider,
                double noise_scale, std::uint64_t seed);
  std::string generate(const PromptSpec& prompt) override;
  bool concurrent() const override { return true; }
  std::size_t max_concurrency() const override { return 8; }

  Vec context_vector(const std::vector<std::string>& context) const;

 private:
  const corpus::EmbeddingTable& table_;
  const corpus::EmbeddingProvider& provider_;
  double noise_scale_;
  std::uint64_t seed_;
};

/// Returns candidates in prompt (retrieval) order.
class IdentityGenerator final : public Generator {
 public:
  std::string generate(const PromptSpec& prompt) override;
};

// HTTP -------------------------------------------------------------------------

struct GeneratorEndpoint {
  std::string base_url;             // e.g. http://127.0.0.1:8080/v1
  std::string model_name;
  std::string api_key_env;          // environment variable holding the key; empty = no auth
  std::string auth_header = "Authorization";
  std::string auth_prefix = "Bearer ";
  int timeout_ms = 60000;
  int max_retries = 3;
  std::size_t max_concurrency = 4;
  int backoff_base_ms = 500;
  double backoff_factor = 2.0;
  bool jitter = true;
  std::string thinking_passthrough;  // JSON object merged into the request body verbatim

  void validate() const;
};

struct HttpStats {
  std::atomic<std::size_t> attempts{0};
  std::atomic<std::size_t> calls{0};
};

/// POST a JSON body to base_url + path with the retry policy of the
/// endpoint: transport errors, 429 and 5xx back off exponentially
/// (base * factor^n, optionally jittered) up to max_retries extra attempts.
/// Returns the response body.
std::string post_json(const GeneratorEndpoint& ep, const std::string& path, const std::string& body,
                      HttpStats* stats = nullptr);

/// Chat-completion call: one user message, returns choices[0].message.content.
std::string http_generate(const GeneratorEndpoint& ep, const PromptSpec& prompt, HttpStats* stats = nullptr);

class HttpGenerator final : public Generator {
 public:
  explicit HttpGenerator(GeneratorEndpoint ep);
  std::string generate(const PromptSpec& prompt) override;
  bool concurrent() const override { return true; }
  std::size_t max_concurrency() const override { return ep_.max_concurrency; }
  const HttpStats& stats() const { return stats_; }

 private:
  GeneratorEndpoint ep_;
  HttpStats stats_;
  std::counting_semaphore<> gate_;
};

/// Production embedding provider: POST {base_url}/embeddings with
/// {model, input} and read data[0].embedding.
class HttpEmbeddingProvider final : public corpus::EmbeddingProvider {
 public:
  HttpEmbeddingProvider(GeneratorEndpoint ep, std::size_t dim);
  std::size_t dim() const override { return dim_; }
  std::string tag() const override { return "http:" + ep_.model_name; }
  Vec embed(std::string_view text) const override;

 private:
  GeneratorEndpoint ep_;
  std::size_t dim_;
};

/// Runs prompts through the generator, fanning out up to its concurrency
/// cap. Results are returned in prompt order; a failed call yields nullopt
/// and its message in `errors`.
std::vector<std::optional<std::string>> generate_all(Generator& gen, const std::vector<PromptSpec>& prompts,
                                                     std::vector<std::string>* errors = nullptr);

}  // namespace rar::gen
