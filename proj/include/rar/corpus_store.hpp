#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rar/common.hpp"
#include "rar/conversation.hpp"

namespace rar::corpus {

inline constexpr int kMinYear = 1888;
inline constexpr int kMaxYear = 2100;
inline constexpr double kFuzzyThreshold = 0.85;

struct MovieEntry {
  std::string id;
  std::string title;
  std::optional<int> year;
  std::vector<std::string> genre;
  std::vector<std::string> director;
  std::vector<std::string> cast;
  std::string plot;

  /// Number of populated fields, id included. Drives prefer_most_fields.
  int populated_fields() const;
  bool operator==(const MovieEntry&) const = default;
};

/// Canonical key-value text used both as embedding input and as the candidate
/// block inside generator prompts.
std::string serialize_metadata(const MovieEntry& e);

// Title normalization and fuzzy matching ------------------------------------

/// Splits a single trailing "(YYYY)" group off a mention.
struct TitleParts {
  std::string title;
  std::optional<int> year;
};
TitleParts split_year_suffix(std::string_view raw);

/// Lowercase, drop a trailing "(YYYY)", strip punctuation, collapse whitespace.
std::string normalize_title(std::string_view raw);

std::size_t levenshtein(std::string_view a, std::string_view b);

/// 1 - levenshtein(norm a, norm b) / max(len); 1.0 when both normalize equal.
double fuzzy_similarity(std::string_view a, std::string_view b);

// Index ----------------------------------------------------------------------

class CorpusIndex {
 public:
  CorpusIndex() = default;

  /// Entries must already be deduplicated; throws on a repeated id or a
  /// repeated (normalized title, year) key.
  explicit CorpusIndex(std::vector<MovieEntry> entries);

  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& id) const { return entries_.count(id) != 0; }
  const MovieEntry& at(const std::string& id) const;
  const std::map<std::string, MovieEntry>& entries() const { return entries_; }

  /// Exact lookup on (normalized title, year).
  std::optional<std::string> find_exact(std::string_view title, std::optional<int> year) const;
  /// All ids whose normalized title matches, ascending.
  const std::vector<std::string>* find_by_title(std::string_view normalized) const;

  struct TitleRecord {
    std::string id;
    std::string normalized;
    std::optional<int> year;
  };
  /// Flat title list in id order, for scanning matchers.
  const std::vector<TitleRecord>& titles() const { return titles_; }

  bool operator==(const CorpusIndex& o) const { return entries_ == o.entries_; }

 private:
  std::vector<TitleRecord> titles_;
  std::map<std::string, MovieEntry> entries_;
  std::map<std::string, std::string> title_index_;  // "norm\x1fyear" -> id
  std::map<std::string, std::vector<std::string>> by_title_;
};

// Ingestion ------------------------------------------------------------------

enum class ConflictPolicy { kPreferMostFields, kPreferFirst };
ConflictPolicy parse_conflict_policy(const std::string& s);

struct DropReport {
  std::size_t records_read = 0;
  std::size_t merged_duplicates = 0;
  std::size_t invalid_year = 0;
  std::map<std::string, std::size_t> dropped;  // reason -> count
  std::size_t kept = 0;

  std::size_t total_dropped() const;
};

struct IngestResult {
  CorpusIndex index;
  DropReport report;
};

/// Parses one corpus JSONL line; missing fields stay empty.
MovieEntry parse_entry_json(std::string_view line);
std::string entry_to_json(const MovieEntry& e);

std::vector<MovieEntry> read_records(const std::filesystem::path& path);

/// Merge records by id or (normalized title, year), drop incomplete entries.
IngestResult merge_records(std::vector<MovieEntry> records,
                           ConflictPolicy policy = ConflictPolicy::kPreferMostFields);

IngestResult ingest_sources(const std::vector<std::filesystem::path>& paths,
                            ConflictPolicy policy = ConflictPolicy::kPreferMostFields);

void write_corpus(const CorpusIndex& index, const std::filesystem::path& path);
std::string drop_report_json(const DropReport& r);

// Mention linking --------------------------------------------------------------

struct MentionMatch {
  std::optional<std::string> id;
  double similarity = 0.0;
};

/// Exact normalized title match first (honouring a "(YYYY)" suffix when
/// present), then best fuzzy match at or above kFuzzyThreshold.
MentionMatch resolve_mention(std::string_view mention, const CorpusIndex& index);

/// Reference resolver: a plain serial scan. Kept for tests and benchmarks.
MentionMatch resolve_mention_serial(std::string_view mention, const CorpusIndex& index);

/// Resolves every turn's raw mentions into item ids. Mentions that are
/// already corpus ids pass through; the rest land in `unresolved`.
Conversation link_mentions(Conversation conv, const CorpusIndex& index);

// Embeddings -------------------------------------------------------------------

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual std::string tag() const = 0;
  virtual Vec embed(std::string_view text) const = 0;
  /// True when embed() may be called from several threads at once.
  virtual bool parallel_safe() const { return false; }
};

/// Offline provider: hashed word unigrams and in-line bigrams with signed
/// buckets. Leading "key: " labels of the metadata serialization are skipped
/// so free text and metadata share one space.
class HashEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashEmbeddingProvider(std::size_t dim = 256, std::uint64_t salt = 0);
  std::size_t dim() const override { return dim_; }
  std::string tag() const override;
  Vec embed(std::string_view text) const override;
  bool parallel_safe() const override { return true; }

 private:
  std::size_t dim_;
  std::uint64_t salt_;
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t dim, std::string provider_tag);

  /// Adds a vector as given (no normalization). Rejects wrong length,
  /// non-finite values and duplicate ids.
  void add(const std::string& id, std::span<const double> v);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::string& provider_tag() const { return tag_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const Matrix& matrix() const { return mat_; }

  bool contains(const std::string& id) const { return row_.count(id) != 0; }
  std::size_t row_of(const std::string& id) const;
  std::span<const double> vec(const std::string& id) const { return mat_.row(row_of(id)); }
  std::span<const double> vec_at(std::size_t row) const { return mat_.row(row); }

  /// Throws unless the id sets of table and corpus are equal.
  void check_matches(const CorpusIndex& index) const;

  bool operator==(const EmbeddingTable& o) const {
    return dim_ == o.dim_ && tag_ == o.tag_ && ids_ == o.ids_ && mat_ == o.mat_;
  }

 private:
  std::size_t dim_ = 0;
  std::string tag_;
  std::vector<std::string> ids_;
  Matrix mat_;
  std::unordered_map<std::string, std::size_t> row_;
};

/// One L2-normalized vector per entry, rows in ascending id order.
EmbeddingTable build_embeddings(const CorpusIndex& index, const EmbeddingProvider& provider);

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable read_embeddings(const std::filesystem::path& path);

CorpusIndex read_corpus(const std::filesystem::path& path);

}  // namespace rar::corpus
