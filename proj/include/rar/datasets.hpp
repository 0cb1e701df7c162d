#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "rar/common.hpp"
#include "rar/conversation.hpp"

namespace rar::data {

inline constexpr std::size_t kDefaultMaxHistory = 64;
inline constexpr long kSessionGapSeconds = 1800;
inline constexpr std::size_t kDefaultSubsampleCap = 2500;

struct TrainingExample {
  std::string id;                      // "<conversation id>#<turn index>"
  std::vector<std::string> context;    // turn texts before the recommender turn
  std::vector<std::string> history;    // item ids of earlier turns, flattened
  std::vector<std::string> targets;    // this turn's items minus history

  bool operator==(const TrainingExample&) const = default;
};

struct SplitStats {
  std::size_t recommender_turns = 0;
  std::size_t no_items = 0;      // recommender turns that mention nothing
  std::size_t all_repeated = 0;  // every target already appeared earlier
};

/// One example per recommender turn with a non-empty deduplicated target
/// list. History keeps the most recent max_history items.
std::vector<TrainingExample> split_conversation(const Conversation& conv,
                                                std::size_t max_history = kDefaultMaxHistory,
                                                SplitStats* stats = nullptr);

struct Interaction {
  std::string user;
  std::string item;
  long timestamp = 0;  // seconds
};

struct Session {
  std::string user;
  std::vector<std::string> items;
  std::vector<long> timestamps;
};

/// Per-user runs split wherever the gap exceeds gap_seconds; runs shorter
/// than two interactions are dropped. Output ordered by user, then time.
std::vector<Session> sessionize(std::vector<Interaction> interactions,
                                long gap_seconds = kSessionGapSeconds);

template <typename T>
struct Splits {
  std::vector<T> train, val, test;
};

/// Partition sizes from ratios by largest remainder; each within 1 of exact.
std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> ratios);

/// Seeded shuffle into a disjoint, exhaustive train/val/test partition.
template <typename T>
Splits<T> split_dataset(std::vector<T> items, std::array<double, 3> ratios, std::uint64_t seed) {
  const auto sizes = split_sizes(items.size(), ratios);
  Rng rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.below(i)]);
  Splits<T> out;
  auto it = std::make_move_iterator(items.begin());
  out.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  out.val.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  out.test.assign(it, std::make_move_iterator(items.end()));
  return out;
}

/// Uniform subsample down to cap, original order kept. No-op below cap.
template <typename T>
std::vector<T> subsample(std::vector<T> items, std::size_t cap, std::uint64_t seed) {
  if (items.size() <= cap) return items;
  std::vector<std::size_t> idx(items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < cap; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<T> out;
  out.reserve(cap);
  for (std::size_t i : idx) out.push_back(std::move(items[i]));
  return out;
}

// File formats -----------------------------------------------------------------

Conversation parse_conversation_json(std::string_view line);
std::string conversation_to_json(const Conversation& c);
std::vector<Conversation> read_conversations(const std::filesystem::path& path);
void write_conversations(const std::vector<Conversation>& convs, const std::filesystem::path& path);

std::string example_to_json(const TrainingExample& e);
TrainingExample parse_example_json(std::string_view line);
std::vector<TrainingExample> read_examples(const std::filesystem::path& path);
void write_examples(const std::vector<TrainingExample>& xs, const std::filesystem::path& path);

/// CSV with columns user,item,timestamp (header optional) or JSONL objects
/// with the same keys; chosen by extension (.jsonl / anything else).
std::vector<Interaction> read_interactions(const std::filesystem::path& path);

std::vector<Session> read_sessions(const std::filesystem::path& path);
void write_sessions(const std::vector<Session>& sessions, const std::filesystem::path& path);

}  // namespace rar::data
