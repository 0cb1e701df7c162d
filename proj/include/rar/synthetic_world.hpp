#pragma once

#include <cstdint>
#include <vector>

#include "rar/conversation.hpp"
#include "rar/corpus_store.hpp"
#include "rar/datasets.hpp"

namespace rar::world {

/// A seeded toy movie domain for running the whole pipeline offline.
///
/// Items belong to topics; each topic owns a genre, a plot vocabulary and
/// pools of directors and actors. Users prefer a main and a side topic plus
/// a few directors, and their picks are skewed by item popularity. Seekers
/// open by naming movies they liked and then describe what they want next
/// using the plot words, director and cast of the movie the recommender
/// goes on to suggest. The retriever only sees item history, while the
/// mock generator reads that text, so generator feedback carries signal the
/// retriever cannot get from history alone.
struct WorldConfig {
  std::size_t n_items = 1000;
  std::size_t n_topics = 12;
  std::size_t n_examples = 2500;  // recommender turns across all conversations
  std::size_t recs_per_conversation = 4;
  std::size_t session_users = 600;
  std::uint64_t seed = 7;
};

struct World {
  /// Raw source records: every item once, plus partial duplicates and a
  /// handful of incomplete records the ingest step should drop.
  std::vector<corpus::MovieEntry> source_records;
  std::vector<corpus::MovieEntry> items;
  /// Turns carry raw "Title (Year)" mentions; items are filled by linking.
  std::vector<Conversation> conversations;
  std::vector<data::Interaction> interactions;
};

World make_world(const WorldConfig& cfg);

}  // namespace rar::world
