#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rar/common.hpp"

namespace rar {

/// Retriever scores over a pool of corpus ids, parallel arrays in pool order.
struct ScoredPool {
  std::vector<std::string> ids;
  Vec scores;
  std::vector<std::size_t> rows;  // embedding-table rows backing each id
  std::string tag = "corpus";     // which pool produced the scores

  std::size_t size() const { return ids.size(); }
};

/// An ordered candidate set C_t in selection order.
struct CandidateSet {
  std::vector<std::string> items;
  Vec scores;            // retriever scores at selection time, same order as items
  std::string pool_tag;  // pool whose scores produced the set
  std::uint64_t policy_version = 0;

  std::size_t size() const { return items.size(); }
  bool operator==(const CandidateSet& o) const { return items == o.items; }
};

}  // namespace rar
