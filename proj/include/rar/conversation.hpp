#pragma once

#include <string>
#include <vector>

namespace rar {

enum class Role { kSeeker, kRecommender };

const char* role_name(Role r);
Role parse_role(const std::string& s);

struct Turn {
  Role role = Role::kSeeker;
  std::string text;
  std::vector<std::string> items;     // linked corpus ids
  std::vector<std::string> mentions;  // raw mention strings awaiting linking
};

struct UnresolvedMention {
  std::size_t turn = 0;
  std::string mention;
  double best_similarity = 0.0;
};

struct Conversation {
  std::string id;
  std::vector<Turn> turns;
  std::vector<UnresolvedMention> unresolved;
};

}  // namespace rar
