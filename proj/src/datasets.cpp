#include "rar/datasets.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace rar {

const char* role_name(Role r) { return r == Role::kSeeker ? "seeker" : "recommender"; }

Role parse_role(const std::string& s) {
  if (s == "seeker") return Role::kSeeker;
  if (s == "recommender") return Role::kRecommender;
  throw Error("unknown turn role: " + s);
}

}  // namespace rar

namespace rar::data {

using nlohmann::json;

std::vector<TrainingExample> split_conversation(const Conversation& conv, std::size_t max_history,
                                                SplitStats* stats) {
  if (max_history == 0) throw ConfigError("max_history must be positive");
  SplitStats local;
  SplitStats& st = stats ? *stats : local;
  std::vector<TrainingExample> out;
  std::vector<std::string> history;
  std::vector<std::string> context;
  std::set<std::string> seen;

  for (std::size_t t = 0; t < conv.turns.size(); ++t) {
    const Turn& turn = conv.turns[t];
    if (turn.role == Role::kRecommender) {
      ++st.recommender_turns;
      TrainingExample ex;
      for (const auto& id : turn.items) {
        if (!seen.count(id) && std::find(ex.targets.begin(), ex.targets.end(), id) == ex.targets.end()) {
          ex.targets.push_back(id);
        }
      }
      if (turn.items.empty()) {
        ++st.no_items;
      } else if (ex.targets.empty()) {
        ++st.all_repeated;
      } else {
        ex.id = conv.id + "#" + std::to_string(t);
        ex.context = context;
        const std::size_t start = history.size() > max_history ? history.size() - max_history : 0;
        ex.history.assign(history.begin() + static_cast<std::ptrdiff_t>(start), history.end());
        out.push_back(std::move(ex));
      }
    }
    context.push_back(turn.text);
    for (const auto& id : turn.items) {
      history.push_back(id);
      seen.insert(id);
    }
  }
  return out;
}

std::vector<Session> sessionize(std::vector<Interaction> interactions, long gap_seconds) {
  std::stable_sort(interactions.begin(), interactions.end(), [](const Interaction& a, const Interaction& b) {
    if (a.user != b.user) return a.user < b.user;
    return a.timestamp < b.timestamp;
  });
  std::vector<Session> out;
  Session cur;
  auto flush = [&] {
    if (cur.items.size() >= 2) out.push_back(std::move(cur));
    cur = Session{};
  };
  for (const auto& x : interactions) {
    const bool new_run = cur.items.empty() || x.user != cur.user || x.timestamp - cur.timestamps.back() > gap_seconds;
    if (new_run) {
      flush();
      cur.user = x.user;
    }
    cur.items.push_back(x.item);
    cur.timestamps.push_back(x.timestamp);
  }
  flush();
  return out;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> ratios) {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = double(n) * ratios[i];
    // The epsilon keeps 10 * 0.8 from flooring to 7.
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[i] = exact - double(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (frac[i] > frac[best]) best = i;
    }
    ++sizes[best];
    frac[best] = -1.0;
    ++assigned;
  }
  return sizes;
}

// ---------------------------------------------------------------------------

Conversation parse_conversation_json(std::string_view line) {
  json j = json::parse(line);
  Conversation c;
  c.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  for (const auto& tj : j.at("turns")) {
    Turn t;
    t.role = parse_role(tj.at("role").get<std::string>());
    t.text = tj.value("text", std::string());
    if (tj.contains("items")) t.items = tj["items"].get<std::vector<std::string>>();
    if (tj.contains("mentions")) t.mentions = tj["mentions"].get<std::vector<std::string>>();
    c.turns.push_back(std::move(t));
  }
  if (c.turns.empty()) throw Error("conversation " + c.id + " has no turns");
  return c;
}

std::string conversation_to_json(const Conversation& c) {
  json j;
  j["id"] = c.id;
  j["turns"] = json::array();
  for (const auto& t : c.turns) {
    json tj{{"role", role_name(t.role)}, {"text", t.text}, {"items", t.items}};
    if (!t.mentions.empty()) tj["mentions"] = t.mentions;
    j["turns"].push_back(std::move(tj));
  }
  if (!c.unresolved.empty()) {
    json u = json::array();
    for (const auto& m : c.unresolved) {
      u.push_back({{"turn", m.turn}, {"mention", m.mention}, {"best_similarity", m.best_similarity}});
    }
    j["unresolved"] = std::move(u);
  }
  return j.dump();
}

namespace {

template <typename T, typename Parse>
std::vector<T> read_jsonl(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(line));
    } catch (const Error& ex) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    } catch (const json::exception& ex) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<Conversation> read_conversations(const std::filesystem::path& path) {
  return read_jsonl<Conversation>(path, parse_conversation_json);
}

void write_conversations(const std::vector<Conversation>& convs, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& c : convs) out << conversation_to_json(c) << '\n';
}

std::string example_to_json(const TrainingExample& e) {
  return json{{"id", e.id}, {"context", e.context}, {"history", e.history}, {"targets", e.targets}}.dump();
}

TrainingExample parse_example_json(std::string_view line) {
  json j = json::parse(line);
  TrainingExample e;
  e.id = j.at("id").get<std::string>();
  e.context = j.value("context", std::vector<std::string>{});
  e.history = j.at("history").get<std::vector<std::string>>();
  e.targets = j.at("targets").get<std::vector<std::string>>();
  return e;
}

std::vector<TrainingExample> read_examples(const std::filesystem::path& path) {
  return read_jsonl<TrainingExample>(path, parse_example_json);
}

void write_examples(const std::vector<TrainingExample>& xs, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& x : xs) out << example_to_json(x) << '\n';
}

std::vector<Interaction> read_interactions(const std::filesystem::path& path) {
  if (path.extension() == ".jsonl") {
    return read_jsonl<Interaction>(path, [](std::string_view line) {
      json j = json::parse(line);
      auto str = [&](const char* k) { return j.at(k).is_string() ? j.at(k).get<std::string>() : j.at(k).dump(); };
      return Interaction{str("user"), str("item"), j.at("timestamp").get<long>()};
    });
  }
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<Interaction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (lineno == 1 && !cols.empty() && cols[0] == "user") continue;
    if (cols.size() < 3) throw Error(path.string() + ":" + std::to_string(lineno) + ": expected user,item,timestamp");
    try {
      out.push_back({cols[0], cols[1], std::stol(cols[2])});
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": bad timestamp '" + cols[2] + "'");
    }
  }
  return out;
}

std::vector<Session> read_sessions(const std::filesystem::path& path) {
  return read_jsonl<Session>(path, [](std::string_view line) {
    json j = json::parse(line);
    Session s;
    s.user = j.at("user").get<std::string>();
    s.items = j.at("items").get<std::vector<std::string>>();
    s.timestamps = j.value("timestamps", std::vector<long>{});
    return s;
  });
}

void write_sessions(const std::vector<Session>& sessions, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& s : sessions) {
    out << json{{"user", s.user}, {"items", s.items}, {"timestamps", s.timestamps}}.dump() << '\n';
  }
}

}  // namespace rar::data
