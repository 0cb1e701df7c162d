#include "rar/corpus_store.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace rar::corpus {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& xs, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += xs[i];
  }
  return out;
}

std::string title_key(const std::string& normalized, std::optional<int> year) {
  return normalized + '\x1f' + (year ? std::to_string(*year) : std::string());
}

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

}  // namespace

int MovieEntry::populated_fields() const {
  return int(!id.empty()) + int(!title.empty()) + int(year.has_value()) + int(!genre.empty()) +
         int(!director.empty()) + int(!cast.empty()) + int(!plot.empty());
}

std::string serialize_metadata(const MovieEntry& e) {
  std::string out;
  out += "title: " + e.title + "\n";
  out += "year: " + (e.year ? std::to_string(*e.year) : std::string()) + "\n";
  out += "genre: " + join(e.genre, ", ") + "\n";
  out += "director: " + join(e.director, ", ") + "\n";
  out += "cast: " + join(e.cast, ", ") + "\n";
  out += "plot: " + e.plot;
  return out;
}

// ---------------------------------------------------------------------------

TitleParts split_year_suffix(std::string_view raw) {
  std::size_t end = raw.size();
  while (end > 0 && is_space(raw[end - 1])) --end;
  // "(YYYY)" is exactly six characters.
  if (end >= 6 && raw[end - 1] == ')' && raw[end - 6] == '(') {
    std::string_view digits = raw.substr(end - 5, 4);
    if (std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); })) {
      std::size_t cut = end - 6;
      while (cut > 0 && is_space(raw[cut - 1])) --cut;
      return {std::string(raw.substr(0, cut)), std::stoi(std::string(digits))};
    }
  }
  return {std::string(raw.substr(0, end)), std::nullopt};
}

std::string normalize_title(std::string_view raw) {
  const std::string base = split_year_suffix(raw).title;
  std::string out;
  out.reserve(base.size());
  bool pending_space = false;
  for (unsigned char c : base) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (std::ispunct(c)) continue;
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {

double similarity_normalized(std::string_view na, std::string_view nb) {
  const std::size_t longest = std::max(na.size(), nb.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(na, nb)) / static_cast<double>(longest);
}

}  // namespace

double fuzzy_similarity(std::string_view a, std::string_view b) {
  return similarity_normalized(normalize_title(a), normalize_title(b));
}

// ---------------------------------------------------------------------------

CorpusIndex::CorpusIndex(std::vector<MovieEntry> entries) {
  for (auto& e : entries) {
    if (e.id.empty()) throw IngestError("corpus entry with empty id");
    const std::string norm = normalize_title(e.title);
    if (norm.empty()) throw IngestError("corpus entry " + e.id + " has an empty title");
    if (e.year && (*e.year < kMinYear || *e.year > kMaxYear)) {
      throw IngestError("corpus entry " + e.id + " has out-of-range year " + std::to_string(*e.year));
    }
    const std::string key = title_key(norm, e.year);
    if (!title_index_.emplace(key, e.id).second) {
      throw IngestError("duplicate title/year for ids " + title_index_[key] + " and " + e.id);
    }
    by_title_[norm].push_back(e.id);
    std::string id = e.id;
    if (!entries_.emplace(id, std::move(e)).second) throw IngestError("duplicate id " + id);
  }
  for (auto& [norm, ids] : by_title_) std::sort(ids.begin(), ids.end());
  titles_.reserve(entries_.size());
  for (const auto& [id, e] : entries_) titles_.push_back({id, normalize_title(e.title), e.year});
}

const MovieEntry& CorpusIndex::at(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw LookupError("unknown corpus id: " + id);
  return it->second;
}

std::optional<std::string> CorpusIndex::find_exact(std::string_view title,
                                                   std::optional<int> year) const {
  auto it = title_index_.find(title_key(normalize_title(title), year));
  if (it == title_index_.end()) return std::nullopt;
  return it->second;
}

const std::vector<std::string>* CorpusIndex::find_by_title(std::string_view normalized) const {
  auto it = by_title_.find(std::string(normalized));
  return it == by_title_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------

ConflictPolicy parse_conflict_policy(const std::string& s) {
  if (s == "prefer_most_fields") return ConflictPolicy::kPreferMostFields;
  if (s == "prefer_first") return ConflictPolicy::kPreferFirst;
  throw ConfigError("unknown conflict policy: " + s);
}

std::size_t DropReport::total_dropped() const {
  std::size_t n = 0;
  for (const auto& [_, c] : dropped) n += c;
  return n;
}

namespace {

std::vector<std::string> string_list(const json& j, const char* key) {
  std::vector<std::string> out;
  if (!j.contains(key) || j[key].is_null()) return out;
  const json& v = j[key];
  if (v.is_string()) {
    // Tolerate comma-joined strings from loosely formatted sources.
    std::stringstream ss(v.get<std::string>());
    std::string part;
    while (std::getline(ss, part, ',')) {
      auto b = part.find_first_not_of(" \t");
      auto e = part.find_last_not_of(" \t");
      if (b != std::string::npos) out.push_back(part.substr(b, e - b + 1));
    }
    return out;
  }
  for (const auto& x : v) {
    if (x.is_string() && !x.get<std::string>().empty()) out.push_back(x.get<std::string>());
  }
  return out;
}

std::string string_field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) return {};
  return j[key].get<std::string>();
}

}  // namespace

MovieEntry parse_entry_json(std::string_view line) {
  json j = json::parse(line);
  if (!j.is_object()) throw json::type_error::create(302, "record is not an object", &j);
  MovieEntry e;
  e.id = string_field(j, "id");
  e.title = string_field(j, "title");
  if (j.contains("year") && !j["year"].is_null()) {
    if (j["year"].is_number_integer()) {
      e.year = j["year"].get<int>();
    } else if (j["year"].is_string() && !j["year"].get<std::string>().empty()) {
      e.year = std::stoi(j["year"].get<std::string>());
    }
  }
  e.genre = string_list(j, "genre");
  e.director = string_list(j, "director");
  e.cast = string_list(j, "cast");
  e.plot = string_field(j, "plot");
  return e;
}

std::string entry_to_json(const MovieEntry& e) {
  json j;
  j["id"] = e.id;
  j["title"] = e.title;
  j["year"] = e.year ? json(*e.year) : json(nullptr);
  j["genre"] = e.genre;
  j["director"] = e.director;
  j["cast"] = e.cast;
  j["plot"] = e.plot;
  return j.dump();
}

std::vector<MovieEntry> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot read corpus source: " + path.string());
  std::vector<MovieEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_entry_json(line));
    } catch (const std::exception& ex) {
      throw IngestError(path.string() + ":" + std::to_string(lineno) + ": malformed record: " +
                        ex.what());
    }
  }
  return out;
}

namespace {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  // Keeps the smaller index as root so groups remember first-seen order.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

template <typename T>
void fill_if_empty(T& dst, const T& src) {
  if (dst.empty()) dst = src;
}

}  // namespace

IngestResult merge_records(std::vector<MovieEntry> records, ConflictPolicy policy) {
  IngestResult result;
  DropReport& report = result.report;
  report.records_read = records.size();

  std::vector<std::string> norms(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    if (r.year && (*r.year < kMinYear || *r.year > kMaxYear)) {
      r.year.reset();
      ++report.invalid_year;
    }
    norms[i] = normalize_title(r.title);
  }

  DisjointSets sets(records.size());
  std::unordered_map<std::string, std::size_t> first_by_id, first_by_title;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].id.empty()) {
      auto [it, fresh] = first_by_id.emplace(records[i].id, i);
      if (!fresh) sets.unite(it->second, i);
    }
    if (!norms[i].empty()) {
      auto [it, fresh] = first_by_title.emplace(title_key(norms[i], records[i].year), i);
      if (!fresh) sets.unite(it->second, i);
    }
  }

  std::map<std::size_t, std::vector<std::size_t>> groups;  // root -> members, in input order
  for (std::size_t i = 0; i < records.size(); ++i) groups[sets.find(i)].push_back(i);

  std::vector<MovieEntry> kept;
  for (auto& [root, members] : groups) {
    report.merged_duplicates += members.size() - 1;

    std::vector<std::size_t> order = members;
    if (policy == ConflictPolicy::kPreferMostFields) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const int fa = records[a].populated_fields();
        const int fb = records[b].populated_fields();
        if (fa != fb) return fa > fb;
        const auto& ia = records[a].id;
        const auto& ib = records[b].id;
        if (ia.empty() != ib.empty()) return !ia.empty();
        return ia < ib;
      });
    }

    MovieEntry merged = records[order.front()];
    for (std::size_t k = 1; k < order.size(); ++k) {
      const MovieEntry& other = records[order[k]];
      fill_if_empty(merged.id, other.id);
      fill_if_empty(merged.title, other.title);
      if (!merged.year) merged.year = other.year;
      fill_if_empty(merged.genre, other.genre);
      fill_if_empty(merged.director, other.director);
      fill_if_empty(merged.cast, other.cast);
      fill_if_empty(merged.plot, other.plot);
    }

    std::string reason;
    if (merged.id.empty()) {
      reason = "missing_id";
    } else if (normalize_title(merged.title).empty()) {
      reason = "empty_title";
    } else if (merged.director.empty()) {
      reason = "missing_director";
    } else if (merged.cast.empty()) {
      reason = "missing_cast";
    } else if (merged.genre.empty()) {
      reason = "missing_genre";
    } else if (merged.plot.empty()) {
      reason = "missing_plot";
    }
    if (!reason.empty()) {
      ++report.dropped[reason];
      continue;
    }
    kept.push_back(std::move(merged));
  }

  // A group merged on title can carry a different id than a group merged on
  // id alone; a second pass settles any collision that leaves behind.
  std::sort(kept.begin(), kept.end(),
            [](const MovieEntry& a, const MovieEntry& b) { return a.id < b.id; });
  std::vector<MovieEntry> unique;
  std::unordered_map<std::string, std::size_t> seen_id, seen_title;
  for (auto& e : kept) {
    const std::string key = title_key(normalize_title(e.title), e.year);
    if (seen_id.count(e.id) || seen_title.count(key)) {
      ++report.merged_duplicates;
      continue;
    }
    seen_id.emplace(e.id, unique.size());
    seen_title.emplace(key, unique.size());
    unique.push_back(std::move(e));
  }

  report.kept = unique.size();
  result.index = CorpusIndex(std::move(unique));
  return result;
}

IngestResult ingest_sources(const std::vector<std::filesystem::path>& paths, ConflictPolicy policy) {
  std::vector<MovieEntry> all;
  for (const auto& p : paths) {
    auto recs = read_records(p);
    all.insert(all.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  return merge_records(std::move(all), policy);
}

void write_corpus(const CorpusIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write corpus: " + path.string());
  for (const auto& [id, e] : index.entries()) out << entry_to_json(e) << '\n';
}

CorpusIndex read_corpus(const std::filesystem::path& path) {
  return CorpusIndex(read_records(path));
}

std::string drop_report_json(const DropReport& r) {
  json j;
  j["records_read"] = r.records_read;
  j["merged_duplicates"] = r.merged_duplicates;
  j["invalid_year"] = r.invalid_year;
  j["dropped"] = r.dropped;
  j["dropped_total"] = r.total_dropped();
  j["kept"] = r.kept;
  return j.dump(2);
}

// ---------------------------------------------------------------------------

namespace {

struct Candidate {
  double sim = -1.0;
  bool year_match = false;
  const std::string* id = nullptr;
};

// Higher similarity, then matching year, then smaller id.
bool better(const Candidate& a, const Candidate& b) {
  if (a.sim != b.sim) return a.sim > b.sim;
  if (a.year_match != b.year_match) return a.year_match;
  if (!b.id) return a.id != nullptr;
  if (!a.id) return false;
  return *a.id < *b.id;
}

std::optional<MentionMatch> exact_match(const TitleParts& parts, const std::string& norm,
                                        const CorpusIndex& index) {
  if (parts.year) {
    if (auto id = index.find_exact(norm, parts.year)) return MentionMatch{id, 1.0};
  }
  if (const auto* ids = index.find_by_title(norm)) {
    if (parts.year) {
      // Title matches but year does not; fall through to fuzzy only when the
      // title is ambiguous.
      if (ids->size() == 1) return MentionMatch{ids->front(), 1.0};
    } else {
      return MentionMatch{ids->front(), 1.0};
    }
  }
  return std::nullopt;
}

MentionMatch finish(const Candidate& best) {
  MentionMatch m;
  m.similarity = std::max(best.sim, 0.0);
  if (best.id && best.sim >= kFuzzyThreshold) m.id = *best.id;
  return m;
}

}  // namespace

MentionMatch resolve_mention_serial(std::string_view mention, const CorpusIndex& index) {
  const TitleParts parts = split_year_suffix(mention);
  const std::string norm = normalize_title(parts.title);
  if (auto m = exact_match(parts, norm, index)) return *m;

  Candidate best;
  for (const auto& rec : index.titles()) {
    Candidate c{similarity_normalized(norm, rec.normalized), parts.year && rec.year == parts.year,
                &rec.id};
    if (better(c, best)) best = c;
  }
  return finish(best);
}

MentionMatch resolve_mention(std::string_view mention, const CorpusIndex& index) {
  const TitleParts parts = split_year_suffix(mention);
  const std::string norm = normalize_title(parts.title);
  if (auto m = exact_match(parts, norm, index)) return *m;

  const auto& titles = index.titles();
  const auto n = static_cast<std::ptrdiff_t>(titles.size());
  std::vector<double> sims(titles.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) sims[i] = similarity_normalized(norm, titles[i].normalized);

  Candidate best;
  for (std::size_t i = 0; i < titles.size(); ++i) {
    Candidate c{sims[i], parts.year && titles[i].year == parts.year, &titles[i].id};
    if (better(c, best)) best = c;
  }
  return finish(best);
}

Conversation link_mentions(Conversation conv, const CorpusIndex& index) {
  for (std::size_t t = 0; t < conv.turns.size(); ++t) {
    Turn& turn = conv.turns[t];
    for (const auto& mention : turn.mentions) {
      if (index.contains(mention)) {
        turn.items.push_back(mention);
        continue;
      }
      MentionMatch m = resolve_mention(mention, index);
      if (m.id) {
        turn.items.push_back(*m.id);
      } else {
        conv.unresolved.push_back({t, mention, m.similarity});
      }
    }
    turn.mentions.clear();
    // Same item mentioned twice in one turn counts once.
    std::vector<std::string> dedup;
    for (auto& id : turn.items) {
      if (std::find(dedup.begin(), dedup.end(), id) == dedup.end()) dedup.push_back(std::move(id));
    }
    turn.items = std::move(dedup);
  }
  return conv;
}

// ---------------------------------------------------------------------------

HashEmbeddingProvider::HashEmbeddingProvider(std::size_t dim, std::uint64_t salt)
    : dim_(dim), salt_(salt) {
  if (dim == 0) throw ConfigError("embedding dim must be positive");
}

std::string HashEmbeddingProvider::tag() const {
  return "hash-ngram-v1:dim=" + std::to_string(dim_) + ":salt=" + std::to_string(salt_);
}

Vec HashEmbeddingProvider::embed(std::string_view text) const {
  static const char* kKeys[] = {"title", "year", "genre", "director", "cast", "plot"};
  Vec v(dim_, 0.0);
  auto bump = [&](const std::string& feature) {
    const std::uint64_t h = mix_seed(salt_, hash_string(feature));
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v[(h & 0x7fffffffffffffffULL) % dim_] += sign;
  };

  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;

    for (const char* key : kKeys) {
      const std::string prefix = std::string(key) + ":";
      if (line.substr(0, prefix.size()) == prefix) {
        line.remove_prefix(prefix.size());
        break;
      }
    }

    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : line) {
      if (std::isalnum(c)) {
        cur += static_cast<char>(std::tolower(c));
      } else if (!cur.empty()) {
        words.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) words.push_back(std::move(cur));

    for (std::size_t i = 0; i < words.size(); ++i) {
      bump(words[i]);
      if (i + 1 < words.size()) bump(words[i] + ' ' + words[i + 1]);
    }
    if (nl == text.size()) break;
  }

  const double n = l2_norm(v);
  if (n > 0) {
    for (double& x : v) x /= n;
  }
  return v;
}

EmbeddingTable::EmbeddingTable(std::size_t dim, std::string provider_tag)
    : dim_(dim), tag_(std::move(provider_tag)), mat_(0, dim) {
  if (dim == 0) throw DimensionError("embedding dim must be positive");
}

void EmbeddingTable::add(const std::string& id, std::span<const double> v) {
  if (v.size() != dim_) {
    throw DimensionError("embedding for " + id + " has length " + std::to_string(v.size()) +
                         ", expected " + std::to_string(dim_));
  }
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("non-finite embedding value for " + id);
  }
  if (!row_.emplace(id, ids_.size()).second) throw IngestError("duplicate embedding id " + id);
  ids_.push_back(id);
  mat_.data.insert(mat_.data.end(), v.begin(), v.end());
  ++mat_.rows;
}

std::size_t EmbeddingTable::row_of(const std::string& id) const {
  auto it = row_.find(id);
  if (it == row_.end()) throw LookupError("id not in embedding table: " + id);
  return it->second;
}

void EmbeddingTable::check_matches(const CorpusIndex& index) const {
  if (index.size() != size()) {
    throw LookupError("embedding table has " + std::to_string(size()) + " ids, corpus has " +
                      std::to_string(index.size()));
  }
  for (const auto& id : ids_) {
    if (!index.contains(id)) throw LookupError("embedding id not in corpus: " + id);
  }
}

EmbeddingTable build_embeddings(const CorpusIndex& index, const EmbeddingProvider& provider) {
  const std::size_t dim = provider.dim();
  std::vector<const MovieEntry*> entries;
  entries.reserve(index.size());
  for (const auto& [id, e] : index.entries()) entries.push_back(&e);

  std::vector<Vec> vecs(entries.size());
  std::vector<std::string> errors(entries.size());
  const auto n = static_cast<std::ptrdiff_t>(entries.size());
  auto embed_one = [&](std::ptrdiff_t i) {
    try {
      vecs[i] = provider.embed(serialize_metadata(*entries[i]));
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  };
  if (provider.parallel_safe()) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < n; ++i) embed_one(i);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) embed_one(i);
  }

  EmbeddingTable table(dim, provider.tag());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string& id = entries[i]->id;
    if (!errors[i].empty()) throw Error("embedding provider failed for " + id + ": " + errors[i]);
    Vec& v = vecs[i];
    if (v.size() != dim) {
      throw DimensionError("provider returned length " + std::to_string(v.size()) + " for " + id +
                           ", expected " + std::to_string(dim));
    }
    const double norm = l2_norm(v);
    if (!std::isfinite(norm) || norm == 0.0) {
      throw NumericError("cannot normalize embedding for " + id);
    }
    for (double& x : v) x /= norm;
    table.add(id, v);
  }
  return table;
}

void write_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write embeddings: " + path.string());
  out << json{{"dim", table.dim()}, {"provider", table.provider_tag()}}.dump() << '\n';
  for (std::size_t r = 0; r < table.size(); ++r) {
    auto row = table.vec_at(r);
    json line;
    line["id"] = table.ids()[r];
    line["vec"] = std::vector<double>(row.begin(), row.end());
    out << line.dump() << '\n';
  }
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read embeddings: " + path.string());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw Error("empty embedding file: " + path.string());
  EmbeddingTable table;
  try {
    json h = json::parse(line);
    table = EmbeddingTable(h.at("dim").get<std::size_t>(), h.at("provider").get<std::string>());
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json j = json::parse(line);
      table.add(j.at("id").get<std::string>(), j.at("vec").get<std::vector<double>>());
    }
  } catch (const json::exception& ex) {
    throw Error(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
  }
  return table;
}

}  // namespace rar::corpus
