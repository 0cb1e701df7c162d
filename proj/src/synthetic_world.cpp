#include "rar/synthetic_world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>

namespace rar::world {

namespace {

const char* const kGenres[] = {"Action",  "Comedy",  "Drama",       "Horror",  "Romance", "Science Fiction",
                               "Thriller", "Animation", "Documentary", "Western", "Fantasy", "Mystery",
                               "Musical", "War",     "Crime",       "Adventure"};

class Words {
 public:
  explicit Words(std::uint64_t seed) : rng_(seed) {}

  // Fresh pronounceable token, never handed out twice.
  std::string fresh(std::size_t syllables) {
    static const char* const onset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                        "br", "dr", "gr", "kr", "st", "tr", "sh", "th", "ch", "pl"};
    static const char* const vowel[] = {"a", "e", "i", "o", "u", "ai", "ou", "ei"};
    static const char* const coda[] = {"", "", "n", "r", "l", "s", "k", "m"};
    for (;;) {
      std::string w;
      for (std::size_t s = 0; s < syllables; ++s) {
        w += onset[rng_.below(std::size(onset))];
        w += vowel[rng_.below(std::size(vowel))];
      }
      w += coda[rng_.below(std::size(coda))];
      if (used_.insert(w).second) return w;
    }
  }

  std::string fresh_name() {
    std::string a = fresh(2), b = fresh(2 + rng_.below(2));
    a[0] = char(std::toupper(a[0]));
    b[0] = char(std::toupper(b[0]));
    return a + " " + b;
  }

  Rng& rng() { return rng_; }

 private:
  Rng rng_;
  std::set<std::string> used_;
};

struct Topic {
  std::string genre;
  std::vector<std::string> vocab;
  std::vector<std::string> directors;
  std::vector<std::string> actors;
  std::vector<std::size_t> items;
};

struct Item {
  std::size_t topic = 0;
  std::size_t side_topic = 0;
  double popularity = 1.0;
  std::vector<std::string> plot_words;  // topic words only
};

struct User {
  std::size_t main_topic = 0;
  std::size_t side_topic = 0;
  std::set<std::string> fav_directors;
};

template <typename T>
const T& pick(const std::vector<T>& xs, Rng& rng) {
  return xs[rng.below(xs.size())];
}

std::size_t draw_weighted(const std::vector<double>& w, Rng& rng) {
  double total = 0.0;
  for (double x : w) total += x;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    u -= w[i];
    if (u <= 0.0) return i;
  }
  return w.size() - 1;
}

std::string lower(std::string s) {
  for (char& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string mention(const corpus::MovieEntry& e) { return e.title + " (" + std::to_string(*e.year) + ")"; }

class Builder {
 public:
  explicit Builder(const WorldConfig& cfg) : cfg_(cfg), words_(mix_seed(cfg.seed, 0x77)) {
    if (cfg.n_topics == 0 || cfg.n_topics > std::size(kGenres)) throw ConfigError("world: n_topics out of range");
    if (cfg.n_items < cfg.n_topics * 10) throw ConfigError("world: too few items for the topic count");
    if (cfg.recs_per_conversation == 0) throw ConfigError("world: recs_per_conversation must be positive");
  }

  World build() {
    make_topics();
    make_items();
    World w;
    w.items = entries_;
    w.source_records = sources();
    w.conversations = conversations();
    w.interactions = interactions();
    return w;
  }

 private:
  Rng& rng() { return words_.rng(); }

  void make_topics() {
    for (std::size_t t = 0; t < cfg_.n_topics; ++t) {
      Topic tp;
      tp.genre = kGenres[t];
      for (int i = 0; i < 40; ++i) tp.vocab.push_back(words_.fresh(2));
      for (int i = 0; i < 12; ++i) tp.directors.push_back(words_.fresh_name());
      for (int i = 0; i < 30; ++i) tp.actors.push_back(words_.fresh_name());
      topics_.push_back(std::move(tp));
    }
    for (int i = 0; i < 150; ++i) general_.push_back(words_.fresh(1 + rng().below(2)));
  }

  void make_items() {
    std::set<std::string> titles;
    for (std::size_t i = 0; i < cfg_.n_items; ++i) {
      Item it;
      it.topic = i % cfg_.n_topics;
      it.side_topic = (it.topic + 1 + rng().below(cfg_.n_topics - 1)) % cfg_.n_topics;
      // Heavy-tailed popularity.
      it.popularity = 1.0 / std::pow(1.0 + double(rng().below(200)), 0.9);
      Topic& tp = topics_[it.topic];

      corpus::MovieEntry e;
      char id[16];
      std::snprintf(id, sizeof id, "m%04zu", i + 1);
      e.id = id;
      std::string title;
      do {
        const std::size_t n = 1 + rng().below(3);
        title.clear();
        for (std::size_t k = 0; k < n; ++k) {
          std::string w = words_.fresh(2);
          w[0] = char(std::toupper(w[0]));
          title += (k ? " " : "") + w;
        }
      } while (!titles.insert(title).second);
      e.title = (rng().below(4) == 0 ? "The " : "") + title;
      e.year = 1950 + int(rng().below(74));
      e.genre = {tp.genre};
      if (rng().below(3) == 0) e.genre.push_back(topics_[it.side_topic].genre);
      e.director = {pick(tp.directors, rng())};
      std::set<std::string> cast;
      while (cast.size() < 3) cast.insert(pick(tp.actors, rng()));
      e.cast.assign(cast.begin(), cast.end());

      std::set<std::string> plot_words;
      while (plot_words.size() < 6) plot_words.insert(pick(tp.vocab, rng()));
      it.plot_words.assign(plot_words.begin(), plot_words.end());
      std::vector<std::string> plot = it.plot_words;
      plot.push_back(pick(topics_[it.side_topic].vocab, rng()));
      for (int k = 0; k < 3; ++k) plot.push_back(pick(general_, rng()));
      for (std::size_t k = plot.size(); k > 1; --k) std::swap(plot[k - 1], plot[rng().below(k)]);
      std::string text;
      for (const auto& w : plot) text += (text.empty() ? "" : " ") + w;
      text[0] = char(std::toupper(text[0]));
      e.plot = text + ".";

      tp.items.push_back(i);
      items_.push_back(std::move(it));
      entries_.push_back(std::move(e));
    }
  }

  std::vector<corpus::MovieEntry> sources() {
    std::vector<corpus::MovieEntry> out = entries_;
    // Partial duplicates keyed by title and year only.
    for (std::size_t i = 0; i < entries_.size(); i += 17) {
      corpus::MovieEntry d = entries_[i];
      d.id.clear();
      d.plot.clear();
      d.cast.resize(1);
      out.push_back(std::move(d));
    }
    // Records that cannot be completed and get dropped.
    for (int i = 0; i < 5; ++i) {
      corpus::MovieEntry bad;
      bad.id = "x" + std::to_string(i);
      bad.title = "Unfinished " + words_.fresh(2);
      bad.year = 2001;
      bad.genre = {"Drama"};
      if (i % 2) bad.plot = "Lost reel.";
      out.push_back(std::move(bad));
    }
    Rng shuffle(mix_seed(cfg_.seed, 0x5e));
    for (std::size_t k = out.size(); k > 1; --k) std::swap(out[k - 1], out[shuffle.below(k)]);
    return out;
  }

  User make_user() {
    User u;
    u.main_topic = rng().below(cfg_.n_topics);
    u.side_topic = (u.main_topic + 1 + rng().below(cfg_.n_topics - 1)) % cfg_.n_topics;
    while (u.fav_directors.size() < 3) u.fav_directors.insert(pick(topics_[u.main_topic].directors, rng()));
    return u;
  }

  std::vector<double> affinity(const User& u) const {
    std::vector<double> w(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) {
      const Item& it = items_[i];
      double t = it.topic == u.main_topic ? 1.0 : it.topic == u.side_topic ? 0.3 : 0.003;
      if (it.side_topic == u.main_topic) t += 0.1;
      if (u.fav_directors.count(entries_[i].director[0])) t *= 4.0;
      w[i] = t * it.popularity;
    }
    return w;
  }

  std::size_t draw_item(std::vector<double>& w) {
    const std::size_t i = draw_weighted(w, rng());
    w[i] = 0.0;
    return i;
  }

  std::string request_text(std::size_t target) {
    const Item& it = items_[target];
    const auto& e = entries_[target];
    std::vector<std::string> kw = it.plot_words;
    for (std::size_t k = kw.size(); k > 1; --k) std::swap(kw[k - 1], kw[rng().below(k)]);
    static const char* const openers[] = {"I am in the mood for", "Could you find me", "Do you know",
                                          "I would love", "Maybe something like"};
    std::string s = std::string(openers[rng().below(std::size(openers))]) + " a " + lower(e.genre[0]) +
                    " movie about " + kw[0] + ", " + kw[1] + " and " + kw[2];
    switch (rng().below(3)) {
      case 0: s += ", ideally directed by " + e.director[0]; break;
      case 1: s += ", maybe with " + pick(e.cast, rng()); break;
      default: s += ", by " + e.director[0] + " with " + pick(e.cast, rng()); break;
    }
    return s + ".";
  }

  std::vector<Conversation> conversations() {
    std::vector<Conversation> out;
    std::size_t examples = 0;
    static const char* const reactions[] = {"Thanks, I will add it to my list.", "I have seen that one already.",
                                            "Sounds interesting.", "Not sure that is for me."};
    for (std::size_t c = 0; examples < cfg_.n_examples; ++c) {
      const User u = make_user();
      std::vector<double> w = affinity(u);
      Conversation conv;
      char id[16];
      std::snprintf(id, sizeof id, "c%05zu", c + 1);
      conv.id = id;

      std::vector<std::size_t> liked{draw_item(w), draw_item(w)};
      const std::size_t n_recs = std::min(cfg_.recs_per_conversation, cfg_.n_examples - examples);
      std::vector<std::size_t> recs;
      for (std::size_t r = 0; r < n_recs; ++r) recs.push_back(draw_item(w));

      Turn open{Role::kSeeker, "Hi! I really enjoyed " + mention(entries_[liked[0]]) + " and " +
                                   mention(entries_[liked[1]]) + ". " + request_text(recs[0]),
                {}, {mention(entries_[liked[0]]), mention(entries_[liked[1]])}};
      conv.turns.push_back(std::move(open));
      for (std::size_t r = 0; r < n_recs; ++r) {
        const auto& e = entries_[recs[r]];
        conv.turns.push_back({Role::kRecommender,
                              "You could try " + mention(e) + ", a " + lower(e.genre[0]) + " film.",
                              {},
                              {mention(e)}});
        if (r + 1 == n_recs) break;
        Turn seeker{Role::kSeeker, reactions[rng().below(std::size(reactions))], {}, {}};
        if (rng().below(3) == 0) {
          const std::size_t extra = draw_item(w);
          seeker.text += " I also liked " + mention(entries_[extra]) + ".";
          seeker.mentions.push_back(mention(entries_[extra]));
        }
        seeker.text += " " + request_text(recs[r + 1]);
        conv.turns.push_back(std::move(seeker));
      }
      examples += n_recs;
      out.push_back(std::move(conv));
    }
    return out;
  }

  std::vector<data::Interaction> interactions() {
    std::vector<data::Interaction> out;
    for (std::size_t u = 0; u < cfg_.session_users; ++u) {
      const User user = make_user();
      std::vector<double> w = affinity(user);
      long ts = 1'600'000'000L + long(rng().below(1'000'000));
      char uid[16];
      std::snprintf(uid, sizeof uid, "u%04zu", u + 1);
      const std::size_t n_sessions = 1 + rng().below(3);
      for (std::size_t s = 0; s < n_sessions; ++s) {
        const std::size_t len = 4 + rng().below(9);
        for (std::size_t k = 0; k < len; ++k) {
          out.push_back({uid, entries_[draw_item(w)].id, ts});
          ts += 60 + long(rng().below(1200));
        }
        ts += 86'400;
      }
    }
    return out;
  }

  WorldConfig cfg_;
  Words words_;
  std::vector<Topic> topics_;
  std::vector<std::string> general_;
  std::vector<Item> items_;
  std::vector<corpus::MovieEntry> entries_;
};

}  // namespace

World make_world(const WorldConfig& cfg) { return Builder(cfg).build(); }

}  // namespace rar::world
