#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "rar/candidate_set.hpp"
#include "rar/common.hpp"
#include "rar/corpus_store.hpp"

namespace testing {

inline rar::corpus::EmbeddingTable random_table(std::size_t n, std::size_t dim, std::uint64_t seed) {
  rar::corpus::EmbeddingTable t(dim, "test");
  rar::Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    rar::Vec v(dim);
    for (double& x : v) x = rng.normal();
    const double norm = rar::l2_norm(v);
    for (double& x : v) x /= norm;
    char id[16];
    std::snprintf(id, sizeof id, "i%03zu", i);
    t.add(id, v);
  }
  return t;
}

inline rar::ScoredPool random_pool(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  rar::ScoredPool p;
  rar::Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    p.ids.push_back("p" + std::to_string(i));
    p.scores.push_back(scale * rng.normal());
    p.rows.push_back(i);
  }
  return p;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

inline rar::corpus::MovieEntry movie(std::string id, std::string title, int year, std::string director = "Someone",
                                     std::string plot = "A plot.") {
  rar::corpus::MovieEntry e;
  e.id = std::move(id);
  e.title = std::move(title);
  e.year = year;
  e.genre = {"Drama"};
  e.director = {std::move(director)};
  e.cast = {"Actor One", "Actor Two"};
  e.plot = std::move(plot);
  return e;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("rar_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace testing
