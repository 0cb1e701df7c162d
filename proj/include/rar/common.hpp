#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rar {

using Vec = std::vector<double>;

/// Base of every error thrown by the engine. The CLI maps `kind()` onto exit
/// codes, so subclasses only need to pick a kind.
class Error : public std::runtime_error {
 public:
  enum class Kind { kUsage, kRuntime };

  explicit Error(const std::string& what, Kind kind = Kind::kRuntime)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct IngestError : Error {
  using Error::Error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct LookupError : Error {
  using Error::Error;
};
struct TransportError : Error {
  using Error::Error;
};
struct ProtocolError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(what, Kind::kUsage) {}
};

/// Row-major dense matrix. Small enough that a hand-rolled type beats pulling
/// in a linear algebra dependency for the handful of ops the retriever needs.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

/// y = M x
Vec matvec(const Matrix& m, std::span<const double> x);
/// y = M^T x
Vec matvec_t(const Matrix& m, std::span<const double> x);
/// M += alpha * a b^T
void add_outer(Matrix& m, std::span<const double> a, std::span<const double> b, double alpha = 1.0);

// Seeding. All randomness in a run derives from a single root seed; named
// streams keep components independently reproducible.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_string(std::string_view s);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);
std::uint64_t stream_seed(std::uint64_t root, std::string_view stream);

/// mt19937_64 plus distribution helpers written out by hand so draws are
/// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in the open interval (0, 1).
  double uniform();
  double normal();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  double gumbel();

 private:
  std::mt19937_64 engine_;
};

}  // namespace rar
