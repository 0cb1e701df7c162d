#include "rar/kernels.hpp"

namespace rar::kernels {

namespace {

void check_score_shapes(const Matrix& rows, std::span<const double> query, std::size_t out_size,
                        std::size_t expected_out) {
  if (query.size() != rows.cols) {
    throw DimensionError("query length " + std::to_string(query.size()) + " vs table dim " +
                         std::to_string(rows.cols));
  }
  if (out_size != expected_out) throw DimensionError("score output buffer has the wrong size");
}

inline double row_dot(const double* row, const double* q, std::size_t d) {
  double s = 0.0;
  for (std::size_t c = 0; c < d; ++c) s += row[c] * q[c];
  return s;
}

}  // namespace

void score_rows(const Matrix& rows, std::span<const double> query, std::span<double> out) {
  check_score_shapes(rows, query, out.size(), rows.rows);
  const auto n = static_cast<std::ptrdiff_t>(rows.rows);
  const std::size_t d = rows.cols;
  const double* base = rows.data.data();
  const double* q = query.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) out[r] = row_dot(base + r * d, q, d);
}

void score_rows_serial(const Matrix& rows, std::span<const double> query, std::span<double> out) {
  check_score_shapes(rows, query, out.size(), rows.rows);
  for (std::size_t r = 0; r < rows.rows; ++r) {
    out[r] = row_dot(rows.data.data() + r * rows.cols, query.data(), rows.cols);
  }
}

void score_selected(const Matrix& rows, std::span<const std::size_t> which,
                    std::span<const double> query, std::span<double> out) {
  check_score_shapes(rows, query, out.size(), which.size());
  const auto n = static_cast<std::ptrdiff_t>(which.size());
  const std::size_t d = rows.cols;
  for (std::size_t r : which) {
    if (r >= rows.rows) throw LookupError("score_selected: row out of range");
  }
#pragma omp parallel for schedule(static) if (n > 512)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = row_dot(rows.data.data() + which[i] * d, query.data(), d);
}

void recurrence_serial(std::span<const double> lambda, std::vector<Vec>& b) {
  const std::size_t h = lambda.size();
  for (std::size_t t = 1; t < b.size(); ++t) {
    for (std::size_t i = 0; i < h; ++i) b[t][i] += lambda[i] * b[t - 1][i];
  }
}

std::size_t recurrence_scan(std::span<const double> lambda, std::vector<Vec>& b) {
  const std::size_t n = b.size();
  const std::size_t h = lambda.size();
  std::vector<Vec> a(n, Vec(lambda.begin(), lambda.end()));
  std::size_t combines = 0;

  // x[i] <- x[i - s] then x[i]
  auto sweep = [&](std::size_t first, std::size_t s) {
    if (first >= n) return;
    const auto count = static_cast<std::ptrdiff_t>((n - 1 - first) / (2 * s) + 1);
#pragma omp parallel for schedule(static) if (count * static_cast<std::ptrdiff_t>(h) > 4096)
    for (std::ptrdiff_t k = 0; k < count; ++k) {
      const std::size_t i = first + static_cast<std::size_t>(k) * 2 * s;
      Vec& a2 = a[i];
      Vec& b2 = b[i];
      const Vec& a1 = a[i - s];
      const Vec& b1 = b[i - s];
      for (std::size_t j = 0; j < h; ++j) {
        b2[j] += a2[j] * b1[j];
        a2[j] *= a1[j];
      }
    }
    combines += static_cast<std::size_t>(count);
  };

  std::size_t top = 0;
  for (std::size_t s = 1; s < n; s *= 2) {
    sweep(2 * s - 1, s);
    top = s;
  }
  for (std::size_t s = top; s >= 1; s /= 2) sweep(3 * s - 1, s);
  return combines;
}

std::vector<Vec> matvec_all(const Matrix& m, const std::vector<Vec>& xs) {
  std::vector<Vec> ys(xs.size());
  const auto n = static_cast<std::ptrdiff_t>(xs.size());
  for (const auto& x : xs) {
    if (x.size() != m.cols) throw DimensionError("matvec_all: input length mismatch");
  }
#pragma omp parallel for schedule(static) if (n * static_cast<std::ptrdiff_t>(m.rows * m.cols) > 65536)
  for (std::ptrdiff_t t = 0; t < n; ++t) ys[t] = matvec(m, xs[t]);
  return ys;
}

std::vector<Vec> matvec_all_serial(const Matrix& m, const std::vector<Vec>& xs) {
  std::vector<Vec> ys;
  ys.reserve(xs.size());
  for (const auto& x : xs) ys.push_back(matvec(m, x));
  return ys;
}

}  // namespace rar::kernels
