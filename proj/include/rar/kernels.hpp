#pragma once

// Data-parallel kernels used on the hot paths. Each OpenMP kernel keeps a
// serial reference next to it; tests pin them against each other and the
// benchmark target times both.

#include <cstddef>
#include <span>
#include <vector>

#include "rar/common.hpp"

namespace rar::kernels {

/// out[r] = dot(rows[r], query) for every row of a row-major matrix.
void score_rows(const Matrix& rows, std::span<const double> query, std::span<double> out);
void score_rows_serial(const Matrix& rows, std::span<const double> query, std::span<double> out);

/// Same, restricted to the listed row indices; out has one slot per index.
void score_selected(const Matrix& rows, std::span<const std::size_t> which,
                    std::span<const double> query, std::span<double> out);

/// Diagonal linear recurrence h_t = lambda * h_{t-1} + b_t with h_0 = 0.
/// `b` holds b_1..b_T and is overwritten with h_1..h_T.
void recurrence_serial(std::span<const double> lambda, std::vector<Vec>& b);

/// Inclusive Brent-Kung scan over the affine pairs (a, b) with
/// (a1, b1) then (a2, b2) -> (a2 * a1, a2 * b1 + b2). Same contract as
/// recurrence_serial. Returns the number of pair combines performed, which
/// never exceeds 2T.
std::size_t recurrence_scan(std::span<const double> lambda, std::vector<Vec>& b);

/// ys[t] = M xs[t] for every t.
std::vector<Vec> matvec_all(const Matrix& m, const std::vector<Vec>& xs);
std::vector<Vec> matvec_all_serial(const Matrix& m, const std::vector<Vec>& xs);

}  // namespace rar::kernels
