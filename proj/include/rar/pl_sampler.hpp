#pragma once

#include <cstdint>

#include "rar/candidate_set.hpp"

namespace rar::pl {

/// Draws k items without replacement, step i picking j with probability
/// exp(s_j / T) / sum over the remaining pool. Implemented with Gumbel-top-k:
/// perturb s / T with iid Gumbel noise and keep the k largest, in order.
CandidateSet sample_set(const ScoredPool& pool, std::size_t k, std::uint64_t seed,
                        double temperature = 1.0);

/// Plackett-Luce log-likelihood of the ordered set under the pool's scores:
///   sum_i [ s_sigma(i) / T - logsumexp_{j in pool minus chosen so far} s_j / T ]
double set_log_prob(const ScoredPool& pool, const CandidateSet& set, double temperature = 1.0);

/// d set_log_prob / d s_j for every pool entry, in pool order:
///   (1/T) sum_i [ 1{j = sigma(i)} - softmax_i(j) ]
/// where softmax_i runs over the step-i remaining pool.
Vec set_log_prob_grad(const ScoredPool& pool, const CandidateSet& set, double temperature = 1.0);

}  // namespace rar::pl
