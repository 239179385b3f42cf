#pragma once

#include <span>
#include <vector>

namespace anchorlab::stats {

double mean(std::span<const double> v);

// Ranks 1..n with ties sharing their average rank. `descending` ranks the
// largest value first.
std::vector<double> average_ranks(std::span<const double> v, bool descending = false);

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

// One-sided exact sign test for "x > y" on paired samples; ties are dropped.
// Returns P(at least the observed number of wins | p = 1/2).
double sign_test_greater(std::span<const double> x, std::span<const double> y);

}  // namespace anchorlab::stats
