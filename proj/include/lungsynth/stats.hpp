#pragma once

#include <span>
#include <string>

namespace lungsynth {

struct RankSumResult {
  double p = 1.0;          // two-sided
  double rank_sum = 0.0;   // sum of midranks of the first sample
  double u = 0.0;          // rank_sum - n(n+1)/2
  bool exact = false;      // exact null distribution (n + m <= 20)
  bool degenerate = false; // all values identical or both samples equal; p = 1
};

// Wilcoxon rank-sum (Mann-Whitney) test with midranks for ties. For n + m
// <= 20 the p-value comes from the exact permutation distribution of the
// midrank sum; otherwise from the normal approximation with tie and
// continuity corrections.
RankSumResult rank_sum_test(std::span<const double> xs, std::span<const double> ys);

// Forces one method regardless of size (used to compare the two).
RankSumResult rank_sum_exact(std::span<const double> xs, std::span<const double> ys);
RankSumResult rank_sum_normal(std::span<const double> xs, std::span<const double> ys);

// Sample mean and standard deviation (n - 1 denominator; 0 for n < 2).
double mean_of(std::span<const double> v);
double stddev_of(std::span<const double> v);

}  // namespace lungsynth
