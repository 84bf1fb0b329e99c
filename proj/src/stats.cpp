#include "lungsynth/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "lungsynth/error.hpp"

namespace lungsynth {

namespace {

struct Ranked {
  std::vector<long> doubled;  // 2 x midrank, index-aligned with xs then ys
  double tie_term = 0.0;      // sum of t^3 - t over tie groups
  bool all_equal = false;
  bool same_sample = false;  // xs and ys equal as multisets
};

Ranked midranks(std::span<const double> xs, std::span<const double> ys) {
  if (xs.empty() || ys.empty()) throw ContractError("rank_sum_test: both samples need at least one value");
  std::vector<double> all(xs.begin(), xs.end());
  all.insert(all.end(), ys.begin(), ys.end());
  for (double v : all) {
    if (std::isnan(v)) throw ContractError("rank_sum_test: NaN value");
  }
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return all[a] < all[b]; });
  Ranked r;
  r.doubled.resize(all.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && all[order[j + 1]] == all[order[i]]) ++j;
    // Ranks i+1 .. j+1 share the midrank (i + j + 2) / 2.
    const long d = static_cast<long>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) r.doubled[order[k]] = d;
    const double t = static_cast<double>(j - i + 1);
    r.tie_term += t * t * t - t;
    i = j + 1;
  }
  std::vector<double> sx(xs.begin(), xs.end()), sy(ys.begin(), ys.end());
  std::sort(sx.begin(), sx.end());
  std::sort(sy.begin(), sy.end());
  r.same_sample = sx == sy;
  r.all_equal = all.size() > 1 && all.front() == all.back() &&
                std::all_of(all.begin(), all.end(), [&](double v) { return v == all.front(); });
  return r;
}

RankSumResult base_result(const Ranked& r, std::size_t n) {
  RankSumResult out;
  const long w2 = std::accumulate(r.doubled.begin(), r.doubled.begin() + static_cast<std::ptrdiff_t>(n), 0L);
  out.rank_sum = w2 / 2.0;
  out.u = out.rank_sum - static_cast<double>(n * (n + 1)) / 2.0;
  return out;
}

}  // namespace

RankSumResult rank_sum_exact(std::span<const double> xs, std::span<const double> ys) {
  const auto r = midranks(xs, ys);
  const std::size_t n = xs.size(), total = r.doubled.size();
  auto out = base_result(r, n);
  out.exact = true;
  if (r.all_equal || r.same_sample) {
    out.degenerate = true;
    return out;
  }
  const long max_sum = std::accumulate(r.doubled.begin(), r.doubled.end(), 0L);
  // ways[j][s]: subsets of size j with doubled rank sum s.
  std::vector<std::vector<double>> ways(n + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
  ways[0][0] = 1.0;
  for (std::size_t k = 0; k < total; ++k) {
    const auto d = static_cast<std::size_t>(r.doubled[k]);
    for (std::size_t j = std::min(n, k + 1); j >= 1; --j) {
      auto& dst = ways[j];
      const auto& src = ways[j - 1];
      for (std::size_t s = static_cast<std::size_t>(max_sum); s >= d; --s) dst[s] += src[s - d];
    }
  }
  const long w2 = static_cast<long>(std::lround(2.0 * out.rank_sum));
  const long e2 = static_cast<long>(n * (total + 1));  // 2 x expected rank sum
  const long dev = std::abs(w2 - e2);
  double hit = 0.0, all = 0.0;
  for (std::size_t s = 0; s < ways[n].size(); ++s) {
    all += ways[n][s];
    if (std::abs(static_cast<long>(s) - e2) >= dev) hit += ways[n][s];
  }
  out.p = std::min(1.0, hit / all);
  return out;
}

RankSumResult rank_sum_normal(std::span<const double> xs, std::span<const double> ys) {
  const auto r = midranks(xs, ys);
  const double n = static_cast<double>(xs.size()), m = static_cast<double>(ys.size());
  const double total = n + m;
  auto out = base_result(r, xs.size());
  const double var = n * m / 12.0 * ((total + 1.0) - r.tie_term / (total * (total - 1.0)));
  if (r.all_equal || r.same_sample || !(var > 0.0)) {
    out.degenerate = true;
    return out;
  }
  const double z = (std::abs(out.u - n * m / 2.0) - 0.5) / std::sqrt(var);
  out.p = z <= 0.0 ? 1.0 : std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

RankSumResult rank_sum_test(std::span<const double> xs, std::span<const double> ys) {
  return xs.size() + ys.size() <= 20 ? rank_sum_exact(xs, ys) : rank_sum_normal(xs, ys);
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace lungsynth
