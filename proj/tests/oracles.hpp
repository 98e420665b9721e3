#pragma once

// Reference implementations used only by the tests. They share no code with the
// library and favour exactness over speed.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace oracle {

using IntMatrix = std::vector<std::vector<std::int64_t>>;

// Fraction-free Gaussian elimination; exact for small integer matrices.
inline std::size_t bareiss_rank(IntMatrix a) {
  const std::size_t rows = a.size();
  if (rows == 0) return 0;
  const std::size_t cols = a[0].size();
  std::size_t rank = 0;
  std::int64_t prev = 1;
  for (std::size_t c = 0; c < cols && rank < rows; ++c) {
    std::size_t pivot = rank;
    while (pivot < rows && a[pivot][c] == 0) ++pivot;
    if (pivot == rows) continue;
    std::swap(a[pivot], a[rank]);
    for (std::size_t r = rank + 1; r < rows; ++r) {
      for (std::size_t k = c + 1; k < cols; ++k) a[r][k] = (a[rank][c] * a[r][k] - a[r][c] * a[rank][k]) / prev;
      a[r][c] = 0;
    }
    prev = a[rank][c];
    ++rank;
  }
  return rank;
}

inline std::int64_t bareiss_det(IntMatrix a) {
  const std::size_t n = a.size();
  std::int64_t sign = 1, prev = 1;
  for (std::size_t k = 0; k < n; ++k) {
    if (a[k][k] == 0) {
      std::size_t p = k + 1;
      while (p < n && a[p][k] == 0) ++p;
      if (p == n) return 0;
      std::swap(a[p], a[k]);
      sign = -sign;
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      for (std::size_t j = k + 1; j < n; ++j) a[i][j] = (a[k][k] * a[i][j] - a[i][k] * a[k][j]) / prev;
    }
    prev = a[k][k];
  }
  return sign * a[n - 1][n - 1];
}

inline IntMatrix left_cols(const IntMatrix& a, std::size_t m) {
  IntMatrix out(a.size());
  for (std::size_t r = 0; r < a.size(); ++r) out[r].assign(a[r].begin(), a[r].begin() + static_cast<long>(m));
  return out;
}

inline IntMatrix pick_cols(const IntMatrix& a, const std::vector<std::size_t>& cols) {
  IntMatrix out(a.size(), std::vector<std::int64_t>(cols.size()));
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t j = 0; j < cols.size(); ++j) out[r][j] = a[r][cols[j]];
  return out;
}

struct Selection {
  std::size_t prefix = 0;
  std::vector<std::size_t> columns;
};

// Shortest full-rank prefix, then the lexicographically first nonsingular column
// subset inside it, by exhaustive enumeration.
inline std::optional<Selection> brute_force_selection(const IntMatrix& a) {
  const std::size_t need = a.size();
  const std::size_t cols = a[0].size();
  std::size_t prefix = 0;
  for (std::size_t m = need; m <= cols; ++m) {
    if (bareiss_rank(left_cols(a, m)) == need) {
      prefix = m;
      break;
    }
  }
  if (prefix == 0) return std::nullopt;
  std::vector<std::size_t> idx(need);
  for (std::size_t i = 0; i < need; ++i) idx[i] = i;
  while (true) {
    if (bareiss_det(pick_cols(a, idx)) != 0) return Selection{prefix, idx};
    // next combination in lexicographic order
    std::size_t i = need;
    while (i > 0 && idx[i - 1] == prefix - need + i - 1) --i;
    if (i == 0) return std::nullopt;
    ++idx[i - 1];
    for (std::size_t j = i; j < need; ++j) idx[j] = idx[j - 1] + 1;
  }
}

inline Eigen::MatrixXd to_eigen(const IntMatrix& a) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(a[0].size()));
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < a[0].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
        static_cast<double>(a[r][c]);
  return m;
}

// Entry code `code` in base 4 over {-1, 0, 1, 2}.
inline IntMatrix decode(std::uint64_t code, std::size_t rows, std::size_t cols) {
  IntMatrix a(rows, std::vector<std::int64_t>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      a[r][c] = static_cast<std::int64_t>(code % 4) - 1;
      code /= 4;
    }
  }
  return a;
}

inline IntMatrix random_entries(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::uniform_int_distribution<int> d(-1, 2);
  IntMatrix a(rows, std::vector<std::int64_t>(cols));
  for (auto& row : a)
    for (auto& v : row) v = d(rng);
  return a;
}

// Sample mean and its standard error.
struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  double s = 0.0, s2 = 0.0;
  for (double x : v) {
    s += x;
    s2 += x * x;
  }
  const double n = static_cast<double>(v.size());
  const double mean = s / n;
  const double var = n > 1 ? (s2 - n * mean * mean) / (n - 1.0) : 0.0;
  return {mean, std::sqrt(std::max(var, 0.0) / n)};
}

}  // namespace oracle
