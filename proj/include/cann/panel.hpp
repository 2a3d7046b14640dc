#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cann/count_distributions.hpp"
#include "cann/error.hpp"

namespace cann {

/// Vehicle grouping of the rows of a data split. Each group lists the row
/// indices of one vehicle's contracts in chronological order.
struct Panel {
  std::vector<std::vector<std::size_t>> groups;

  /// Every row is its own vehicle (no history anywhere).
  static Panel singletons(std::size_t n) {
    Panel p;
    p.groups.reserve(n);
    for (std::size_t i = 0; i < n; ++i) p.groups.push_back({i});
    return p;
  }

  std::size_t row_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.size();
    return n;
  }

  /// Throws unless the groups partition {0, ..., n-1}.
  void validate(std::size_t n) const {
    std::vector<char> seen(n, 0);
    std::size_t total = 0;
    for (const auto& g : groups) {
      for (std::size_t r : g) {
        if (r >= n || seen[r]) throw DataError("panel groups must partition the rows");
        seen[r] = 1;
        ++total;
      }
    }
    if (total != n) throw DataError("panel does not cover every row");
  }
};

/// Past-claims sums per row. They depend only on the observed counts.
inline std::vector<Count> past_claims(const Panel& panel, std::span<const Count> y) {
  std::vector<Count> out(y.size(), 0);
  for (const auto& g : panel.groups) {
    Count acc = 0;
    for (std::size_t r : g) {
      out[r] = acc;
      acc += y[r];
    }
  }
  return out;
}

/// Past-mu sums per row for the given per-row means.
inline std::vector<double> past_mu(const Panel& panel, std::span<const double> mu) {
  std::vector<double> out(mu.size(), 0.0);
  for (const auto& g : panel.groups) {
    double acc = 0.0;
    for (std::size_t r : g) {
      out[r] = acc;
      acc += mu[r];
    }
  }
  return out;
}

inline std::vector<HistoryState> build_history(const Panel& panel, std::span<const Count> y,
                                               std::span<const double> mu) {
  if (y.size() != mu.size()) throw ShapeError("build_history: y and mu differ in length");
  const auto py = past_claims(panel, y);
  const auto pm = past_mu(panel, mu);
  std::vector<HistoryState> h(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) h[i] = {py[i], pm[i]};
  return h;
}

}  // namespace cann
