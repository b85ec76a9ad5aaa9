#pragma once

// Pooling over hidden-state rows and the two similarity measures used for
// evaluation. All accumulation happens in double regardless of how the
// states were produced.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "echoembed/backend.hpp"
#include "echoembed/error.hpp"

namespace echoembed {

enum class Pooling { mean, last, sequence_last };

constexpr std::string_view to_string(Pooling p) noexcept {
  switch (p) {
    case Pooling::mean: return "mean";
    case Pooling::last: return "last";
    case Pooling::sequence_last: return "sequence-last";
  }
  return "?";
}

inline Pooling parse_pooling(std::string_view name) {
  if (name == "mean") return Pooling::mean;
  if (name == "last") return Pooling::last;
  if (name == "sequence-last") return Pooling::sequence_last;
  throw Error(Errc::invalid_config, "unknown pooling '" + std::string(name) + "'");
}

struct PooledEmbedding {
  std::vector<double> values;
  Pooling pooling = Pooling::mean;
  std::size_t cardinality = 0;  // number of rows pooled

  std::size_t dim() const noexcept { return values.size(); }
};

inline PooledEmbedding mean_pool(const HiddenStates& states, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(Errc::empty_selection, "mean pooling over an empty index set");
  PooledEmbedding out{std::vector<double>(states.dim, 0.0), Pooling::mean, indices.size()};
  for (auto idx : indices) {
    if (idx >= states.rows) {
      throw Error(Errc::index_out_of_range,
                  "row " + std::to_string(idx) + " of " + std::to_string(states.rows));
    }
    const auto row = states.row(idx);
    for (std::size_t j = 0; j < states.dim; ++j) out.values[j] += row[j];
  }
  const double n = static_cast<double>(indices.size());
  for (auto& v : out.values) v /= n;
  return out;
}

inline PooledEmbedding last_pool(const HiddenStates& states) {
  if (states.rows == 0) throw Error(Errc::empty_sequence, "last-token pooling of an empty sequence");
  const auto row = states.row(states.rows - 1);
  return {std::vector<double>(row.begin(), row.end()), Pooling::last, 1};
}

namespace detail {

inline double dot(std::span<const double> u, std::span<const double> v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

}  // namespace detail

inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error(Errc::dimension_mismatch, std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  const double uu = detail::dot(u, u);
  const double vv = detail::dot(v, v);
  if (!(uu > 0.0) || !(vv > 0.0)) throw Error(Errc::zero_vector, "cosine of a zero vector");
  // sqrt(uu * vv) rather than sqrt(uu) * sqrt(vv): for u == v this is exactly uu.
  const double c = detail::dot(u, v) / std::sqrt(uu * vv);
  return std::clamp(c, -1.0, 1.0);
}

inline double cosine(const PooledEmbedding& a, const PooledEmbedding& b) { return cosine(a.values, b.values); }

inline double euclidean(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error(Errc::dimension_mismatch, std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += (u[i] - v[i]) * (u[i] - v[i]);
  return std::sqrt(acc);
}

inline double euclidean(const PooledEmbedding& a, const PooledEmbedding& b) {
  return euclidean(a.values, b.values);
}

}  // namespace echoembed
