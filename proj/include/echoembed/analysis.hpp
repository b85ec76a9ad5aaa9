#pragma once

// Failure-mode analytics over scored sentence pairs: how far each pair's
// predicted rank lands from its gold rank, split by whether the pair is
// similar in its first or its second half.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "echoembed/error.hpp"
#include "echoembed/pooling.hpp"

namespace echoembed {

struct ScoredPair {
  std::string x;
  std::string y;
  double gold_score = 0.0;
  double predicted_sim = 0.0;
};

enum class Half { first, second };

/// 1-based ascending ranks; tied values share the average of their ranks.
template <typename Range>
std::vector<double> average_ranks(const Range& values) {
  const std::size_t n = std::size(values);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

/// Err_i = rank(predicted_i) - rank(gold_i). Positive means the pair's
/// similarity was overestimated.
inline std::vector<double> rank_error(const std::vector<ScoredPair>& pairs) {
  if (pairs.size() < 2) throw Error(Errc::too_few_pairs, "rank error needs at least 2 pairs");
  std::vector<double> pred, gold;
  for (const auto& p : pairs) {
    if (!std::isfinite(p.gold_score)) throw Error(Errc::invalid_config, "gold score must be finite");
    pred.push_back(p.predicted_sim);
    gold.push_back(p.gold_score);
  }
  const auto rp = average_ranks(pred);
  const auto rg = average_ranks(gold);
  std::vector<double> err(pairs.size());
  for (std::size_t i = 0; i < err.size(); ++i) err[i] = rp[i] - rg[i];
  return err;
}

/// Pearson correlation of average ranks.
inline double spearman(const std::vector<double>& pred, const std::vector<double>& gold) {
  if (pred.size() != gold.size()) throw Error(Errc::dimension_mismatch, "spearman inputs differ in length");
  if (pred.size() < 2) throw Error(Errc::too_few_pairs, "spearman needs at least 2 values");
  const auto a = average_ranks(pred);
  const auto b = average_ranks(gold);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw Error(Errc::constant_input, "spearman of a constant sequence");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// First ceil(w/2) words, then the rest. Both halves are slices of the input.
inline std::pair<std::string, std::string> split_halves(std::string_view sentence) {
  std::vector<std::pair<std::size_t, std::size_t>> words;
  std::size_t i = 0;
  while (i < sentence.size()) {
    while (i < sentence.size() && std::isspace(static_cast<unsigned char>(sentence[i]))) ++i;
    if (i == sentence.size()) break;
    const auto b = i;
    while (i < sentence.size() && !std::isspace(static_cast<unsigned char>(sentence[i]))) ++i;
    words.emplace_back(b, i);
  }
  if (words.size() < 2) throw Error(Errc::too_short, "need at least 2 words to split");
  const auto k = (words.size() + 1) / 2;
  return {std::string(sentence.substr(words.front().first, words[k - 1].second - words.front().first)),
          std::string(sentence.substr(words[k].first, words.back().second - words[k].first))};
}

using TextEmbedFn = std::function<PooledEmbedding(const std::string&)>;

/// Indices of the top ceil(fraction * n) pairs by cosine similarity of the
/// chosen halves under `reference`. Pairs with a one-word sentence are not
/// eligible. Equal scores keep input order.
inline std::vector<std::size_t> select_top_fraction(const std::vector<ScoredPair>& pairs, const TextEmbedFn& reference,
                                                    Half half, double fraction = 0.1) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(Errc::invalid_config, "fraction must be in (0, 1]");
  std::vector<std::pair<std::size_t, double>> scored;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::pair<std::string, std::string> hx, hy;
    try {
      hx = split_halves(pairs[i].x);
      hy = split_halves(pairs[i].y);
    } catch (const Error& e) {
      if (e.code() == Errc::too_short) continue;
      throw;
    }
    const auto& a = half == Half::first ? hx.first : hx.second;
    const auto& b = half == Half::first ? hy.first : hy.second;
    scored.emplace_back(i, cosine(reference(a), reference(b)));
  }
  if (scored.empty()) throw Error(Errc::empty_subset, "no pair has two splittable sentences");
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(scored.size()) - 1e-9));
  if (k == 0) throw Error(Errc::empty_subset, "fraction selects no pairs");
  std::stable_sort(scored.begin(), scored.end(), [](const auto& l, const auto& r) { return l.second > r.second; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].first);
  std::sort(out.begin(), out.end());
  return out;
}

struct SubsetErrors {
  std::vector<std::size_t> members;
  std::vector<double> errors;
  std::map<long long, std::size_t> histogram;  // bin start (multiple of bin width) -> count
  double mean = 0.0;
};

struct OverestimationReport {
  std::vector<double> errors;  // every pair
  SubsetErrors first_half;
  SubsetErrors second_half;
  double bin_width = 1.0;
};

namespace detail {

inline SubsetErrors subset_errors(const std::vector<double>& err, std::vector<std::size_t> members, double bin_width) {
  if (members.empty()) throw Error(Errc::empty_subset, "subset is empty");
  SubsetErrors s;
  s.members = std::move(members);
  double total = 0.0;
  for (auto i : s.members) {
    s.errors.push_back(err.at(i));
    total += err[i];
    ++s.histogram[static_cast<long long>(std::floor(err[i] / bin_width)) * static_cast<long long>(bin_width)];
  }
  s.mean = total / static_cast<double>(s.members.size());
  return s;
}

}  // namespace detail

/// Rank errors over the whole dataset, reported for two subsets.
inline OverestimationReport overestimation_report(const std::vector<ScoredPair>& pairs,
                                                  const std::vector<std::size_t>& first_subset,
                                                  const std::vector<std::size_t>& second_subset,
                                                  double bin_width = 1.0) {
  if (!(bin_width >= 1.0)) throw Error(Errc::invalid_config, "bin width must be >= 1");
  bin_width = std::floor(bin_width);
  OverestimationReport r;
  r.bin_width = bin_width;
  r.errors = rank_error(pairs);
  r.first_half = detail::subset_errors(r.errors, first_subset, bin_width);
  r.second_half = detail::subset_errors(r.errors, second_subset, bin_width);
  return r;
}

/// Fills predicted_sim from `strategy`, picks subsets with `reference`.
inline OverestimationReport overestimation_report(std::vector<ScoredPair> pairs, const TextEmbedFn& strategy,
                                                  const TextEmbedFn& reference, double fraction = 0.1,
                                                  double bin_width = 1.0) {
  for (auto& p : pairs) p.predicted_sim = cosine(strategy(p.x), strategy(p.y));
  const auto first = select_top_fraction(pairs, reference, Half::first, fraction);
  const auto second = select_top_fraction(pairs, reference, Half::second, fraction);
  return overestimation_report(pairs, first, second, bin_width);
}

/// CSV with columns subset,err_bin,count; each subset ends with a
/// "<subset>,mean,<value>" row.
inline void write_report_csv(const OverestimationReport& r, std::ostream& out) {
  out << "subset,err_bin,count\n";
  for (const auto* s : {&r.first_half, &r.second_half}) {
    const char* name = s == &r.first_half ? "first_half" : "second_half";
    for (const auto& [bin, count] : s->histogram) out << name << ',' << bin << ',' << count << '\n';
    out << name << ",mean," << s->mean << '\n';
  }
}

/// One JSON object per line: {"x", "y", "score"}.
inline std::vector<ScoredPair> parse_pairs(std::istream& in) {
  std::vector<ScoredPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c) != 0; })) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("x").get<std::string>(), j.at("y").get<std::string>(), j.at("score").get<double>(), 0.0});
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::malformed_row, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace echoembed
