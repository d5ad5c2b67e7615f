#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "forward.hpp"
#include "heads.hpp"

namespace vlinspect {

inline constexpr double kDefaultEnergy = 0.9;
inline constexpr double kRowSumTolerance = 1e-4;
// Float rows like 50 x 0.02f sum to slightly under the exact prefix mass, so
// the cumulative comparison gets a little slack.
inline constexpr double kEnergyTolerance = 1e-6;
inline constexpr double kDefaultFilterThreshold = 0.5;

struct KNumber {
  std::size_t k_tokens = 0;
  double k_norm = 0.0;
};

// Smallest number of largest cells whose mass reaches `energy`, also given
// as a fraction of the row length.
inline KNumber k_number_row(std::span<const float> row, double energy = kDefaultEnergy) {
  if (row.empty()) throw InvalidArgument("k_number_row: empty row");
  if (!(energy > 0.0 && energy < 1.0)) throw InvalidArgument("k_number_row: energy must be in (0,1)");
  double total = 0.0;
  for (float x : row) {
    if (!std::isfinite(x) || x < 0.0f) throw InvalidArgument("k_number_row: row has a negative or non-finite cell");
    total += x;
  }
  if (std::abs(total - 1.0) > kRowSumTolerance) {
    throw InvalidArgument("k_number_row: row sums to " + std::to_string(total) + ", not 1");
  }
  std::vector<float> sorted(row.begin(), row.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cum = 0.0;
  std::size_t k = sorted.size();
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    cum += sorted[i];
    if (cum >= energy - kEnergyTolerance) {
      k = i + 1;
      break;
    }
  }
  return {k, static_cast<double>(k) / static_cast<double>(row.size())};
}

enum class Agg { min, median, max };

inline std::string_view to_string(Agg a) {
  switch (a) {
    case Agg::min: return "min";
    case Agg::median: return "median";
    case Agg::max: return "max";
  }
  return "?";
}

inline std::optional<Agg> parse_agg(std::string_view s) {
  if (s == "min") return Agg::min;
  if (s == "median") return Agg::median;
  if (s == "max") return Agg::max;
  return std::nullopt;
}

// Median of an even count is the lower-middle element.
inline double aggregate(std::vector<double> values, Agg agg) {
  if (values.empty()) throw InvalidArgument("aggregate: no values");
  switch (agg) {
    case Agg::min: return *std::min_element(values.begin(), values.end());
    case Agg::max: return *std::max_element(values.begin(), values.end());
    case Agg::median: {
      const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
      std::nth_element(values.begin(), mid, values.end());
      return *mid;
    }
  }
  return 0.0;
}

// Upper bounds of buckets 0..2 on normalized k; bucket 3 is everything above.
struct BucketThresholds {
  std::array<double, 3> upper{0.12, 0.30, 0.60};
};

inline int bucketize(double k_norm, const BucketThresholds& t = {}) {
  if (!(k_norm > 0.0 && k_norm <= 1.0)) throw InvalidArgument("bucketize: k must be in (0,1], got " + std::to_string(k_norm));
  for (int b = 0; b < 3; ++b) {
    if (k_norm < t.upper[static_cast<std::size_t>(b)]) return b;
  }
  return 3;
}

struct KSummary {
  HeadId head;
  std::vector<double> per_row_k;
  double aggregate = 0.0;
  Agg agg = Agg::median;
  int bucket = 0;
};

inline KSummary summarize_head(const AttentionMap& map, Agg agg, const BucketThresholds& t = {},
                               double energy = kDefaultEnergy) {
  KSummary s;
  s.head = map.head;
  s.agg = agg;
  s.per_row_k.reserve(map.rows());
  for (std::size_t r = 0; r < map.rows(); ++r) s.per_row_k.push_back(k_number_row(map.cells.row(r), energy).k_norm);
  s.aggregate = aggregate(s.per_row_k, agg);
  s.bucket = bucketize(s.aggregate, t);
  return s;
}

inline std::vector<KSummary> summarize_all(const ForwardResult& r, Agg agg, const BucketThresholds& t = {}) {
  std::vector<KSummary> out;
  out.reserve(r.maps.size());
  for (const auto& m : r.maps) out.push_back(summarize_head(m, agg, t));
  return out;
}

// --- head filtering --------------------------------------------------------

enum class SelectionKind { cell, row, col };

inline std::optional<SelectionKind> parse_selection_kind(std::string_view s) {
  if (s == "cell") return SelectionKind::cell;
  if (s == "row") return SelectionKind::row;
  if (s == "col") return SelectionKind::col;
  return std::nullopt;
}

// A click on the heatmap of `reference`.
struct Selection {
  HeadId reference;
  SelectionKind kind = SelectionKind::cell;
  std::size_t row = 0;
  std::size_t col = 0;
};

// A word (by position in the token sequence) or an object (by detection index).
struct TokenRef {
  Modality modality = Modality::word;
  std::size_t index = 0;
  std::string label;
};

struct FilterMatch {
  HeadId head;
  double value = 0.0;
};

namespace detail {

inline TokenRef token_at(const ForwardResult& r, Modality m, std::size_t idx) {
  const auto& labels = m == Modality::word ? r.words : r.objects;
  if (idx >= labels.size()) {
    throw InvalidArgument(std::string(to_string(m)) + " index " + std::to_string(idx) + " is not in this instance");
  }
  return {m, idx, labels[idx]};
}

inline std::optional<double> token_value(const AttentionMap& map, const TokenRef& t, Agg agg) {
  const HeadKind k = map.head.kind;
  std::vector<double> values;
  if (row_modality(k) == t.modality) {
    for (float x : map.cells.row(t.index)) values.push_back(x);
  } else if (col_modality(k) == t.modality) {
    for (std::size_t r = 0; r < map.rows(); ++r) values.push_back(map.cells(r, t.index));
  } else {
    return std::nullopt;
  }
  return aggregate(std::move(values), agg);
}

inline std::optional<double> pair_value(const AttentionMap& map, const TokenRef& a, const TokenRef& b) {
  const HeadKind k = map.head.kind;
  if (row_modality(k) == a.modality && col_modality(k) == b.modality) return map.cells(a.index, b.index);
  if (row_modality(k) == b.modality && col_modality(k) == a.modality) return map.cells(b.index, a.index);
  return std::nullopt;
}

}  // namespace detail

// Resolves the selection to one token (row/col) or a token pair (cell), reads
// the corresponding value in every head where it appears, and keeps heads
// whose value reaches `threshold`. Sorted by value, descending.
inline std::vector<FilterMatch> filter_heads(const ForwardResult& r, const Selection& sel, double threshold, Agg agg) {
  const AttentionMap* ref = r.find(sel.reference);
  if (!ref) throw InvalidArgument("filter: unknown reference head " + sel.reference.name());
  const HeadKind rk = sel.reference.kind;

  std::vector<FilterMatch> out;
  auto keep = [&](const AttentionMap& m, std::optional<double> v) {
    if (v && *v >= threshold) out.push_back({m.head, *v});
  };
  if (sel.kind == SelectionKind::cell) {
    if (sel.row >= ref->rows() || sel.col >= ref->cols()) throw InvalidArgument("filter: cell outside the reference map");
    const TokenRef a = detail::token_at(r, row_modality(rk), sel.row);
    const TokenRef b = detail::token_at(r, col_modality(rk), sel.col);
    for (const auto& m : r.maps) keep(m, detail::pair_value(m, a, b));
  } else {
    const bool is_row = sel.kind == SelectionKind::row;
    const std::size_t idx = is_row ? sel.row : sel.col;
    if (idx >= (is_row ? ref->rows() : ref->cols())) throw InvalidArgument("filter: selection outside the reference map");
    const TokenRef t = detail::token_at(r, is_row ? row_modality(rk) : col_modality(rk), idx);
    for (const auto& m : r.maps) keep(m, detail::token_value(m, t, agg));
  }
  std::stable_sort(out.begin(), out.end(), [](const FilterMatch& a, const FilterMatch& b) { return a.value > b.value; });
  return out;
}

// --- instance comparison ---------------------------------------------------

struct InstanceDiff {
  std::map<HeadId, double> k_delta;
  std::map<HeadId, Matrix> cell_delta;
  std::vector<HeadId> excluded;  // heads whose maps do not align
};

// current minus reference, for every head whose two maps share dimensions.
// Summaries are indexed like the maps of their forward result.
inline InstanceDiff diff_snapshots(const ForwardResult& current, const std::vector<KSummary>& current_k,
                                   const ForwardResult& reference, const std::vector<KSummary>& reference_k) {
  if (current_k.size() != current.maps.size() || reference_k.size() != reference.maps.size()) {
    throw InvalidArgument("diff: summaries do not match their forward results");
  }
  InstanceDiff diff;
  for (std::size_t i = 0; i < current.maps.size(); ++i) {
    const auto& cur = current.maps[i];
    std::size_t j = 0;
    while (j < reference.maps.size() && !(reference.maps[j].head == cur.head)) ++j;
    if (j == reference.maps.size() || reference.maps[j].rows() != cur.rows() || reference.maps[j].cols() != cur.cols()) {
      diff.excluded.push_back(cur.head);
      continue;
    }
    const auto& ref = reference.maps[j];
    Matrix delta(cur.rows(), cur.cols());
    for (std::size_t c = 0; c < delta.data.size(); ++c) {
      delta.data[c] = std::clamp(cur.cells.data[c] - ref.cells.data[c], -1.0f, 1.0f);
    }
    diff.cell_delta.emplace(cur.head, std::move(delta));
    diff.k_delta.emplace(cur.head, std::clamp(current_k[i].aggregate - reference_k[j].aggregate, -1.0, 1.0));
  }
  for (const auto& ref : reference.maps) {
    if (!current.find(ref.head)) diff.excluded.push_back(ref.head);
  }
  return diff;
}

}  // namespace vlinspect
