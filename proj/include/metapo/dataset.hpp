#pragma once

// Selection feedback: one event per gallery choice, plus the deduplicated
// point index used by the likelihood.

#include "metapo/core.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>
#include <vector>

namespace metapo {

/// `chosen` was preferred over every entry of `rejected`.
struct SelectionEvent {
  ParamVector chosen;
  std::vector<ParamVector> rejected;
  int iteration_index = 1;
};

namespace detail {

struct LexLess {
  bool operator()(const std::vector<double>& a, const std::vector<double>& b) const {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  }
};

inline std::vector<double> as_key(const ParamVector& x) {
  return std::vector<double>(x.data(), x.data() + x.size());
}

inline void fnv1a(std::uint64_t& h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

class PreferenceDataset {
 public:
  PreferenceDataset() = default;
  explicit PreferenceDataset(Eigen::Index dimension) : dimension_(dimension) {
    if (dimension < 1) throw InvalidInput("dataset dimension must be >= 1");
  }

  Eigen::Index dimension() const noexcept { return dimension_; }
  const std::vector<SelectionEvent>& events() const noexcept { return events_; }
  bool empty() const noexcept { return events_.empty(); }
  std::size_t size() const noexcept { return events_.size(); }
  int last_iteration() const noexcept { return events_.empty() ? 0 : events_.back().iteration_index; }

  void append(SelectionEvent event) {
    validate(event);
    events_.push_back(std::move(event));
  }

  /// Copy with one more event; the original is left untouched.
  PreferenceDataset with(SelectionEvent event) const {
    PreferenceDataset copy = *this;
    copy.append(std::move(event));
    return copy;
  }

  /// Content hash; identifies the dataset a model was fit on.
  std::string content_id() const {
    std::uint64_t h = detail::kFnvOffset;
    const auto add_point = [&h](const ParamVector& x) {
      detail::fnv1a(h, x.data(), sizeof(double) * static_cast<std::size_t>(x.size()));
    };
    const std::int64_t d = dimension_;
    detail::fnv1a(h, &d, sizeof d);
    for (const auto& e : events_) {
      detail::fnv1a(h, &e.iteration_index, sizeof e.iteration_index);
      add_point(e.chosen);
      const std::uint64_t m = e.rejected.size();
      detail::fnv1a(h, &m, sizeof m);
      for (const auto& r : e.rejected) add_point(r);
    }
    return detail::hex64(h);
  }

 private:
  void validate(const SelectionEvent& e) const {
    if (dimension_ < 1) throw InvalidState("dataset has no dimension");
    if (e.rejected.empty()) throw InvalidInput("selection event needs at least one rejected point");
    if (e.iteration_index < 1) throw InvalidInput("iteration_index must be >= 1");
    if (!events_.empty() && e.iteration_index <= events_.back().iteration_index)
      throw InvalidInput("iteration_index must be strictly increasing");
    const auto check = [this](const ParamVector& x) {
      if (x.size() != dimension_) throw InvalidInput("event point has wrong dimension");
      if (!x.allFinite() || !in_unit_cube(x)) throw InvalidInput("event point outside [0,1]^d");
    };
    check(e.chosen);
    for (const auto& r : e.rejected) {
      check(r);
      if (exactly_equal(r, e.chosen)) throw InvalidInput("chosen point also listed as rejected");
    }
  }

  Eigen::Index dimension_ = 0;
  std::vector<SelectionEvent> events_;
};

/// Distinct observed points (lexicographically sorted) and, per event, the
/// member indices: members[e][0] is the chosen point, the rest are rejected
/// in ascending index order. Repeated points collapse to one latent entry.
struct IndexedData {
  PointMatrix points;  // d x n
  std::vector<std::vector<int>> members;

  Eigen::Index size() const noexcept { return points.cols(); }

  int find(const ParamVector& x) const {
    for (Eigen::Index i = 0; i < points.cols(); ++i)
      if ((points.col(i).array() == x.array()).all()) return static_cast<int>(i);
    return -1;
  }
};

inline IndexedData index_dataset(const PreferenceDataset& data) {
  std::map<std::vector<double>, int, detail::LexLess> ids;
  for (const auto& e : data.events()) {
    ids.emplace(detail::as_key(e.chosen), 0);
    for (const auto& r : e.rejected) ids.emplace(detail::as_key(r), 0);
  }
  IndexedData out;
  out.points.resize(data.dimension(), static_cast<Eigen::Index>(ids.size()));
  int next = 0;
  for (auto& [key, id] : ids) {
    id = next;
    out.points.col(next) = Eigen::Map<const ParamVector>(key.data(), static_cast<Eigen::Index>(key.size()));
    ++next;
  }
  out.members.reserve(data.size());
  for (const auto& e : data.events()) {
    std::vector<int> m;
    m.push_back(ids.at(detail::as_key(e.chosen)));
    std::vector<int> rej;
    for (const auto& r : e.rejected) rej.push_back(ids.at(detail::as_key(r)));
    std::sort(rej.begin(), rej.end());
    rej.erase(std::unique(rej.begin(), rej.end()), rej.end());
    m.insert(m.end(), rej.begin(), rej.end());
    out.members.push_back(std::move(m));
  }
  return out;
}

}  // namespace metapo
