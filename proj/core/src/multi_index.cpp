#include "dualfilter/multi_index.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "dualfilter/errors.hpp"

namespace dualfilter {

namespace {

void require_same_dim(const MultiIndex& a, const MultiIndex& b) {
  if (a.dim() != b.dim()) {
    throw InputError("multi-index dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()));
  }
}

}  // namespace

MultiIndex::MultiIndex(std::initializer_list<int> coords) : MultiIndex(std::vector<int>(coords)) {}

MultiIndex::MultiIndex(std::vector<int> coords) : coords_(std::move(coords)) {
  for (int c : coords_) {
    if (c < 0) throw InputError("multi-index coordinates must be non-negative");
  }
}

MultiIndex MultiIndex::zero(std::size_t dim) { return MultiIndex(std::vector<int>(dim, 0)); }

MultiIndex MultiIndex::unit(std::size_t dim, std::size_t j) {
  std::vector<int> c(dim, 0);
  c.at(j) = 1;
  return MultiIndex(std::move(c));
}

int MultiIndex::magnitude() const { return std::accumulate(coords_.begin(), coords_.end(), 0); }

bool MultiIndex::is_zero() const {
  return std::all_of(coords_.begin(), coords_.end(), [](int c) { return c == 0; });
}

MultiIndex& MultiIndex::operator+=(const MultiIndex& other) {
  require_same_dim(*this, other);
  for (std::size_t j = 0; j < coords_.size(); ++j) coords_[j] += other.coords_[j];
  return *this;
}

MultiIndex operator-(const MultiIndex& a, const MultiIndex& b) {
  if (!leq(b, a)) throw InputError("multi-index subtraction leaves the lattice");
  std::vector<int> c(a.dim());
  for (std::size_t j = 0; j < c.size(); ++j) c[j] = a[j] - b[j];
  return MultiIndex(std::move(c));
}

std::string MultiIndex::to_string() const {
  std::ostringstream os;
  os << *this;
  return os.str();
}

std::ostream& operator<<(std::ostream& os, const MultiIndex& m) {
  os << '(';
  for (std::size_t j = 0; j < m.dim(); ++j) {
    if (j) os << ',';
    os << m[j];
  }
  return os << ')';
}

bool leq(const MultiIndex& m, const MultiIndex& n) {
  require_same_dim(m, n);
  for (std::size_t j = 0; j < m.dim(); ++j) {
    if (m[j] > n[j]) return false;
  }
  return true;
}

std::size_t singleton_lower_size(const MultiIndex& m) {
  std::size_t size = 1;
  for (int c : m.coords()) size *= static_cast<std::size_t>(c) + 1;
  return size;
}

IndexSet::IndexSet(std::initializer_list<MultiIndex> elements)
    : IndexSet(std::vector<MultiIndex>(elements)) {}

IndexSet::IndexSet(std::vector<MultiIndex> elements) : elements_(std::move(elements)) {
  for (const auto& m : elements_) {
    if (m.dim() != elements_.front().dim()) throw InputError("index set mixes dimensions");
  }
  std::sort(elements_.begin(), elements_.end());
  elements_.erase(std::unique(elements_.begin(), elements_.end()), elements_.end());
}

std::size_t IndexSet::find(const MultiIndex& m) const {
  auto it = std::lower_bound(elements_.begin(), elements_.end(), m);
  if (it == elements_.end() || *it != m) return elements_.size();
  return static_cast<std::size_t>(it - elements_.begin());
}

bool IndexSet::contains(const MultiIndex& m) const { return find(m) != elements_.size(); }

bool IndexSet::is_subset_of(const IndexSet& other) const {
  return std::includes(other.elements_.begin(), other.elements_.end(), elements_.begin(),
                       elements_.end());
}

IndexSet lower_set(const IndexSet& set) {
  if (set.empty()) throw InputError("lower set of an empty index set");
  const std::size_t k = set[0].dim();
  std::vector<std::size_t> extent(k, 1), stride(k, 1);
  for (const auto& m : set) {
    for (std::size_t j = 0; j < k; ++j) extent[j] = std::max(extent[j], static_cast<std::size_t>(m[j]) + 1);
  }
  constexpr std::size_t kBoxLimit = std::size_t{1} << 24;
  std::size_t size = 1;
  for (std::size_t j = k; j-- > 0 && size <= kBoxLimit;) {
    stride[j] = size;
    size *= extent[j];
  }
  if (size > kBoxLimit) {
    std::set<MultiIndex> out;
    for (const auto& m : set) {
      if (out.contains(m)) continue;
      for_each_below(m, [&](MultiIndex n) { out.insert(std::move(n)); });
    }
    return IndexSet(std::vector<MultiIndex>(out.begin(), out.end()));
  }

  // Mark the box below each element; a box row already marked from its top
  // corner is skipped along with everything under it in that coordinate.
  std::vector<char> marked(size, 0);
  std::vector<int> cur(k);
  for (const auto& m : set) {
    std::fill(cur.begin(), cur.end(), 0);
    std::size_t index = 0;
    while (true) {
      marked[index] = 1;
      std::size_t j = k;
      bool done = true;
      while (j-- > 0) {
        if (cur[j] < m[j]) {
          ++cur[j];
          index += stride[j];
          done = false;
          break;
        }
        index -= stride[j] * static_cast<std::size_t>(cur[j]);
        cur[j] = 0;
      }
      if (done) break;
    }
  }
  std::vector<MultiIndex> out;
  std::vector<int> coords(k);
  for (std::size_t i = 0; i < size; ++i) {
    if (!marked[i]) continue;
    std::size_t rest = i;
    for (std::size_t j = 0; j < k; ++j) {
      coords[j] = static_cast<int>(rest / stride[j]);
      rest %= stride[j];
    }
    out.emplace_back(coords);
  }
  return IndexSet(std::move(out));
}

IndexSet lower_set(const MultiIndex& m) {
  std::vector<MultiIndex> out;
  out.reserve(singleton_lower_size(m));
  for_each_below(m, [&](MultiIndex n) { out.push_back(std::move(n)); });
  return IndexSet(std::move(out));
}

IndexSet translate(const IndexSet& set, const MultiIndex& shift) {
  std::vector<MultiIndex> out;
  out.reserve(set.size());
  for (const auto& m : set) out.push_back(m + shift);
  return IndexSet(std::move(out));
}

}  // namespace dualfilter
