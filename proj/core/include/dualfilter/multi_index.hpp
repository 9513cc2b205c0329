#pragma once

#include <compare>
#include <cstddef>
#include <initializer_list>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace dualfilter {

/// A point of the lattice Z_+^K. Indexes one conjugate mixture component and
/// doubles as the state of the dual death process.
class MultiIndex {
 public:
  MultiIndex() = default;
  MultiIndex(std::initializer_list<int> coords);
  explicit MultiIndex(std::vector<int> coords);

  static MultiIndex zero(std::size_t dim);
  static MultiIndex unit(std::size_t dim, std::size_t j);

  std::size_t dim() const { return coords_.size(); }
  int operator[](std::size_t j) const { return coords_[j]; }
  std::span<const int> coords() const { return coords_; }

  /// Coordinate sum |m|.
  int magnitude() const;
  bool is_zero() const;

  MultiIndex& operator+=(const MultiIndex& other);
  friend MultiIndex operator+(MultiIndex a, const MultiIndex& b) { return a += b; }
  /// Requires b <= a in the product order.
  friend MultiIndex operator-(const MultiIndex& a, const MultiIndex& b);

  friend bool operator==(const MultiIndex&, const MultiIndex&) = default;
  /// Lexicographic; the canonical order of every IndexSet.
  friend std::strong_ordering operator<=>(const MultiIndex& a, const MultiIndex& b) {
    return a.coords_ <=> b.coords_;
  }

  std::string to_string() const;

 private:
  std::vector<int> coords_;
};

std::ostream& operator<<(std::ostream& os, const MultiIndex& m);

/// Product order: m_j <= n_j for every coordinate.
bool leq(const MultiIndex& m, const MultiIndex& n);

/// prod_j (m_j + 1), the size of the lower set below m.
std::size_t singleton_lower_size(const MultiIndex& m);

/// Finite set of multi-indices of a common dimension, iterated in
/// lexicographic order.
class IndexSet {
 public:
  IndexSet() = default;
  IndexSet(std::initializer_list<MultiIndex> elements);
  explicit IndexSet(std::vector<MultiIndex> elements);

  std::size_t size() const { return elements_.size(); }
  bool empty() const { return elements_.empty(); }
  /// 0 for the empty set.
  std::size_t dim() const { return elements_.empty() ? 0 : elements_.front().dim(); }
  bool contains(const MultiIndex& m) const;
  /// Position of m in iteration order, or size() when absent.
  std::size_t find(const MultiIndex& m) const;

  auto begin() const { return elements_.begin(); }
  auto end() const { return elements_.end(); }
  const MultiIndex& operator[](std::size_t i) const { return elements_[i]; }
  const std::vector<MultiIndex>& elements() const { return elements_; }

  bool is_subset_of(const IndexSet& other) const;
  friend bool operator==(const IndexSet&, const IndexSet&) = default;

 private:
  std::vector<MultiIndex> elements_;
};

/// All n with n <= m for some m in the set: G(set).
IndexSet lower_set(const IndexSet& set);
IndexSet lower_set(const MultiIndex& m);

/// {n + shift : n in set}.
IndexSet translate(const IndexSet& set, const MultiIndex& shift);

/// Visits every n <= m in lexicographic order.
template <typename Fn>
void for_each_below(const MultiIndex& m, Fn&& fn) {
  const std::size_t k = m.dim();
  std::vector<int> cur(k, 0);
  while (true) {
    fn(MultiIndex(cur));
    std::size_t j = k;
    while (j > 0) {
      --j;
      if (cur[j] < m[j]) {
        ++cur[j];
        break;
      }
      cur[j] = 0;
      if (j == 0) return;
    }
    if (k == 0) return;
  }
}

}  // namespace dualfilter
