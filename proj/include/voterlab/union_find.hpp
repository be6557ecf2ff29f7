#pragma once

#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

namespace voterlab {

// Disjoint sets over dense integer ids with union by size and path halving.
// Grows on demand so ids can be issued as walkers are born.
class UnionFind {
 public:
  using Id = std::uint32_t;

  UnionFind() = default;
  explicit UnionFind(std::size_t n) { reset(n); }

  void reset(std::size_t n) {
    parent_.resize(n);
    std::iota(parent_.begin(), parent_.end(), Id{0});
    size_.assign(n, 1);
    sets_ = n;
  }

  void clear() noexcept {
    parent_.clear();
    size_.clear();
    sets_ = 0;
  }

  Id add() {
    const auto id = static_cast<Id>(parent_.size());
    parent_.push_back(id);
    size_.push_back(1);
    ++sets_;
    return id;
  }

  Id find(Id a) noexcept {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }

  // Returns the surviving root.
  Id unite(Id a, Id b) noexcept {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    --sets_;
    return a;
  }

  bool same(Id a, Id b) noexcept { return find(a) == find(b); }
  std::size_t size() const noexcept { return parent_.size(); }
  std::size_t set_count() const noexcept { return sets_; }

 private:
  std::vector<Id> parent_;
  std::vector<Id> size_;
  std::size_t sets_ = 0;
};

}  // namespace voterlab
