#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace tsan {

// Contract violations (bad shapes, invalid arguments) throw std::invalid_argument.
inline void contract(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// I/O failures (missing files, malformed streams) carry path context.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a computation produced non-finite values or a numeric gate failed.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense array extents, rank 0..4. Rank-4 tensors are laid out (batch, channel,
// height, width), row-major.
class Shape {
 public:
  Shape() : rank_(0), d_{1, 1, 1, 1} {}

  Shape(std::initializer_list<int> dims) : rank_(0), d_{1, 1, 1, 1} {
    contract(dims.size() <= 4, "Shape: rank must be <= 4");
    for (int v : dims) {
      contract(v > 0, "Shape: extents must be positive");
      d_[rank_++] = v;
    }
  }

  static Shape scalar() { return Shape{}; }

  int rank() const { return rank_; }

  int operator[](int i) const {
    contract(i >= 0 && i < rank_, "Shape: axis out of range");
    return d_[i];
  }

  // Rank-4 accessors.
  int n() const { return dim_or(0); }
  int c() const { return dim_or(1); }
  int h() const { return dim_or(2); }
  int w() const { return dim_or(3); }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int i = 0; i < rank_; ++i) n *= d_[i];
    return n;
  }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (d_[i] != o.d_[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "(";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += ",";
      s += std::to_string(d_[i]);
    }
    return s + ")";
  }

 private:
  int dim_or(int i) const {
    contract(rank_ == 4, "Shape: NCHW accessor requires rank 4");
    return d_[i];
  }

  int rank_;
  std::array<int, 4> d_;
};

}  // namespace tsan
