#pragma once

// Exact linear algebra over Z and Z/M: Smith and Hermite normal forms with
// unimodular transforms, the Howell form (canonical generating set of a row
// module over Z/M), and solvers built on them.  Deterministic throughout:
// pivots are found by scanning the active submatrix rows first, columns
// second, so equal inputs always produce byte-equal outputs.

#include <undlab/ints.hpp>

#include <algorithm>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace undlab::exactlin {

// Sparse integer matrix; absent entries are zero.
class IntMatrix {
 public:
  IntMatrix() = default;
  IntMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {}

  static IntMatrix identity(std::size_t n) {
    IntMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.set(i, i, 1);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  void set(std::size_t r, std::size_t c, Int v) {
    check(r, c);
    if (v == 0)
      entries_.erase({r, c});
    else
      entries_[{r, c}] = std::move(v);
  }

  Int get(std::size_t r, std::size_t c) const {
    check(r, c);
    auto it = entries_.find({r, c});
    return it == entries_.end() ? Int(0) : it->second;
  }

  const std::map<std::pair<std::size_t, std::size_t>, Int>& entries() const {
    return entries_;
  }

  std::vector<std::vector<Int>> dense() const {
    std::vector<std::vector<Int>> d(rows_, std::vector<Int>(cols_, Int(0)));
    for (const auto& [rc, v] : entries_) d[rc.first][rc.second] = v;
    return d;
  }

  static IntMatrix from_dense(const std::vector<std::vector<Int>>& d) {
    IntMatrix m(d.size(), d.empty() ? 0 : d[0].size());
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t j = 0; j < d[i].size(); ++j)
        if (d[i][j] != 0) m.entries_[{i, j}] = d[i][j];
    return m;
  }

  friend IntMatrix operator*(const IntMatrix& a, const IntMatrix& b) {
    if (a.cols_ != b.rows_) throw std::invalid_argument("matrix shape mismatch");
    IntMatrix out(a.rows_, b.cols_);
    // Sparse row-times-matrix accumulation.
    std::map<std::pair<std::size_t, std::size_t>, Int> acc;
    for (const auto& [rc, v] : a.entries_) {
      auto lo = b.entries_.lower_bound({rc.second, 0});
      auto hi = b.entries_.upper_bound({rc.second, b.cols_});
      for (auto it = lo; it != hi; ++it) {
        acc[{rc.first, it->first.second}] += v * it->second;
      }
    }
    for (auto& [rc, v] : acc)
      if (v != 0) out.entries_[rc] = std::move(v);
    return out;
  }

  bool operator==(const IntMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && entries_ == o.entries_;
  }

 private:
  void check(std::size_t r, std::size_t c) const {
    if (r >= rows_ || c >= cols_) throw std::out_of_range("matrix index");
  }
  std::size_t rows_ = 0, cols_ = 0;
  std::map<std::pair<std::size_t, std::size_t>, Int> entries_;
};

// Dense residue matrix mod M, entries in [0, M).
class ResMatrix {
 public:
  ResMatrix() : m_(2) {}
  ResMatrix(Residue modulus, std::size_t rows, std::size_t cols)
      : m_(modulus), rows_(rows), cols_(cols), a_(rows * cols, 0) {}

  Residue modulus() const { return m_.modulus(); }
  const Mod& ring() const { return m_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  Residue operator()(std::size_t r, std::size_t c) const { return a_[r * cols_ + c]; }
  void set(std::size_t r, std::size_t c, Residue v) { a_[r * cols_ + c] = v % m_.modulus(); }
  void set_int(std::size_t r, std::size_t c, const Int& v) { a_[r * cols_ + c] = m_.reduce(v); }

  std::vector<Residue> row(std::size_t r) const {
    return {a_.begin() + r * cols_, a_.begin() + (r + 1) * cols_};
  }

  std::vector<Residue> apply(const std::vector<Residue>& v) const {
    if (v.size() != cols_) throw std::invalid_argument("vector length mismatch");
    std::vector<Residue> out(rows_, 0);
    for (std::size_t i = 0; i < rows_; ++i) {
      unsigned __int128 acc = 0;
      for (std::size_t j = 0; j < cols_; ++j) {
        acc += static_cast<unsigned __int128>(a_[i * cols_ + j]) * v[j];
        if ((j & 63) == 63) acc %= m_.modulus();
      }
      out[i] = static_cast<Residue>(acc % m_.modulus());
    }
    return out;
  }

  bool is_zero() const {
    return std::all_of(a_.begin(), a_.end(), [](Residue v) { return v == 0; });
  }

  bool operator==(const ResMatrix& o) const {
    return m_.modulus() == o.m_.modulus() && rows_ == o.rows_ && cols_ == o.cols_ &&
           a_ == o.a_;
  }

 private:
  Mod m_;
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<Residue> a_;
};

namespace detail {

using Dense = std::vector<std::vector<Int>>;

// Elementary row/column operations applied simultaneously to a work matrix
// and its transform accumulators.  `inv` (when present) accumulates the
// inverse of the column transform so quotient coordinates can be lifted
// back without a separate inversion.
struct ColOps {
  Dense* a;
  Dense* right;      // A := A * E  => right := right * E
  Dense* right_inv;  // right_inv := E^{-1} * right_inv

  void swap(std::size_t i, std::size_t j) {
    if (i == j) return;
    for (auto& row : *a) std::swap(row[i], row[j]);
    for (auto& row : *right) std::swap(row[i], row[j]);
    if (right_inv) std::swap((*right_inv)[i], (*right_inv)[j]);
  }
  // col_j += q * col_i
  void add(std::size_t i, std::size_t j, const Int& q) {
    if (q == 0) return;
    for (auto& row : *a) row[j] += q * row[i];
    for (auto& row : *right) row[j] += q * row[i];
    if (right_inv)
      for (std::size_t k = 0; k < (*right_inv)[i].size(); ++k)
        (*right_inv)[i][k] -= q * (*right_inv)[j][k];
  }
  void negate(std::size_t i) {
    for (auto& row : *a) row[i] = -row[i];
    for (auto& row : *right) row[i] = -row[i];
    if (right_inv)
      for (auto& v : (*right_inv)[i]) v = -v;
  }
  // (col_i, col_j) := (s*col_i + u*col_j, -bp*col_i + ap*col_j), det == 1.
  void combine(std::size_t i, std::size_t j, const Int& s, const Int& u, const Int& bp,
               const Int& ap) {
    auto apply2 = [&](Dense& mat) {
      for (auto& row : mat) {
        Int ci = row[i], cj = row[j];
        row[i] = s * ci + u * cj;
        row[j] = -bp * ci + ap * cj;
      }
    };
    apply2(*a);
    apply2(*right);
    if (right_inv) {
      auto& ri = (*right_inv)[i];
      auto& rj = (*right_inv)[j];
      for (std::size_t k = 0; k < ri.size(); ++k) {
        Int x = ri[k], y = rj[k];
        ri[k] = ap * x + bp * y;
        rj[k] = -u * x + s * y;
      }
    }
  }
};

struct RowOps {
  Dense* a;
  Dense* left;  // A := E * A  => left := E * left

  void swap(std::size_t i, std::size_t j) {
    if (i == j) return;
    std::swap((*a)[i], (*a)[j]);
    std::swap((*left)[i], (*left)[j]);
  }
  // row_j += q * row_i
  void add(std::size_t i, std::size_t j, const Int& q) {
    if (q == 0) return;
    for (std::size_t k = 0; k < (*a)[i].size(); ++k) (*a)[j][k] += q * (*a)[i][k];
    for (std::size_t k = 0; k < (*left)[i].size(); ++k) (*left)[j][k] += q * (*left)[i][k];
  }
  void negate(std::size_t i) {
    for (auto& v : (*a)[i]) v = -v;
    for (auto& v : (*left)[i]) v = -v;
  }
  // (row_i, row_j) := (s*row_i + u*row_j, -bp*row_i + ap*row_j), det == 1.
  void combine(std::size_t i, std::size_t j, const Int& s, const Int& u, const Int& bp,
               const Int& ap) {
    auto apply2 = [&](Dense& mat) {
      auto &ri = mat[i], &rj = mat[j];
      for (std::size_t k = 0; k < ri.size(); ++k) {
        Int x = ri[k], y = rj[k];
        ri[k] = s * x + u * y;
        rj[k] = -bp * x + ap * y;
      }
    };
    apply2(*a);
    apply2(*left);
  }
};

inline Dense dense_identity(std::size_t n) {
  Dense d(n, std::vector<Int>(n, Int(0)));
  for (std::size_t i = 0; i < n; ++i) d[i][i] = 1;
  return d;
}

}  // namespace detail

struct SNFResult {
  IntMatrix left;       // unimodular, rows x rows
  std::vector<Int> diag;
  IntMatrix right;      // unimodular, cols x cols
  IntMatrix right_inv;  // inverse of `right`; convenience for quotient bases

  std::size_t rank() const {
    std::size_t r = 0;
    for (const auto& d : diag)
      if (d != 0) ++r;
    return r;
  }
};

// Smith normal form: left * m * right is diagonal with d_1 | d_2 | ... and
// all diagonal entries nonnegative; transforms are unimodular.
inline SNFResult smith_normal_form(const IntMatrix& m) {
  const std::size_t R = m.rows(), C = m.cols();
  detail::Dense a = m.dense();
  detail::Dense left = detail::dense_identity(R);
  detail::Dense right = detail::dense_identity(C);
  detail::Dense right_inv = detail::dense_identity(C);
  detail::RowOps rops{&a, &left};
  detail::ColOps cops{&a, &right, &right_inv};

  const std::size_t n = std::min(R, C);
  std::size_t t = 0;
  for (; t < n; ++t) {
    // Pivot: first nonzero entry of the active submatrix, rows before columns.
    std::size_t pr = R, pc = C;
    for (std::size_t i = t; i < R && pr == R; ++i)
      for (std::size_t j = t; j < C; ++j)
        if (a[i][j] != 0) {
          pr = i;
          pc = j;
          break;
        }
    if (pr == R) break;  // active submatrix is zero
    rops.swap(t, pr);
    cops.swap(t, pc);

    for (;;) {
      // Clear column t below the pivot.  When the pivot divides the entry a
      // plain transvection leaves the pivot row untouched; the gcd combine
      // is reserved for entries that strictly shrink the pivot, which bounds
      // the number of passes.
      for (std::size_t i = t + 1; i < R; ++i) {
        if (a[i][t] == 0) continue;
        if (a[t][t] != 0 && a[i][t] % a[t][t] == 0) {
          rops.add(t, i, -(a[i][t] / a[t][t]));
        } else {
          XGcd e = xgcd(a[t][t], a[i][t]);
          rops.combine(t, i, e.s, e.t, a[i][t] / e.g, a[t][t] / e.g);
        }
      }
      bool row_clear = true;
      for (std::size_t j = t + 1; j < C; ++j) {
        if (a[t][j] == 0) continue;
        if (a[t][t] != 0 && a[t][j] % a[t][t] == 0) {
          cops.add(t, j, -(a[t][j] / a[t][t]));
        } else {
          XGcd e = xgcd(a[t][t], a[t][j]);
          cops.combine(t, j, e.s, e.t, a[t][j] / e.g, a[t][t] / e.g);
        }
        row_clear = false;
      }
      // Column clears cannot disturb the pivot row, but row clears after a
      // column pass can; loop until both are simultaneously clear.
      bool col_clear = true;
      for (std::size_t i = t + 1; i < R; ++i)
        if (a[i][t] != 0) col_clear = false;
      if (row_clear && col_clear) break;
    }
    if (a[t][t] < 0) rops.negate(t);
  }

  // Divisibility chain: fold each later diagonal entry into the earlier one
  // until d_i | d_{i+1} everywhere.
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i + 1 < t; ++i) {
      const Int &di = a[i][i], &dj = a[i + 1][i + 1];
      if (di == 0 && dj == 0) continue;
      if (di != 0 && dj % di == 0) continue;
      rops.add(i + 1, i, 1);  // row_i += row_{i+1}: places dj at (i, i+1)
      XGcd e = xgcd(a[i][i], a[i][i + 1]);
      cops.combine(i, i + 1, e.s, e.t, a[i][i + 1] / e.g, a[i][i] / e.g);
      // Clear the (i+1, i) fill-in; exact because a[i][i] is now the gcd.
      rops.add(i, i + 1, -a[i + 1][i] / a[i][i]);
      if (a[i][i] < 0) rops.negate(i);
      if (a[i + 1][i + 1] < 0) rops.negate(i + 1);
      changed = true;
    }
  }

  SNFResult out;
  out.left = IntMatrix::from_dense(left);
  out.right = IntMatrix::from_dense(right);
  out.right_inv = IntMatrix::from_dense(right_inv);
  out.diag.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.diag[i] = a[i][i];
  return out;
}

struct HermiteResult {
  IntMatrix h;          // row echelon, pivots positive, entries above reduced
  IntMatrix transform;  // unimodular, transform * m == h
  std::vector<std::pair<std::size_t, std::size_t>> pivots;  // (row, col)
};

// Row Hermite normal form.  Canonical for the row lattice: two matrices have
// equal row lattices iff their nonzero Hermite rows coincide.
inline HermiteResult hermite_form(const IntMatrix& m) {
  const std::size_t R = m.rows(), C = m.cols();
  detail::Dense a = m.dense();
  detail::Dense left = detail::dense_identity(R);
  detail::RowOps rops{&a, &left};

  std::size_t r = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pivots;
  for (std::size_t c = 0; c < C && r < R; ++c) {
    std::size_t pr = R;
    for (std::size_t i = r; i < R; ++i)
      if (a[i][c] != 0) {
        pr = i;
        break;
      }
    if (pr == R) continue;
    rops.swap(r, pr);
    for (std::size_t i = r + 1; i < R; ++i) {
      if (a[i][c] == 0) continue;
      if (a[i][c] % a[r][c] == 0) {
        rops.add(r, i, -(a[i][c] / a[r][c]));
      } else {
        XGcd e = xgcd(a[r][c], a[i][c]);
        rops.combine(r, i, e.s, e.t, a[i][c] / e.g, a[r][c] / e.g);
      }
    }
    if (a[r][c] < 0) rops.negate(r);
    for (std::size_t i = 0; i < r; ++i) {
      // Floor division keeps entries above the pivot in [0, pivot).
      Int q = a[i][c] / a[r][c];
      if (a[i][c] - q * a[r][c] < 0) q -= 1;
      rops.add(r, i, -q);
    }
    pivots.emplace_back(r, c);
    ++r;
  }

  HermiteResult out;
  out.h = IntMatrix(R, C);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j)
      if (a[i][j] != 0) out.h.set(i, j, a[i][j]);
  out.transform = IntMatrix::from_dense(left);
  out.pivots = std::move(pivots);
  return out;
}

// Membership of v in the row lattice of a Hermite form.
inline bool lattice_contains(const HermiteResult& hf, std::vector<Int> v) {
  if (v.size() != hf.h.cols()) throw std::invalid_argument("vector length mismatch");
  for (const auto& [r, c] : hf.pivots) {
    const Int p = hf.h.get(r, c);
    if (v[c] % p != 0) return false;
    const Int q = v[c] / p;
    if (q != 0)
      for (std::size_t j = c; j < v.size(); ++j) v[j] -= q * hf.h.get(r, j);
  }
  return std::all_of(v.begin(), v.end(), [](const Int& x) { return x == 0; });
}

// Any integer solution of m * x = b, via the Smith form.
inline std::optional<std::vector<Int>> solve_integer(const SNFResult& snf,
                                                     const IntMatrix& m,
                                                     const std::vector<Int>& b) {
  const std::size_t R = m.rows(), C = m.cols();
  if (b.size() != R) throw std::invalid_argument("vector length mismatch");
  // left * b must be solvable against the diagonal.
  std::vector<Int> lb(R, Int(0));
  for (const auto& [rc, v] : snf.left.entries()) lb[rc.first] += v * b[rc.second];
  std::vector<Int> w(C, Int(0));
  const std::size_t n = std::min(R, C);
  for (std::size_t i = 0; i < R; ++i) {
    if (i < n && snf.diag[i] != 0) {
      if (lb[i] % snf.diag[i] != 0) return std::nullopt;
      w[i] = lb[i] / snf.diag[i];
    } else if (lb[i] != 0) {
      return std::nullopt;
    }
  }
  std::vector<Int> x(C, Int(0));
  for (const auto& [rc, v] : snf.right.entries()) x[rc.first] += v * w[rc.second];
  return x;
}

inline std::optional<std::vector<Int>> solve_integer(const IntMatrix& m,
                                                     const std::vector<Int>& b) {
  return solve_integer(smith_normal_form(m), m, b);
}

inline std::vector<Int> apply(const IntMatrix& m, const std::vector<Int>& x) {
  if (x.size() != m.cols()) throw std::invalid_argument("vector length mismatch");
  std::vector<Int> out(m.rows(), Int(0));
  for (const auto& [rc, v] : m.entries()) out[rc.first] += v * x[rc.second];
  return out;
}

inline std::vector<Int> apply_transpose(const IntMatrix& m, const std::vector<Int>& x) {
  if (x.size() != m.rows()) throw std::invalid_argument("vector length mismatch");
  std::vector<Int> out(m.cols(), Int(0));
  for (const auto& [rc, v] : m.entries()) out[rc.second] += v * x[rc.first];
  return out;
}

// Basis of the integer kernel {x : m x = 0}: with m right = left^{-1} diag,
// the kernel is spanned by the `right` columns past the diagonal rank.
inline std::vector<std::vector<Int>> kernel_integer(const IntMatrix& m) {
  SNFResult snf = smith_normal_form(m);
  std::vector<std::vector<Int>> out;
  for (std::size_t j = snf.rank(); j < m.cols(); ++j) {
    std::vector<Int> col(m.cols(), Int(0));
    for (std::size_t i = 0; i < m.cols(); ++i) col[i] = snf.right.get(i, j);
    out.push_back(std::move(col));
  }
  return out;
}

// Shape of ker(d_out) / im(d_in) for integer matrices with d_out * d_in = 0.
// The kernel basis from the Smith form is saturated, so boundary columns
// have unique integer coordinates in it.
struct QuotientShape {
  std::size_t free_rank = 0;
  std::vector<Int> torsion;  // diagonal entries > 1

  bool trivial() const { return free_rank == 0 && torsion.empty(); }
};

inline QuotientShape homology_shape(const IntMatrix& d_out, const IntMatrix& d_in) {
  if (d_out.cols() != d_in.rows()) throw std::invalid_argument("chain dimensions mismatch");
  std::vector<std::vector<Int>> kb = kernel_integer(d_out);
  const std::size_t k = kb.size();
  IntMatrix kmat(d_out.cols(), k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < kb[j].size(); ++i) kmat.set(i, j, kb[j][i]);
  SNFResult ksnf = smith_normal_form(kmat);

  IntMatrix rel(d_in.cols(), k);
  for (std::size_t j = 0; j < d_in.cols(); ++j) {
    std::vector<Int> b(d_in.rows(), Int(0));
    for (std::size_t i = 0; i < d_in.rows(); ++i) b[i] = d_in.get(i, j);
    auto c = solve_integer(ksnf, kmat, b);
    if (!c) throw std::invalid_argument("boundary escapes the kernel: not a complex");
    for (std::size_t i = 0; i < k; ++i) rel.set(j, i, (*c)[i]);
  }

  SNFResult rsnf = smith_normal_form(rel);
  QuotientShape out;
  out.free_rank = k - rsnf.rank();
  for (std::size_t i = 0; i < rsnf.rank(); ++i) {
    Int d = rsnf.diag[i];
    if (d < 0) d = -d;
    if (d > 1) out.torsion.push_back(d);
  }
  return out;
}

// Rank over Q by fraction-free (Bareiss) elimination; cheap independent
// cross-check for the Smith-based rank.
inline std::size_t rank_q(const IntMatrix& m) {
  detail::Dense a = m.dense();
  const std::size_t R = m.rows(), C = m.cols();
  std::size_t rank = 0;
  Int prev = 1;
  for (std::size_t c = 0; c < C && rank < R; ++c) {
    std::size_t pr = R;
    for (std::size_t i = rank; i < R; ++i)
      if (a[i][c] != 0) {
        pr = i;
        break;
      }
    if (pr == R) continue;
    std::swap(a[rank], a[pr]);
    for (std::size_t i = rank + 1; i < R; ++i) {
      for (std::size_t j = c + 1; j < C; ++j)
        a[i][j] = (a[rank][c] * a[i][j] - a[i][c] * a[rank][j]) / prev;
      a[i][c] = 0;
    }
    prev = a[rank][c];
    ++rank;
  }
  return rank;
}

// Determinant by Bareiss; used to certify transforms unimodular in tests.
inline Int determinant(const IntMatrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("determinant of non-square");
  const std::size_t n = m.rows();
  if (n == 0) return 1;
  detail::Dense a = m.dense();
  Int prev = 1;
  int sign = 1;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    if (a[k][k] == 0) {
      std::size_t pr = n;
      for (std::size_t i = k + 1; i < n; ++i)
        if (a[i][k] != 0) {
          pr = i;
          break;
        }
      if (pr == n) return 0;
      std::swap(a[k], a[pr]);
      sign = -sign;
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      for (std::size_t j = k + 1; j < n; ++j)
        a[i][j] = (a[k][k] * a[i][j] - a[i][k] * a[k][j]) / prev;
      a[i][k] = 0;
    }
    prev = a[k][k];
  }
  return sign > 0 ? a[n - 1][n - 1] : -a[n - 1][n - 1];
}

struct HowellResult {
  ResMatrix h;          // canonical form, no zero rows
  ResMatrix transform;  // h == transform * m over Z/M
};

namespace detail {

// Echelon + Howell closure over Z/M on an augmented working matrix.  The
// first `lead` columns are the matrix proper; trailing columns ride along
// (transform tracking or kernel extraction).
class HowellWorker {
 public:
  HowellWorker(const Mod& ring, std::size_t lead) : m_(ring), lead_(lead) {}

  void add_row(std::vector<Residue> row) { rows_.push_back(std::move(row)); }

  // Canonicalize: echelonize, normalize pivots to divisors of M, reduce
  // entries above pivots, then close under (M/pivot) * row until stable.
  // Closure multiples that vanish on the lead block but not on the tail are
  // genuine module elements and must be kept; they are the kernel rows.
  void run() {
    echelonize();
    for (;;) {
      auto before = rows_;
      bool appended = false;
      for (const auto& [r, c] : pivots_) {
        Residue g = rows_[r][c];
        Residue mult = m_.modulus() / Mod::gcd_u(g, m_.modulus());
        if (mult == 1) continue;  // pivot is a unit; multiple is the zero row
        std::vector<Residue> extra(rows_[r].size());
        bool nonzero = false;
        for (std::size_t j = 0; j < extra.size(); ++j) {
          extra[j] = m_.mul(rows_[r][j], mult);
          nonzero = nonzero || extra[j] != 0;
        }
        if (nonzero) {
          rows_.push_back(std::move(extra));
          appended = true;
        }
      }
      if (!appended) break;
      echelonize();
      // Redundant multiples reduce away and leave the rows untouched; any
      // real change strictly refines the pivot structure, so this halts.
      if (rows_ == before) break;
    }
  }

  const std::vector<std::vector<Residue>>& rows() const { return rows_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& pivots() const { return pivots_; }
  std::size_t lead() const { return lead_; }

 private:
  void echelonize() {
    pivots_.clear();
    std::size_t r = 0;
    const std::size_t width = rows_.empty() ? 0 : rows_[0].size();
    for (std::size_t c = 0; c < width && r < rows_.size(); ++c) {
      std::size_t pr = rows_.size();
      for (std::size_t i = r; i < rows_.size(); ++i)
        if (rows_[i][c] != 0) {
          pr = i;
          break;
        }
      if (pr == rows_.size()) continue;
      std::swap(rows_[r], rows_[pr]);
      for (std::size_t i = r + 1; i < rows_.size(); ++i) {
        if (rows_[i][c] == 0) continue;
        if (rows_[i][c] % rows_[r][c] == 0) {
          // Plain transvection; the pivot row stays fixed, so redundant
          // closure rows reduce away without perturbing anything.
          Residue q = rows_[i][c] / rows_[r][c];
          for (std::size_t j = 0; j < width; ++j)
            rows_[i][j] = m_.sub(rows_[i][j], m_.mul(q, rows_[r][j]));
          continue;
        }
        // Unimodular 2x2 combine lifted from Z; preserves the row module.
        XGcd e = xgcd(Int(rows_[r][c]), Int(rows_[i][c]));
        Residue s = m_.reduce(e.s), u = m_.reduce(e.t);
        Residue bp = m_.reduce(Int(rows_[i][c]) / e.g), ap = m_.reduce(Int(rows_[r][c]) / e.g);
        for (std::size_t j = 0; j < width; ++j) {
          Residue x = rows_[r][j], y = rows_[i][j];
          rows_[r][j] = m_.add(m_.mul(s, x), m_.mul(u, y));
          rows_[i][j] = m_.sub(m_.mul(ap, y), m_.mul(bp, x));
        }
      }
      // Normalize the pivot to gcd(pivot, M), a canonical divisor of M.
      Residue unit = m_.unit_for(rows_[r][c]);
      if (unit != 1)
        for (std::size_t j = 0; j < width; ++j) rows_[r][j] = m_.mul(rows_[r][j], unit);
      // Reduce entries above the pivot into [0, pivot).
      for (std::size_t i = 0; i < r; ++i) {
        Residue q = rows_[i][c] / rows_[r][c];
        if (q == 0) continue;
        for (std::size_t j = 0; j < width; ++j)
          rows_[i][j] = m_.sub(rows_[i][j], m_.mul(q, rows_[r][j]));
      }
      pivots_.emplace_back(r, c);
      ++r;
    }
    // Drop rows that are zero in the leading block *and* the tail; rows zero
    // in the lead but nonzero in the tail are kept (kernel extraction).
    std::vector<std::vector<Residue>> kept;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      bool zero = std::all_of(rows_[i].begin(), rows_[i].end(), [](Residue v) { return v == 0; });
      if (!zero) kept.push_back(std::move(rows_[i]));
    }
    rows_ = std::move(kept);
    // Recompute pivot list against the kept rows (indices shifted).
    pivots_.clear();
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      for (std::size_t j = 0; j < rows_[i].size(); ++j)
        if (rows_[i][j] != 0) {
          if (j < lead_) pivots_.emplace_back(i, j);
          break;
        }
    }
  }

  Mod m_;
  std::size_t lead_;
  std::vector<std::vector<Residue>> rows_;
  std::vector<std::pair<std::size_t, std::size_t>> pivots_;
};

}  // namespace detail

// Howell form of the row module of m over Z/M, with a transform expressing
// each output row as a combination of input rows.  Canonical: row modules
// are equal iff their Howell forms are identical.
inline HowellResult howell_form(const ResMatrix& m) {
  const Mod& ring = m.ring();
  detail::HowellWorker w(ring, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::vector<Residue> row = m.row(i);
    row.resize(m.cols() + m.rows(), 0);
    row[m.cols() + i] = 1;
    w.add_row(std::move(row));
  }
  w.run();

  // Keep only rows with a nonzero leading block: those form the Howell form.
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < w.rows().size(); ++i) {
    const auto& row = w.rows()[i];
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (row[j] != 0) {
        keep.push_back(i);
        break;
      }
  }
  HowellResult out;
  out.h = ResMatrix(ring.modulus(), keep.size(), m.cols());
  out.transform = ResMatrix(ring.modulus(), keep.size(), m.rows());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto& row = w.rows()[keep[i]];
    for (std::size_t j = 0; j < m.cols(); ++j) out.h.set(i, j, row[j]);
    for (std::size_t j = 0; j < m.rows(); ++j) out.transform.set(i, j, row[m.cols() + j]);
  }
  return out;
}

// Deterministic solution of m * v == rhs over Z/M, if one exists: Howell-form
// the column space and back-substitute.
inline std::optional<std::vector<Residue>> solve_mod(const ResMatrix& m,
                                                     const std::vector<Residue>& rhs) {
  if (rhs.size() != m.rows()) throw std::invalid_argument("vector length mismatch");
  const Mod& ring = m.ring();
  ResMatrix mt(ring.modulus(), m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) mt.set(j, i, m(i, j));
  HowellResult hf = howell_form(mt);

  std::vector<Residue> residual(rhs);
  for (auto& v : residual) v %= ring.modulus();
  std::vector<Residue> coeff(hf.h.rows(), 0);
  for (std::size_t i = 0; i < hf.h.rows(); ++i) {
    std::size_t c = 0;
    while (c < hf.h.cols() && hf.h(i, c) == 0) ++c;
    if (c == hf.h.cols()) continue;
    Residue p = hf.h(i, c);  // divides M after normalization
    if (residual[c] % p != 0) return std::nullopt;
    Residue k = residual[c] / p;
    coeff[i] = k;
    if (k != 0)
      for (std::size_t j = 0; j < hf.h.cols(); ++j)
        residual[j] = ring.sub(residual[j], ring.mul(k, hf.h(i, j)));
  }
  for (Residue v : residual)
    if (v != 0) return std::nullopt;

  std::vector<Residue> x(m.cols(), 0);
  for (std::size_t i = 0; i < hf.h.rows(); ++i) {
    if (coeff[i] == 0) continue;
    for (std::size_t j = 0; j < m.cols(); ++j)
      x[j] = ring.add(x[j], ring.mul(coeff[i], hf.transform(i, j)));
  }
  return x;
}

// Generators, in Howell form, of {v : m * v == 0 over Z/M}.  Found by row
// reduction of [m^T | I]: rows whose leading block vanishes carry the kernel
// combinations in the trailing block.
inline ResMatrix kernel_mod(const ResMatrix& m) {
  const Mod& ring = m.ring();
  detail::HowellWorker w(ring, m.rows());
  for (std::size_t j = 0; j < m.cols(); ++j) {
    std::vector<Residue> row(m.rows() + m.cols(), 0);
    for (std::size_t i = 0; i < m.rows(); ++i) row[i] = m(i, j);
    row[m.rows() + j] = 1;
    w.add_row(std::move(row));
  }
  w.run();

  ResMatrix gens(ring.modulus(), 0, m.cols());
  std::vector<std::vector<Residue>> rows;
  for (const auto& row : w.rows()) {
    bool lead_zero = true;
    for (std::size_t j = 0; j < m.rows(); ++j)
      if (row[j] != 0) {
        lead_zero = false;
        break;
      }
    if (!lead_zero) continue;
    rows.emplace_back(row.begin() + m.rows(), row.end());
  }
  ResMatrix stacked(ring.modulus(), rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) stacked.set(i, j, rows[i][j]);
  return howell_form(stacked).h;
}

// Howell form without transform bookkeeping, for span comparisons.
inline ResMatrix howell_span(const ResMatrix& m) { return howell_form(m).h; }

// Does `v` lie in the row module spanned by the Howell form `h`?
inline bool span_contains(const ResMatrix& h, const std::vector<Residue>& v) {
  if (v.size() != h.cols()) throw std::invalid_argument("vector length mismatch");
  const Mod& ring = h.ring();
  std::vector<Residue> residual(v);
  for (auto& x : residual) x %= ring.modulus();
  for (std::size_t i = 0; i < h.rows(); ++i) {
    std::size_t c = 0;
    while (c < h.cols() && h(i, c) == 0) ++c;
    if (c == h.cols()) continue;
    Residue p = h(i, c);
    if (residual[c] % p != 0) return false;
    Residue k = residual[c] / p;
    if (k != 0)
      for (std::size_t j = 0; j < h.cols(); ++j)
        residual[j] = ring.sub(residual[j], ring.mul(k, h(i, j)));
  }
  return std::all_of(residual.begin(), residual.end(), [](Residue x) { return x == 0; });
}

}  // namespace undlab::exactlin
