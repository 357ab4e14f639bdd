#pragma once

// Anderson's resolution and the windowed double complex: the L-complex with
// differential d, the K-complex with the anticommuting families d_x and
// delta_x, the bar complex with differential delta, the augmentation u, and
// the S/Q splitting that singles out canonical cocycle representatives.

#include <undlab/distribution.hpp>
#include <undlab/exactlin.hpp>
#include <undlab/site.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace undlab::cx {

using dist::AVector;
using dist::StalkSymbol;
using dist::SymbolBasis;
using dist::UPresentation;
using exactlin::IntMatrix;
using site::GroupRingElem;
using site::Level;
using site::ScenarioError;
using site::Site;
using site::TCoeff;

// Raised when a nonzero differential image leaves the materialized window.
class WindowExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Admissible total degrees; the w-excess cap deg w <= deg y + 2 is fixed.
struct Window {
  int lo = 0;
  int hi = 0;
};

inline Window default_window(const Site& s, const Level& z) {
  return Window{-static_cast<int>(std::popcount(s.support_mask(z))) - 1, 2};
}

inline int deg_w(const Level& w) {
  int n = 0;
  for (auto v : w.v) n += static_cast<int>(v);
  return n;
}

// A block of the double complex: the squarefree divisor y (as a mask) and
// the free product w.  The a-part of a block lives in A_{z/z(y)}.
struct BlockKey {
  std::uint32_t y = 0;
  Level w;
  bool operator==(const BlockKey&) const = default;
  auto operator<=>(const BlockKey&) const = default;
};

inline int block_degree(const BlockKey& b) {
  return deg_w(b.w) - std::popcount(b.y);
}

// Parity sign over w-exponents strictly below x.
inline int sign_w_below(const Level& w, std::size_t x) {
  std::uint32_t n = 0;
  for (std::size_t i = 0; i < x; ++i) n += w.v[i];
  return n % 2 == 0 ? 1 : -1;
}

// Parity sign over y-exponents at or below x.
inline int sign_y_upto(std::uint32_t ymask, std::size_t x) {
  return std::popcount(ymask & ((2u << x) - 1)) % 2 == 0 ? 1 : -1;
}

// Chain of the double complex, stored blockwise.
class KChain {
 public:
  void add(const BlockKey& b, const AVector& v) {
    if (v.is_zero()) return;
    auto it = blocks_.find(b);
    if (it == blocks_.end()) {
      blocks_.emplace(b, v);
      return;
    }
    it->second = dist::av_add(it->second, v);
    if (it->second.is_zero()) blocks_.erase(it);
  }

  const std::map<BlockKey, AVector>& blocks() const { return blocks_; }
  bool is_zero() const { return blocks_.empty(); }
  bool operator==(const KChain&) const = default;

 private:
  std::map<BlockKey, AVector> blocks_;
};

inline KChain kc_add(const KChain& a, const KChain& b) {
  KChain c = a;
  for (const auto& [k, v] : b.blocks()) c.add(k, v);
  return c;
}

inline KChain kc_neg(const KChain& a) {
  KChain c;
  for (const auto& [k, v] : a.blocks()) c.add(k, dist::av_neg(v));
  return c;
}

inline KChain kc_scale(const KChain& a, const Int& k) {
  KChain c;
  for (const auto& [key, v] : a.blocks()) c.add(key, dist::av_scale(v, k));
  return c;
}

inline KChain kc_mul_t(const site::AbelianGroup& h, const KChain& a, const TCoeff& t) {
  KChain c;
  for (const auto& [key, v] : a.blocks()) c.add(key, dist::av_mul_t(h, v, t));
  return c;
}

class KComplex {
 public:
  KComplex(const Site& s, Level ambient, Window win)
      : site_(&s), ambient_(std::move(ambient)), win_(win) {
    support_ = s.support_mask(ambient_);
    for (std::size_t i = 0; i < s.prime_count(); ++i)
      if (support_ & (1u << i)) primes_.push_back(i);

    // One symbol basis per y; the a-part lives in A at the complementary
    // stalk, which only depends on y.
    std::uint32_t sub = support_;
    for (;;) {
      Level below = ambient_;
      for (std::size_t i = 0; i < below.v.size(); ++i)
        if (sub & (1u << i)) below.v[i] = 0;
      bases_.emplace(sub, SymbolBasis(s, below));
      if (sub == 0) break;
      sub = (sub - 1) & support_;
    }

    for (const auto& [ymask, basis] : bases_) {
      int degy = std::popcount(ymask);
      std::vector<Level> ws;
      Level w{std::vector<std::uint32_t>(s.prime_count(), 0)};
      enumerate_w(w, 0, degy + 2, ws);
      for (auto& cand : ws) {
        BlockKey b{ymask, std::move(cand)};
        if (in_window(b)) blocks_.push_back(std::move(b));
      }
    }
    std::sort(blocks_.begin(), blocks_.end());
  }

  const Site& site() const { return *site_; }
  const Level& ambient() const { return ambient_; }
  const Window& window() const { return win_; }
  const std::vector<std::size_t>& support_primes() const { return primes_; }
  const std::vector<BlockKey>& blocks() const { return blocks_; }

  const SymbolBasis& block_basis(std::uint32_t ymask) const {
    auto it = bases_.find(ymask);
    if (it == bases_.end()) throw ScenarioError("block outside the complex");
    return it->second;
  }

  bool in_window(const BlockKey& b) const {
    if (b.y & ~support_) return false;
    for (std::size_t i = 0; i < b.w.v.size(); ++i)
      if (b.w.v[i] != 0 && !(support_ & (1u << i))) return false;
    int degy = std::popcount(b.y), degw = deg_w(b.w);
    if (degw > degy + 2) return false;
    int total = degw - degy;
    return win_.lo <= total && total <= win_.hi;
  }

  std::vector<BlockKey> blocks_of_degree(int n) const {
    std::vector<BlockKey> out;
    for (const auto& b : blocks_)
      if (block_degree(b) == n) out.push_back(b);
    return out;
  }

  std::size_t dim_of_degree(int n) const {
    std::size_t d = 0;
    for (const auto& b : blocks_of_degree(n)) d += block_basis(b.y).dim();
    return d;
  }

  // Dense coordinates of a pure degree-n chain, blocks in sorted order.
  std::vector<Int> dense_degree(const KChain& c, int n) const {
    for (const auto& [b, v] : c.blocks())
      if (block_degree(b) != n) throw ScenarioError("chain is not homogeneous");
    std::vector<Int> out(dim_of_degree(n), Int(0));
    std::size_t off = 0;
    for (const auto& b : blocks_of_degree(n)) {
      const SymbolBasis& basis = block_basis(b.y);
      auto it = c.blocks().find(b);
      if (it != c.blocks().end()) {
        std::vector<Int> local = basis.dense(it->second);
        std::copy(local.begin(), local.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
      }
      off += basis.dim();
    }
    return out;
  }

  KChain sparse_degree(const std::vector<Int>& v, int n) const {
    if (v.size() != dim_of_degree(n)) throw ScenarioError("coordinate length mismatch");
    KChain c;
    std::size_t off = 0;
    for (const auto& b : blocks_of_degree(n)) {
      const SymbolBasis& basis = block_basis(b.y);
      std::vector<Int> local(v.begin() + static_cast<std::ptrdiff_t>(off),
                             v.begin() + static_cast<std::ptrdiff_t>(off + basis.dim()));
      c.add(b, basis.sparse(local));
      off += basis.dim();
    }
    return c;
  }

  // Unit chain on one Z-coordinate of a block.
  KChain unit(const BlockKey& b, std::size_t zindex) const {
    const SymbolBasis& basis = block_basis(b.y);
    const std::size_t hs = site_->h().size();
    TCoeff t = site::t_zero(site_->h());
    t[zindex % hs] = 1;
    KChain c;
    c.add(b, AVector::unit(basis.symbol(zindex / hs), std::move(t)));
    return c;
  }

  KChain d_x(std::size_t x, const KChain& c) const {
    KChain out;
    for (const auto& [b, v] : c.blocks()) {
      if (!(b.y & (1u << x))) continue;
      int sgn = site_->omega(x, b.y) * sign_w_below(b.w, x);
      AVector img = dist::lambda_map(*site_, x, v);
      if (sgn < 0) img = dist::av_neg(img);
      push_checked(out, BlockKey{b.y & ~(1u << x), b.w}, std::move(img));
    }
    return out;
  }

  KChain delta_x(std::size_t x, const KChain& c) const {
    const Site& s = *site_;
    GroupRingElem one_minus_sigma = s.gr_of(s.ge_identity(), site::t_one(s.h()));
    one_minus_sigma =
        s.gr_add(one_minus_sigma, s.gr_neg(s.gr_of(s.sigma(x), site::t_one(s.h()))));
    GroupRingElem norm = s.norm_element(x);

    KChain out;
    for (const auto& [b, v] : c.blocks()) {
      bool even = b.w.v[x] % 2 == 0;
      int sgn = sign_y_upto(b.y, x) * sign_w_below(b.w, x);
      AVector img = dist::av_act(s, even ? one_minus_sigma : norm, v);
      if (sgn < 0) img = dist::av_neg(img);
      BlockKey nb{b.y, b.w};
      nb.w.v[x] += 1;
      push_checked(out, std::move(nb), std::move(img));
    }
    return out;
  }

  // The total differential d + delta.
  KChain total(const KChain& c) const {
    KChain out;
    for (std::size_t x : primes_) {
      out = kc_add(out, d_x(x, c));
      out = kc_add(out, delta_x(x, c));
    }
    return out;
  }

  // Matrix of d + delta from degree n to degree n + 1.
  IntMatrix matrix_total(int n) const {
    IntMatrix m(dim_of_degree(n + 1), dim_of_degree(n));
    std::size_t col = 0;
    for (const auto& b : blocks_of_degree(n)) {
      const SymbolBasis& basis = block_basis(b.y);
      for (std::size_t j = 0; j < basis.dim(); ++j, ++col) {
        std::vector<Int> img = dense_degree(total(unit(b, j)), n + 1);
        for (std::size_t i = 0; i < img.size(); ++i)
          if (img[i] != 0) m.set(i, col, img[i]);
      }
    }
    return m;
  }

 private:
  void enumerate_w(Level& w, std::size_t slot, int budget, std::vector<Level>& out) const {
    if (slot == primes_.size()) {
      out.push_back(w);
      return;
    }
    std::size_t x = primes_[slot];
    for (int v = 0; v <= budget; ++v) {
      w.v[x] = static_cast<std::uint32_t>(v);
      enumerate_w(w, slot + 1, budget - v, out);
    }
    w.v[x] = 0;
  }

  void push_checked(KChain& out, BlockKey b, AVector v) const {
    if (v.is_zero()) return;
    if (!in_window(b))
      throw WindowExceeded("nonzero image leaves the window at total degree " +
                           std::to_string(block_degree(b)));
    out.add(b, v);
  }

  const Site* site_;
  Level ambient_;
  Window win_;
  std::uint32_t support_ = 0;
  std::vector<std::size_t> primes_;
  std::map<std::uint32_t, SymbolBasis> bases_;
  std::vector<BlockKey> blocks_;
};

// ---------------------------------------------------------------- L-complex

// Chain of Anderson's resolution: y-mask to a-part.
using LChain = std::map<std::uint32_t, AVector>;

inline void l_accum(LChain& c, std::uint32_t y, const AVector& v) {
  if (v.is_zero()) return;
  auto it = c.find(y);
  if (it == c.end()) {
    c.emplace(y, v);
    return;
  }
  it->second = dist::av_add(it->second, v);
  if (it->second.is_zero()) c.erase(it);
}

inline LChain d_L(const Site& s, const LChain& c) {
  LChain out;
  for (const auto& [y, v] : c) {
    for (std::size_t x = 0; x < s.prime_count(); ++x) {
      if (!(y & (1u << x))) continue;
      AVector img = dist::lambda_map(s, x, v);
      if (s.omega(x, y) < 0) img = dist::av_neg(img);
      l_accum(out, y & ~(1u << x), img);
    }
  }
  return out;
}

struct ResolutionReport {
  bool d2_zero = true;
  std::vector<std::pair<int, bool>> vanishing;  // negative degrees: H^n = 0
  bool h0_free = false;
  bool h0_rank_matches = false;
  bool h0_is_U = false;
  std::string detail;

  bool ok() const {
    if (!d2_zero || !h0_free || !h0_rank_matches || !h0_is_U) return false;
    for (const auto& [n, v] : vanishing)
      if (!v) return false;
    return true;
  }
};

inline ResolutionReport verify_resolution(const Site& s, const Level& z) {
  ResolutionReport rep;
  std::uint32_t support = s.support_mask(z);
  int nprimes = std::popcount(support);

  // y-masks grouped by degree -popcount, ascending within a degree.
  std::vector<std::vector<std::uint32_t>> masks(static_cast<std::size_t>(nprimes) + 1);
  std::uint32_t sub = support;
  for (;;) {
    masks[static_cast<std::size_t>(std::popcount(sub))].push_back(sub);
    if (sub == 0) break;
    sub = (sub - 1) & support;
  }
  for (auto& level : masks) std::sort(level.begin(), level.end());

  std::map<std::uint32_t, SymbolBasis> bases;
  for (const auto& level : masks)
    for (auto y : level) {
      Level below = z;
      for (std::size_t i = 0; i < below.v.size(); ++i)
        if (y & (1u << i)) below.v[i] = 0;
      bases.emplace(y, SymbolBasis(s, below));
    }

  auto dim_at = [&](int k) {
    std::size_t d = 0;
    for (auto y : masks[static_cast<std::size_t>(k)]) d += bases.at(y).dim();
    return d;
  };

  auto dense_at = [&](const LChain& c, int k) {
    std::vector<Int> out(dim_at(k), Int(0));
    std::size_t off = 0;
    for (auto y : masks[static_cast<std::size_t>(k)]) {
      auto it = c.find(y);
      if (it != c.end()) {
        std::vector<Int> local = bases.at(y).dense(it->second);
        std::copy(local.begin(), local.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
      }
      off += bases.at(y).dim();
    }
    return out;
  };

  // D[k]: degree -k to degree -k+1, for k = nprimes .. 1.
  std::map<int, IntMatrix> D;
  for (int k = nprimes; k >= 1; --k) {
    IntMatrix m(dim_at(k - 1), dim_at(k));
    std::size_t col = 0;
    for (auto y : masks[static_cast<std::size_t>(k)]) {
      const SymbolBasis& basis = bases.at(y);
      const std::size_t hs = s.h().size();
      for (std::size_t j = 0; j < basis.dim(); ++j, ++col) {
        TCoeff t = site::t_zero(s.h());
        t[j % hs] = 1;
        LChain unit;
        unit.emplace(y, AVector::unit(basis.symbol(j / hs), std::move(t)));
        std::vector<Int> img = dense_at(d_L(s, unit), k - 1);
        for (std::size_t i = 0; i < img.size(); ++i)
          if (img[i] != 0) m.set(i, col, img[i]);
      }
    }
    D.emplace(k, std::move(m));
  }

  for (int k = nprimes; k >= 2; --k) {
    IntMatrix sq = D.at(k - 1) * D.at(k);
    if (!sq.entries().empty()) {
      rep.d2_zero = false;
      rep.detail = "d squared nonzero from degree " + std::to_string(-k);
    }
  }

  // H^{-k} for 0 < k < nprimes must vanish (free part and torsion).
  for (int k = nprimes - 1; k >= 1; --k) {
    auto shape = exactlin::homology_shape(D.at(k), D.at(k + 1));
    rep.vanishing.emplace_back(-k, shape.trivial());
    if (!shape.trivial()) rep.detail = "H^" + std::to_string(-k) + " nonzero";
  }
  if (nprimes >= 1) {
    // Bottom degree -nprimes: kernel must be trivial.
    auto shape = exactlin::homology_shape(
        D.at(nprimes), IntMatrix(dim_at(nprimes), 0));
    rep.vanishing.emplace_back(-nprimes, shape.trivial());
    if (!shape.trivial()) rep.detail = "H^" + std::to_string(-nprimes) + " nonzero";
  }

  // H^0 must be free of the same rank as U_z, with the boundary image equal
  // to the relation lattice; equality follows from containment plus equal
  // rank once both lattices are saturated.
  UPresentation u(s, z);
  IntMatrix d_in =
      nprimes >= 1 ? D.at(1) : IntMatrix(dim_at(0), 0);
  auto h0 = exactlin::homology_shape(IntMatrix(0, dim_at(0)), d_in);
  rep.h0_free = h0.torsion.empty();
  rep.h0_rank_matches = h0.free_rank == u.rank_z();
  rep.h0_is_U = true;
  const SymbolBasis& top = bases.at(0);
  for (std::size_t j = 0; j < d_in.cols() && rep.h0_is_U; ++j) {
    std::vector<Int> colv(dim_at(0), Int(0));
    for (std::size_t i = 0; i < colv.size(); ++i) colv[i] = d_in.get(i, j);
    if (!u.in_relations(top.sparse(colv))) {
      rep.h0_is_U = false;
      rep.detail = "boundary image escapes the relation lattice";
    }
  }
  if (!rep.h0_free || !rep.h0_rank_matches) rep.detail = "H^0 does not match U";
  return rep;
}

// --------------------------------------------------------- anticommutation

struct AnticommuteReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // compositions leaving the window
  bool passed = true;
  std::string counterexample;
};

// Every unordered pair from {d_x} + {delta_x} anticommutes; each single
// differential squares to zero.  Compositions leaving the window are
// skipped, not failed.
inline AnticommuteReport verify_anticommute(const KComplex& K) {
  AnticommuteReport rep;
  const auto& primes = K.support_primes();
  const std::size_t nd = 2 * primes.size();

  auto apply = [&](std::size_t i, const KChain& c) {
    return i < primes.size() ? K.d_x(primes[i], c) : K.delta_x(primes[i - primes.size()], c);
  };
  auto name = [&](std::size_t i) {
    return (i < primes.size() ? "d_" : "delta_") +
           K.site().prime(primes[i % primes.size()]).id;
  };

  for (const auto& b : K.blocks()) {
    const SymbolBasis& basis = K.block_basis(b.y);
    for (std::size_t j = 0; j < basis.dim(); ++j) {
      KChain unit = K.unit(b, j);
      for (std::size_t p = 0; p < nd; ++p)
        for (std::size_t q = p; q < nd; ++q) {
          KChain sum;
          try {
            sum = p == q ? apply(p, apply(p, unit))
                         : kc_add(apply(p, apply(q, unit)), apply(q, apply(p, unit)));
          } catch (const WindowExceeded&) {
            ++rep.skipped;
            continue;
          }
          ++rep.checked;
          if (!sum.is_zero() && rep.passed) {
            rep.passed = false;
            rep.counterexample = name(p) + " with " + name(q);
          }
        }
    }
  }
  return rep;
}

// ------------------------------------------------------------- bar complex

// Bar chain: w-level to an A_z combination, understood modulo the relation
// lattice D_z blockwise.
using BarChain = std::map<Level, AVector>;

inline void bar_accum(BarChain& c, const Level& w, const AVector& v) {
  if (v.is_zero()) return;
  auto it = c.find(w);
  if (it == c.end()) {
    c.emplace(w, v);
    return;
  }
  it->second = dist::av_add(it->second, v);
  if (it->second.is_zero()) c.erase(it);
}

// [a, y, w] passes to [a, w] when y = 1 and dies otherwise.
inline BarChain u_map(const KChain& c) {
  BarChain out;
  for (const auto& [b, v] : c.blocks())
    if (b.y == 0) bar_accum(out, b.w, v);
  return out;
}

// Free coordinates in U of a degree-0 bar chain.
inline std::vector<Int> bar_to_U(const UPresentation& u, const BarChain& c) {
  AVector zero_part;
  for (const auto& [w, v] : c) {
    if (deg_w(w) != 0) throw ScenarioError("bar chain is not of degree 0");
    zero_part = dist::av_add(zero_part, v);
  }
  return u.reduce(zero_part);
}

inline BarChain bar_delta_x(const Site& s, std::size_t x, const BarChain& c) {
  GroupRingElem one_minus_sigma = s.gr_of(s.ge_identity(), site::t_one(s.h()));
  one_minus_sigma =
      s.gr_add(one_minus_sigma, s.gr_neg(s.gr_of(s.sigma(x), site::t_one(s.h()))));
  GroupRingElem norm = s.norm_element(x);

  BarChain out;
  for (const auto& [w, v] : c) {
    bool even = w.v[x] % 2 == 0;
    AVector img = dist::av_act(s, even ? one_minus_sigma : norm, v);
    if (sign_w_below(w, x) < 0) img = dist::av_neg(img);
    Level nw = w;
    nw.v[x] += 1;
    bar_accum(out, nw, img);
  }
  return out;
}

// --------------------------------------------------------- S / Q splitting

// The quotient Q keeps exactly the symbols [1, y, w] with y | support(w);
// everything else spans S.
inline bool q_retained(const Site& s, const BlockKey& b, const StalkSymbol& sym) {
  if (!(sym.zp == s.level_one() && sym.g == s.ge_identity())) return false;
  return (b.y & ~s.support_mask(b.w)) == 0;
}

// Q-coordinates: block to the T-coefficient of its trivial symbol.
using QChain = std::map<BlockKey, TCoeff>;

inline QChain project_Q(const Site& s, const KChain& c) {
  QChain out;
  for (const auto& [b, v] : c.blocks()) {
    if (b.y & ~s.support_mask(b.w)) continue;
    for (const auto& [sym, t] : v.terms()) {
      if (!q_retained(s, b, sym)) continue;
      auto it = out.find(b);
      if (it == out.end())
        out.emplace(b, t);
      else {
        it->second = site::t_add(it->second, t);
        if (site::t_is_zero(it->second)) out.erase(it);
      }
    }
  }
  return out;
}

}  // namespace undlab::cx
