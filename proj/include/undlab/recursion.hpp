// Degree-lowering structure on fixed classes: the diagonal shift on the
// double complex, its characterization through the local decomposition
// solve, the Kolyvagin derivative operators and classes, and verifiers for
// the universal recursion and the change-of-basis certificates.
#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "undlab/cohomology.hpp"
#include "undlab/complexes.hpp"
#include "undlab/distribution.hpp"
#include "undlab/exactlin.hpp"
#include "undlab/ints.hpp"
#include "undlab/site.hpp"

namespace undlab::rec {

using coh::CanonicalBasis;
using coh::CohomologyClass;
using dist::AVector;
using dist::StalkSymbol;
using dist::SymbolBasis;
using dist::UPresentation;
using exactlin::IntMatrix;
using exactlin::ResMatrix;
using site::GroupRingElem;
using site::Level;
using site::ScenarioError;
using site::Site;
using site::TCoeff;

// ------------------------------------------------------------ diagonal shift

// Divides both the y-part and the w-part of every block by x; blocks with x
// outside y or outside w die.  Total degree and w-excess are preserved, so
// the image never needs a window check.
inline cx::KChain diagonal_shift(std::size_t x, const cx::KChain& c) {
  cx::KChain out;
  for (const auto& [b, v] : c.blocks()) {
    if (!(b.y & (1u << x)) || b.w.v[x] == 0) continue;
    cx::BlockKey moved{b.y & ~(1u << x), b.w};
    moved.w.v[x] -= 1;
    out.add(moved, v);
  }
  return out;
}

inline bool kc_divisible(const cx::KChain& c, const Int& m) {
  for (const auto& [b, v] : c.blocks())
    for (const auto& [sym, t] : v.terms())
      for (const auto& coeff : t)
        if (coeff % m != 0) return false;
  return true;
}

inline std::string block_name(const Site& s, const cx::BlockKey& b) {
  std::string out = "[y=" + coh::divisor_name(s, b.y) + ", w=(";
  for (std::size_t i = 0; i < b.w.v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(b.w.v[i]);
  }
  return out + ")]";
}

struct ShiftReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = true;
  std::string counterexample;
  bool ok() const { return passed; }
};

// Per generator and per prime pair: the shift commutes with both
// differentials at other primes, annihilates the horizontal differential at
// its own prime from either side, and its vertical commutator at its own
// prime is divisible by the modulus.  Window faults skip the identity.
inline ShiftReport verify_shift_relations(const cx::KComplex& K) {
  const Site& s = K.site();
  const Int m(static_cast<long long>(s.modulus()));
  ShiftReport rep;

  auto fail = [&](const cx::BlockKey& b, std::size_t x, const char* what) {
    rep.passed = false;
    if (rep.counterexample.empty())
      rep.counterexample =
          std::string(what) + " at " + s.prime(x).id + " on " + block_name(s, b);
  };

  for (const auto& b : K.blocks()) {
    const SymbolBasis& basis = K.block_basis(b.y);
    for (std::size_t j = 0; j < basis.dim(); ++j) {
      cx::KChain u = K.unit(b, j);
      for (std::size_t x : K.support_primes()) {
        cx::KChain su = diagonal_shift(x, u);
        try {
          if (!diagonal_shift(x, K.d_x(x, u)).is_zero() || !K.d_x(x, su).is_zero())
            fail(b, x, "shift against its own horizontal differential is nonzero");
          ++rep.checked;
        } catch (const cx::WindowExceeded&) {
          ++rep.skipped;
        }
        try {
          cx::KChain comm =
              cx::kc_add(diagonal_shift(x, K.delta_x(x, u)), cx::kc_neg(K.delta_x(x, su)));
          if (!kc_divisible(comm, m))
            fail(b, x, "vertical commutator escapes the modulus");
          ++rep.checked;
        } catch (const cx::WindowExceeded&) {
          ++rep.skipped;
        }
        for (std::size_t xp : K.support_primes()) {
          if (xp == x) continue;
          try {
            if (!(diagonal_shift(x, K.d_x(xp, u)) == K.d_x(xp, su)))
              fail(b, xp, "shift fails to commute with the horizontal differential");
            ++rep.checked;
          } catch (const cx::WindowExceeded&) {
            ++rep.skipped;
          }
          try {
            if (!(diagonal_shift(x, K.delta_x(xp, u)) == K.delta_x(xp, su)))
              fail(b, xp, "shift fails to commute with the vertical differential");
            ++rep.checked;
          } catch (const cx::WindowExceeded&) {
            ++rep.skipped;
          }
        }
      }
    }
  }
  return rep;
}

// ------------------------------------------------------ Kolyvagin operators

struct KolyvaginOperator {
  std::uint32_t y = 0;
  GroupRingElem elem;
};

// The derivative at one prime: sum of k sigma^k over the layer group.
inline GroupRingElem kolyvagin_derivative(const Site& s, std::size_t x) {
  GroupRingElem d;
  for (std::uint32_t k = 1; k < s.prime(x).order; ++k)
    d.add_term(s.ge_pow(s.sigma(x), static_cast<long long>(k)),
               site::t_scale(site::t_one(s.h()), Int(k)));
  return d;
}

// Product of the derivatives over the primes of y; the empty product is the
// identity of the group ring.
inline KolyvaginOperator kolyvagin_operator(const Site& s, std::uint32_t ymask) {
  KolyvaginOperator op;
  op.y = ymask;
  op.elem = s.gr_of(s.ge_identity(), site::t_one(s.h()));
  for (std::size_t x = 0; x < s.prime_count(); ++x)
    if (ymask & (1u << x)) op.elem = s.gr_mul(op.elem, kolyvagin_derivative(s, x));
  return op;
}

// The derivative class at y: D_y applied to the full stalk symbol of y,
// reduced to the free coordinates and then mod M.  The derivative identity
// forces the image to be fixed, so a failure here is fatal.
inline CohomologyClass kolyvagin_class(const Site& s, const UPresentation& u,
                                       std::uint32_t ymask) {
  std::uint32_t support = s.support_mask(u.ambient());
  if (ymask & ~support) throw ScenarioError("divisor outside the ambient level");
  StalkSymbol top{s.stalk_of(ymask, u.ambient()), s.ge_identity()};
  AVector c = dist::av_act(s, kolyvagin_operator(s, ymask).elem,
                           AVector::unit(std::move(top), site::t_one(s.h())));
  const Mod ring(s.modulus());
  std::vector<Residue> rep = coh::residues_of(u.reduce(c), ring);
  if (!coh::class_is_fixed(s, u, rep))
    throw ScenarioError("derivative class at " + coh::divisor_name(s, ymask) +
                        " is not fixed by the structure group");
  return CohomologyClass{u.ambient(), s.modulus(), std::move(rep),
                         "derivative class at " + coh::divisor_name(s, ymask)};
}

// -------------------------------------------------- the local congruence

// Generator rows, in the free coordinates of U, of the submodule spanned by
// the translates of [z' z(x)] - g [z' z(x)] and r_x(Fr^{-1}) [z'] - g [z' z(x)]
// over stalks z' avoiding x and g in the layer group at x, closed under the
// group action and the coefficient ring.
inline std::vector<AVector> congruence_generators(const Site& s, const Level& z, std::size_t x) {
  if (z.v[x] == 0) throw ScenarioError("congruence submodule needs the prime in the level");
  auto translations = s.group_elements(s.support_mask(z));
  Level below = z;
  below.v[x] = 0;

  std::vector<AVector> gens;
  for (const auto& zp : s.stalks(below)) {
    StalkSymbol plain{zp, s.ge_identity()};
    StalkSymbol raised{zp, s.ge_identity()};
    raised.zp.v[x] = z.v[x];
    AVector unit_raised = AVector::unit(raised, site::t_one(s.h()));
    AVector head =
        dist::av_act(s, s.r_at_frob(x), AVector::unit(plain, site::t_one(s.h())));
    for (std::uint32_t k = 0; k < s.prime(x).order; ++k) {
      AVector moved = dist::av_act_elem(
          s, s.ge_pow(s.sigma(x), static_cast<long long>(k)), unit_raised);
      for (const AVector& gen :
           {dist::av_sub(unit_raised, moved), dist::av_sub(head, moved)}) {
        for (const auto& g : translations) {
          AVector shifted = dist::av_act_elem(s, g, gen);
          for (std::size_t hk = 0; hk < s.h().size(); ++hk) {
            TCoeff t = site::t_zero(s.h());
            t[hk] = 1;
            gens.push_back(dist::av_mul_t(s.h(), shifted, t));
          }
        }
      }
    }
  }
  return gens;
}

inline IntMatrix congruence_rows(const Site& s, const UPresentation& u, std::size_t x) {
  std::vector<AVector> gens = congruence_generators(s, u.ambient(), x);
  std::vector<std::vector<Int>> rows;
  rows.reserve(gens.size());
  for (const AVector& gen : gens) rows.push_back(u.reduce(gen));

  IntMatrix out(rows.size(), u.rank_z());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) out.set(i, j, rows[i][j]);
  return out;
}

// Membership of (1 - sigma_{z(x)}) a - gamma_x b in M times the congruence
// submodule: the defining relation of the degree-lowering operator.
inline bool defining_relation_holds(const Site& s, const UPresentation& u,
                                    const UPresentation& u_below, std::size_t x,
                                    const std::vector<Residue>& a_rep,
                                    const std::vector<Residue>& b_rep) {
  AVector a = u.lift(coh::ints_of(a_rep));
  AVector lhs = dist::av_sub(a, dist::av_act_elem(s, s.sigma(x), a));
  AVector gb = dist::av_act(s, s.gamma(x), u_below.lift(coh::ints_of(b_rep)));
  std::vector<Int> v = u.reduce(dist::av_sub(lhs, gb));

  IntMatrix gens = congruence_rows(s, u, x);
  const Int m(static_cast<long long>(s.modulus()));
  IntMatrix scaled(gens.rows(), gens.cols());
  for (std::size_t i = 0; i < gens.rows(); ++i)
    for (std::size_t j = 0; j < gens.cols(); ++j) scaled.set(i, j, gens.get(i, j) * m);
  return exactlin::lattice_contains(exactlin::hermite_form(scaled), v);
}

// ------------------------------------------- the two operator realizations

namespace detail {

inline std::string vec_name(const std::vector<Residue>& v) {
  std::string out = "(";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out + ")";
}

}  // namespace detail

// Constructive realization on representatives: solve
//   (sigma_{z(x)} - 1) a = M b + sum over x' | z of lambda_{x'} b_{x'}
// over the integers in the symbol coordinates of A_z and return the class
// of the component at x in the free coordinates of U at z/z(x).  Any
// solution gives the same class mod M; the flag permutes the generator
// blocks so that independence of the choice stays testable.
inline std::vector<Residue> vardelta_characterized(const Site& s, const UPresentation& u,
                                                   const UPresentation& u_below,
                                                   std::size_t x,
                                                   const std::vector<Residue>& a_rep,
                                                   bool reversed_generators = false) {
  const Level& z = u.ambient();
  if (z.v[x] == 0) throw ScenarioError("prime does not divide the ambient level");
  Level target = z;
  target.v[x] = 0;
  if (!(u_below.ambient() == target))
    throw ScenarioError("target presentation is at the wrong level");

  AVector a = u.lift(coh::ints_of(a_rep));
  AVector rhs_av = dist::av_sub(dist::av_act_elem(s, s.sigma(x), a), a);
  std::vector<Int> rhs = u.basis().dense(rhs_av);

  std::vector<std::size_t> xs;
  for (std::size_t i = 0; i < s.prime_count(); ++i)
    if (z.v[i] != 0) xs.push_back(i);
  if (reversed_generators) std::reverse(xs.begin(), xs.end());

  const std::size_t n = u.basis().dim();
  std::vector<SymbolBasis> subbases;
  std::vector<std::size_t> offsets;
  std::size_t cols = n;
  for (std::size_t xp : xs) {
    Level sub = z;
    sub.v[xp] = 0;
    subbases.emplace_back(s, sub);
    offsets.push_back(cols);
    cols += subbases.back().dim();
  }

  IntMatrix sys(n, cols);
  const Int m(static_cast<long long>(s.modulus()));
  for (std::size_t i = 0; i < n; ++i) sys.set(i, i, m);
  const std::size_t hs = s.h().size();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const SymbolBasis& sb = subbases[k];
    for (std::size_t j = 0; j < sb.dim(); ++j) {
      TCoeff t = site::t_zero(s.h());
      t[j % hs] = 1;
      AVector img =
          dist::lambda_map(s, xs[k], AVector::unit(sb.symbol(j / hs), std::move(t)));
      std::vector<Int> col = u.basis().dense(img);
      for (std::size_t i = 0; i < n; ++i)
        if (col[i] != 0) sys.set(i, offsets[k] + j, col[i]);
    }
  }

  auto sol = exactlin::solve_integer(sys, rhs);
  if (!sol) {
    const Mod ring(s.modulus());
    throw ScenarioError(
        "decomposition unsolvable at " + s.prime(x).id + ": residual class " +
        detail::vec_name(coh::residues_of(u.reduce(rhs_av), ring)));
  }

  std::size_t kx = 0;
  while (xs[kx] != x) ++kx;
  std::vector<Int> bx(sol->begin() + static_cast<std::ptrdiff_t>(offsets[kx]),
                      sol->begin() + static_cast<std::ptrdiff_t>(offsets[kx] +
                                                                 subbases[kx].dim()));
  return coh::residues_of(u_below.reduce(subbases[kx].sparse(bx)), Mod(s.modulus()));
}

// Realization through the double complex: write the class in the canonical
// basis, combine the stored lifts, shift, and read the new class off the
// bidegree-(0,0) block in the target presentation.
inline CohomologyClass delta_on_class(const Site& s, const UPresentation& u,
                                      const UPresentation& u_below,
                                      const CanonicalBasis& basis, std::size_t x,
                                      const CohomologyClass& c) {
  const Level& z = u.ambient();
  if (z.v[x] == 0) throw ScenarioError("prime does not divide the ambient level");
  Level target = z;
  target.v[x] = 0;
  if (!(u_below.ambient() == target))
    throw ScenarioError("target presentation is at the wrong level");

  std::vector<TCoeff> coords = coh::class_coordinates(s, u, c, basis);
  cx::KChain lift;
  for (std::size_t i = 0; i < coords.size(); ++i)
    lift = cx::kc_add(lift, cx::kc_mul_t(s.h(), basis.lifts[i].chain, coords[i]));

  cx::KChain shifted = diagonal_shift(x, lift);
  AVector head;
  auto it = shifted.blocks().find(cx::BlockKey{0, s.level_one()});
  if (it != shifted.blocks().end()) head = it->second;

  const Mod ring(s.modulus());
  std::vector<Residue> rep = coh::residues_of(u_below.reduce(head), ring);
  if (!coh::class_is_fixed(s, u_below, rep))
    throw ScenarioError("shifted class is not fixed by the structure group");
  return CohomologyClass{u_below.ambient(), s.modulus(), std::move(rep),
                         "diagonal shift at " + s.prime(x).id};
}

// ------------------------------------------------------- recursive families

// A family of fixed classes indexed by the squarefree divisors of the
// ambient support, each living at its own divisor level.
struct RecursiveFamily {
  Level ambient;
  Residue modulus = 0;
  std::string name;
  std::vector<std::uint32_t> ys;
  std::vector<CohomologyClass> classes;

  std::size_t index_of(std::uint32_t y) const {
    for (std::size_t i = 0; i < ys.size(); ++i)
      if (ys[i] == y) return i;
    throw ScenarioError("no family class at this divisor");
  }
  const CohomologyClass& at(std::uint32_t y) const { return classes[index_of(y)]; }
};

// The canonical classes, each computed at its own divisor level.
inline RecursiveFamily canonical_family(const Site& s, const Level& z) {
  RecursiveFamily f;
  f.ambient = z;
  f.modulus = s.modulus();
  f.name = "canonical";
  f.ys = coh::squarefree_divisors(s.support_mask(z));
  for (std::uint32_t y : f.ys) {
    Level zy = s.stalk_of(y, z);
    UPresentation uy(s, zy);
    cx::KComplex K(s, zy, cx::default_window(s, zy));
    f.classes.push_back(coh::canonical_basis(K, uy).class_at(y));
  }
  return f;
}

// The derivative classes, each at its own divisor level.
inline RecursiveFamily kolyvagin_family(const Site& s, const Level& z) {
  RecursiveFamily f;
  f.ambient = z;
  f.modulus = s.modulus();
  f.name = "kolyvagin";
  f.ys = coh::squarefree_divisors(s.support_mask(z));
  for (std::uint32_t y : f.ys) {
    UPresentation uy(s, s.stalk_of(y, z));
    f.classes.push_back(kolyvagin_class(s, uy, y));
  }
  return f;
}

struct RecursionReport {
  struct SupportItem {
    std::uint32_t y = 0;
    bool ok = false;
  };
  struct ShiftItem {
    std::uint32_t y = 0;
    std::size_t x = 0;
    bool ok = false;
  };
  std::vector<SupportItem> support;
  std::vector<ShiftItem> shifts;
  bool passed = true;
  std::string counterexample;
  bool ok() const { return passed; }
};

// The two recursion conditions: each class lives and is fixed at its own
// divisor level, and the degree-lowering operator sends the class at y to
// the class at y/x for every prime x of y.
inline RecursionReport verify_universal_recursion(const Site& s, const RecursiveFamily& f) {
  RecursionReport rep;
  std::map<std::uint32_t, std::unique_ptr<UPresentation>> pres;
  auto at = [&](std::uint32_t mask) -> const UPresentation& {
    auto it = pres.find(mask);
    if (it == pres.end())
      it = pres
               .emplace(mask,
                        std::make_unique<UPresentation>(s, s.stalk_of(mask, f.ambient)))
               .first;
    return *it->second;
  };

  for (std::size_t i = 0; i < f.ys.size(); ++i) {
    std::uint32_t y = f.ys[i];
    const UPresentation& uy = at(y);
    const CohomologyClass& cy = f.classes[i];
    bool sup = cy.ambient == uy.ambient() && cy.modulus == f.modulus &&
               cy.rep.size() == uy.rank_z() && coh::class_is_fixed(s, uy, cy.rep);
    rep.support.push_back({y, sup});
    if (!sup) {
      rep.passed = false;
      if (rep.counterexample.empty())
        rep.counterexample = "class at " + coh::divisor_name(s, y) +
                             " is not a fixed class at its own level";
      continue;
    }
    for (std::size_t x = 0; x < s.prime_count(); ++x) {
      if (!(y & (1u << x))) continue;
      std::uint32_t below = y & ~(1u << x);
      std::vector<Residue> got = vardelta_characterized(s, uy, at(below), x, cy.rep);
      bool okx = got == f.at(below).rep;
      rep.shifts.push_back({y, x, okx});
      if (!okx) {
        rep.passed = false;
        if (rep.counterexample.empty())
          rep.counterexample = "shift at " + s.prime(x).id + " of the class at " +
                               coh::divisor_name(s, y) + " gives " +
                               detail::vec_name(got) + ", expected " +
                               detail::vec_name(f.at(below).rep);
      }
    }
  }
  return rep;
}

struct BasisReport {
  std::vector<std::uint32_t> ys;
  std::vector<std::vector<TCoeff>> change;
  bool normalized = false;
  bool unitriangular = true;
  bool invertible = false;
  std::string detail;
  bool ok() const { return normalized && unitriangular && invertible; }
};

// Change of basis from the canonical classes to the family, after including
// every family member into the ambient level.  Certified by unitriangularity
// in divisibility order and invertibility of the flattened matrix over the
// residue coefficient ring.
inline BasisReport verify_basis_theorem(const Site& s, const UPresentation& u,
                                        const CanonicalBasis& basis,
                                        const RecursiveFamily& f) {
  if (!(basis.ambient == u.ambient()) || !(f.ambient == u.ambient()))
    throw ScenarioError("basis check requires one common ambient level");
  if (f.ys != basis.ys) throw ScenarioError("family and basis index different divisors");

  BasisReport rep;
  rep.ys = f.ys;
  const std::size_t hs = s.h().size();
  for (std::size_t i = 0; i < f.ys.size(); ++i) {
    UPresentation small(s, s.stalk_of(f.ys[i], f.ambient));
    if (f.classes[i].rep.size() != small.rank_z())
      throw ScenarioError("family class at " + coh::divisor_name(s, f.ys[i]) +
                          " is at the wrong level");
    CohomologyClass up = coh::include_class(s, small, u, f.classes[i]);
    if (f.ys[i] == 0) rep.normalized = up.rep == basis.class_at(0).rep;
    rep.change.push_back(coh::class_coordinates(s, u, up, basis));
  }

  TCoeff one = site::t_one(s.h());
  for (std::size_t i = 0; i < rep.change.size(); ++i)
    for (std::size_t j = 0; j < rep.change[i].size(); ++j) {
      if (i == j) {
        if (rep.change[i][j] == one) continue;
        rep.unitriangular = false;
        if (rep.detail.empty())
          rep.detail = "diagonal entry at " + coh::divisor_name(s, f.ys[i]) + " is not 1";
      } else if ((basis.ys[j] & ~f.ys[i]) != 0 && !site::t_is_zero(rep.change[i][j])) {
        rep.unitriangular = false;
        if (rep.detail.empty())
          rep.detail = "entry at (" + coh::divisor_name(s, f.ys[i]) + ", " +
                       coh::divisor_name(s, basis.ys[j]) + ") breaks triangularity";
      }
    }

  // Flattened change of basis: each coefficient becomes its multiplication
  // matrix on T/MT, and invertibility over Z/M certifies invertibility over
  // the coefficient ring.
  const std::size_t nb = rep.change.size();
  ResMatrix flat(s.modulus(), nb * hs, nb * hs);
  const Mod ring(s.modulus());
  for (std::size_t i = 0; i < nb; ++i)
    for (std::size_t j = 0; j < nb; ++j)
      for (std::size_t col = 0; col < hs; ++col) {
        TCoeff e = site::t_zero(s.h());
        e[col] = 1;
        TCoeff prod = site::t_mul(s.h(), rep.change[i][j], e);
        for (std::size_t row = 0; row < hs; ++row)
          flat.set_int(j * hs + row, i * hs + col, prod[row]);
      }
  ResMatrix ker = exactlin::kernel_mod(flat);
  rep.invertible = ker.rows() == 0;
  if (!rep.invertible) {
    if (!rep.detail.empty()) rep.detail += "; ";
    rep.detail += "kernel vector " + detail::vec_name(ker.row(0));
  }
  return rep;
}

}  // namespace undlab::rec
