#pragma once

// The universal norm distribution over a fixed ambient level z: the free
// module on stalk symbols, the relation submodule generated by the lambda
// maps, the quotient U_z with a certified free basis, the submodule I_x,
// the endomorphism gamma, and the exactness checks tying them together.

#include <undlab/exactlin.hpp>
#include <undlab/site.hpp>

#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace undlab::dist {

using exactlin::IntMatrix;
using exactlin::ResMatrix;
using site::GroupElement;
using site::GroupRingElem;
using site::Level;
using site::ScenarioError;
using site::Site;
using site::TCoeff;

// One basis symbol of A_z: a stalk together with an element of its group.
struct StalkSymbol {
  Level zp;
  GroupElement g;
  bool operator==(const StalkSymbol&) const = default;
  auto operator<=>(const StalkSymbol&) const = default;
};

// Finitely supported T-combination of stalk symbols.
class AVector {
 public:
  AVector() = default;

  static AVector unit(StalkSymbol s, TCoeff c) {
    AVector v;
    v.add(std::move(s), std::move(c));
    return v;
  }

  void add(StalkSymbol s, TCoeff c) {
    auto it = terms_.find(s);
    if (it == terms_.end()) {
      if (!site::t_is_zero(c)) terms_.emplace(std::move(s), std::move(c));
      return;
    }
    it->second = site::t_add(it->second, c);
    if (site::t_is_zero(it->second)) terms_.erase(it);
  }

  const std::map<StalkSymbol, TCoeff>& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  bool operator==(const AVector&) const = default;

 private:
  std::map<StalkSymbol, TCoeff> terms_;
};

inline AVector av_add(const AVector& a, const AVector& b) {
  AVector c = a;
  for (const auto& [s, t] : b.terms()) c.add(s, t);
  return c;
}

inline AVector av_neg(const AVector& a) {
  AVector c;
  for (const auto& [s, t] : a.terms()) c.add(s, site::t_neg(t));
  return c;
}

inline AVector av_sub(const AVector& a, const AVector& b) { return av_add(a, av_neg(b)); }

inline AVector av_scale(const AVector& a, const Int& k) {
  AVector c;
  for (const auto& [s, t] : a.terms()) c.add(s, site::t_scale(t, k));
  return c;
}

// Multiplication by a T-coefficient (the H-module structure).
inline AVector av_mul_t(const site::AbelianGroup& h, const AVector& a, const TCoeff& t) {
  AVector c;
  for (const auto& [s, coeff] : a.terms()) c.add(s, site::t_mul(h, t, coeff));
  return c;
}

// Action of a group-ring element: each group term acts on a symbol through
// restriction to the symbol's stalk, coefficients multiply in T.
inline AVector av_act(const Site& s, const GroupRingElem& rho, const AVector& v) {
  AVector out;
  for (const auto& [gr, tr] : rho.terms()) {
    for (const auto& [sym, c] : v.terms()) {
      GroupElement moved =
          s.ge_mul(s.ge_restrict(gr, s.support_mask(sym.zp)), sym.g);
      out.add(StalkSymbol{sym.zp, std::move(moved)}, site::t_mul(s.h(), tr, c));
    }
  }
  return out;
}

inline AVector av_act_elem(const Site& s, const GroupElement& g, const AVector& v) {
  return av_act(s, s.gr_of(g, site::t_one(s.h())), v);
}

// Deterministic basis of A_z: stalks in (support size, mask) order, group
// elements in lexicographic order within each stalk.
class SymbolBasis {
 public:
  SymbolBasis(const Site& s, Level ambient) : site_(&s), ambient_(std::move(ambient)) {
    for (const auto& zp : s.stalks(ambient_)) {
      for (auto& g : s.group_elements(s.support_mask(zp))) {
        index_.emplace(StalkSymbol{zp, g}, symbols_.size());
        symbols_.push_back(StalkSymbol{zp, std::move(g)});
      }
    }
  }

  const Level& ambient() const { return ambient_; }
  std::size_t size() const { return symbols_.size(); }
  std::size_t dim() const { return symbols_.size() * site_->h().size(); }
  const StalkSymbol& symbol(std::size_t i) const { return symbols_.at(i); }

  std::size_t index_of(const StalkSymbol& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) throw ScenarioError("symbol outside the ambient level");
    return it->second;
  }

  // Z-coordinates: symbol-major, H-coordinate minor.
  std::vector<Int> dense(const AVector& v) const {
    std::vector<Int> out(dim(), Int(0));
    const std::size_t hs = site_->h().size();
    for (const auto& [sym, c] : v.terms()) {
      std::size_t base = index_of(sym) * hs;
      for (std::size_t k = 0; k < hs; ++k) out[base + k] = c[k];
    }
    return out;
  }

  AVector sparse(const std::vector<Int>& coords) const {
    if (coords.size() != dim()) throw ScenarioError("coordinate length mismatch");
    AVector v;
    const std::size_t hs = site_->h().size();
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      TCoeff c(coords.begin() + static_cast<std::ptrdiff_t>(i * hs),
               coords.begin() + static_cast<std::ptrdiff_t>((i + 1) * hs));
      v.add(symbols_[i], std::move(c));
    }
    return v;
  }

 private:
  const Site* site_;
  Level ambient_;
  std::vector<StalkSymbol> symbols_;
  std::map<StalkSymbol, std::size_t> index_;
};

// lambda at x on one symbol avoiding x: p(x;Fr^{-1}) [g z'] - N [g z'z(x)].
inline AVector lambda_symbol(const Site& s, std::size_t x, const StalkSymbol& sym) {
  if (sym.zp.v[x] != 0) throw ScenarioError("lambda input symbol must avoid the prime");
  AVector head = av_act(s, s.p_at_frob(x), AVector::unit(sym, site::t_one(s.h())));
  StalkSymbol raised = sym;
  raised.zp.v[x] = s.prime(x).level;
  AVector tail = av_act(s, s.norm_element(x), AVector::unit(raised, site::t_one(s.h())));
  return av_sub(head, tail);
}

inline AVector lambda_map(const Site& s, std::size_t x, const AVector& v) {
  AVector out;
  for (const auto& [sym, c] : v.terms())
    out = av_add(out, av_mul_t(s.h(), lambda_symbol(s, x, sym), c));
  return out;
}

// beta at x: divides the stalk by z(x) and multiplies by r_x(Fr^{-1});
// symbols away from x pass through unchanged.  This is the unique extension
// under which beta composed with lambda at x is multiplication by gamma.
inline AVector beta_map(const Site& s, std::size_t x, const AVector& v) {
  AVector out;
  for (const auto& [sym, c] : v.terms()) {
    if (sym.zp.v[x] == 0) {
      out.add(sym, c);
      continue;
    }
    StalkSymbol lowered = sym;
    lowered.zp.v[x] = 0;
    lowered.g = s.ge_restrict(lowered.g, s.support_mask(lowered.zp));
    out = av_add(out, av_act(s, s.r_at_frob(x), AVector::unit(std::move(lowered), c)));
  }
  return out;
}

// U_z = A_z / D_z with a certified free Z-basis.  Coordinates of the free
// basis come from the Smith right transform of the relation matrix: the
// trailing columns past the relation rank index a basis of the quotient.
class UPresentation {
 public:
  UPresentation(const Site& s, Level ambient)
      : site_(&s), basis_(s, std::move(ambient)) {
    std::vector<std::vector<Int>> rows = relation_rows();
    IntMatrix rel(rows.size(), basis_.dim());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < rows[i].size(); ++j) rel.set(i, j, rows[i][j]);

    exactlin::SNFResult snf = exactlin::smith_normal_form(rel);
    rel_rank_ = snf.rank();
    for (std::size_t i = 0; i < rel_rank_; ++i)
      if (snf.diag[i] != 1)
        throw ScenarioError("freeness certification failed: relation lattice is not primitive");
    right_ = std::move(snf.right);
    right_inv_ = std::move(snf.right_inv);
    hermite_rel_ = exactlin::hermite_form(rel);

    if (s.h().size() > 1 && rank_z() % s.h().size() != 0)
      throw ScenarioError("freeness certification failed: rank not a multiple of |H|");
  }

  const Site& site() const { return *site_; }
  const SymbolBasis& basis() const { return basis_; }
  const Level& ambient() const { return basis_.ambient(); }
  std::size_t rank_z() const { return basis_.dim() - rel_rank_; }
  std::size_t rank_t() const { return rank_z() / site_->h().size(); }

  // Free coordinates of the class of v.
  std::vector<Int> reduce_dense(const std::vector<Int>& v) const {
    std::vector<Int> c = exactlin::apply_transpose(right_, v);
    return std::vector<Int>(c.begin() + static_cast<std::ptrdiff_t>(rel_rank_), c.end());
  }

  std::vector<Int> reduce(const AVector& v) const { return reduce_dense(basis_.dense(v)); }

  // A representative of the class with the given free coordinates.
  AVector lift(const std::vector<Int>& u) const {
    if (u.size() != rank_z()) throw ScenarioError("coordinate length mismatch");
    std::vector<Int> c(basis_.dim(), Int(0));
    std::copy(u.begin(), u.end(), c.begin() + static_cast<std::ptrdiff_t>(rel_rank_));
    return basis_.sparse(exactlin::apply_transpose(right_inv_, c));
  }

  bool in_relations(const AVector& v) const {
    return exactlin::lattice_contains(hermite_rel_, basis_.dense(v));
  }

 private:
  // D_z rows: lambda applied to every symbol of A_{z/z(x)} for every x | z,
  // closed under the G_z-action and multiplication by H.
  std::vector<std::vector<Int>> relation_rows() const {
    const Site& s = *site_;
    std::vector<std::vector<Int>> rows;
    std::uint32_t support = s.support_mask(ambient());
    auto translations = s.group_elements(support);
    for (std::size_t x = 0; x < s.prime_count(); ++x) {
      if (!(support & (1u << x))) continue;
      Level below = ambient();
      below.v[x] = 0;
      SymbolBasis sub(s, below);
      for (std::size_t i = 0; i < sub.size(); ++i) {
        AVector image = lambda_symbol(s, x, sub.symbol(i));
        for (const auto& g : translations) {
          AVector moved = av_act_elem(s, g, image);
          for (std::size_t hk = 0; hk < s.h().size(); ++hk) {
            TCoeff t = site::t_zero(s.h());
            t[hk] = 1;
            rows.push_back(basis_.dense(av_mul_t(s.h(), moved, t)));
          }
        }
      }
    }
    return rows;
  }

  const Site* site_;
  SymbolBasis basis_;
  std::size_t rel_rank_ = 0;
  IntMatrix right_;
  IntMatrix right_inv_;
  exactlin::HermiteResult hermite_rel_;
};

// Matrix of U_{z1} -> U_{z2} induced by inclusion of stalk symbols, in the
// certified free coordinates.
inline IntMatrix include_U(const UPresentation& u1, const UPresentation& u2) {
  const Site& s = u1.site();
  if (!s.is_stalk_of(u1.ambient(), u2.ambient()))
    throw ScenarioError("inclusion requires a stalk pair");
  IntMatrix m(u2.rank_z(), u1.rank_z());
  for (std::size_t j = 0; j < u1.rank_z(); ++j) {
    std::vector<Int> e(u1.rank_z(), Int(0));
    e[j] = 1;
    std::vector<Int> col = u2.reduce(u1.lift(e));
    for (std::size_t i = 0; i < col.size(); ++i) m.set(i, j, col[i]);
  }
  return m;
}

// Matrix of any group-ring multiplier rho on the free basis of U.
inline IntMatrix action_matrix(const UPresentation& u, const GroupRingElem& rho) {
  IntMatrix m(u.rank_z(), u.rank_z());
  for (std::size_t j = 0; j < u.rank_z(); ++j) {
    std::vector<Int> e(u.rank_z(), Int(0));
    e[j] = 1;
    std::vector<Int> col = u.reduce(av_act(u.site(), rho, u.lift(e)));
    for (std::size_t i = 0; i < col.size(); ++i) m.set(i, j, col[i]);
  }
  return m;
}

// Multiplication by gamma at x on U_{z/z(x)}; a nontrivial kernel violates
// the third Kolyvagin condition and rejects the scenario.
inline IntMatrix gamma_endo(const Site& s, std::size_t x, const UPresentation& u_below) {
  if (u_below.ambient().v[x] != 0)
    throw ScenarioError("gamma acts below its own prime");
  IntMatrix m = action_matrix(u_below, s.gamma(x));
  if (exactlin::rank_q(m) != u_below.rank_z())
    throw ScenarioError("Kolyvagin condition 3 violated at prime '" + s.prime(x).id +
                        "': gamma has a nontrivial kernel");
  return m;
}

// I_x inside U_z, presented by the span of its generators in the free
// coordinates, with membership forms over Z and over Z/M.
struct IxSubmodule {
  std::size_t x = 0;
  std::vector<AVector> generators;        // the defining family, before closure
  std::vector<std::vector<Int>> rows;     // T[G]-closure in free U coordinates
  exactlin::HermiteResult hermite;        // membership over Z
  ResMatrix howell;                       // membership modulo M

  bool contains_z(const std::vector<Int>& u) const {
    return exactlin::lattice_contains(hermite, u);
  }

  bool contains_mod(const std::vector<Int>& u, const Mod& ring) const {
    std::vector<Residue> r(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) r[i] = ring.reduce(u[i]);
    return exactlin::span_contains(howell, r);
  }
};

inline IxSubmodule build_Ix(const Site& s, std::size_t x, const UPresentation& u) {
  const Level& z = u.ambient();
  if (z.v[x] == 0) throw ScenarioError("I_x requires the prime to divide the level");

  IxSubmodule ix;
  ix.x = x;
  for (const auto& zp : s.stalks(z)) {
    if (zp.v[x] != 0) continue;
    StalkSymbol low{zp, s.ge_identity()};
    StalkSymbol high = low;
    high.zp.v[x] = s.prime(x).level;
    AVector unit_high = AVector::unit(high, site::t_one(s.h()));
    for (std::uint32_t k = 0; k < s.prime(x).order; ++k) {
      AVector shifted = av_act_elem(s, s.ge_pow(s.sigma(x), k), unit_high);
      ix.generators.push_back(av_sub(unit_high, shifted));
      ix.generators.push_back(av_sub(
          av_act(s, s.r_at_frob(x), AVector::unit(low, site::t_one(s.h()))), shifted));
    }
  }

  auto translations = s.group_elements(s.support_mask(z));
  for (const auto& gen : ix.generators) {
    for (const auto& g : translations) {
      AVector moved = av_act_elem(s, g, gen);
      for (std::size_t hk = 0; hk < s.h().size(); ++hk) {
        TCoeff t = site::t_zero(s.h());
        t[hk] = 1;
        ix.rows.push_back(u.reduce(av_mul_t(s.h(), moved, t)));
      }
    }
  }

  IntMatrix zrows(ix.rows.size(), u.rank_z());
  ResMatrix mrows(s.modulus(), ix.rows.size(), u.rank_z());
  for (std::size_t i = 0; i < ix.rows.size(); ++i)
    for (std::size_t j = 0; j < u.rank_z(); ++j) {
      zrows.set(i, j, ix.rows[i][j]);
      mrows.set_int(i, j, ix.rows[i][j]);
    }
  ix.hermite = exactlin::hermite_form(zrows);
  ix.howell = exactlin::howell_span(mrows);

  // (sigma_{z(x)} - 1) U is contained in I_x; verified on the free basis.
  for (std::size_t j = 0; j < u.rank_z(); ++j) {
    std::vector<Int> e(u.rank_z(), Int(0));
    e[j] = 1;
    AVector v = u.lift(e);
    AVector smv = av_sub(av_act_elem(s, s.sigma(x), v), v);
    if (!ix.contains_z(u.reduce(smv)))
      throw ScenarioError("I_x construction broken: (sigma - 1)U not contained");
  }
  return ix;
}

// Exactness of 0 -> U_{z/z(x)} --gamma--> U_{z/z(x)} -> U_z / I_x -> 0.
struct ExactReport {
  bool gamma_injective = false;
  bool image_in_kernel = false;
  bool kernel_in_image = false;
  bool surjective = false;
  std::string detail;

  bool ok() const {
    return gamma_injective && image_in_kernel && kernel_in_image && surjective;
  }
};

inline ExactReport check_exact(const Site& s, std::size_t x, const Level& z) {
  ExactReport rep;
  if (z.v[x] == 0) throw ScenarioError("exactness requires the prime to divide the level");

  UPresentation uz(s, z);
  Level below = z;
  below.v[x] = 0;
  UPresentation uw(s, below);
  IxSubmodule ix = build_Ix(s, x, uz);
  IntMatrix incl = include_U(uw, uz);

  IntMatrix gamma_m;
  try {
    gamma_m = gamma_endo(s, x, uw);
    rep.gamma_injective = true;
  } catch (const ScenarioError& e) {
    rep.detail = e.what();
    return rep;
  }

  // Image of gamma lands in I_x.
  IntMatrix incl_gamma = incl * gamma_m;
  rep.image_in_kernel = true;
  for (std::size_t j = 0; j < uw.rank_z() && rep.image_in_kernel; ++j) {
    std::vector<Int> col(uz.rank_z(), Int(0));
    for (std::size_t i = 0; i < uz.rank_z(); ++i) col[i] = incl_gamma.get(i, j);
    if (!ix.contains_z(col)) {
      rep.image_in_kernel = false;
      rep.detail = "gamma image escapes I_x at basis column " + std::to_string(j);
    }
  }

  // Everything mapping into I_x comes from gamma: solve incl v = I_x row
  // combination, project kernel vectors to the v-part, test against the
  // column lattice of gamma.
  const std::size_t nv = uw.rank_z(), ng = ix.rows.size();
  IntMatrix stacked(uz.rank_z(), nv + ng);
  for (const auto& [rc, val] : incl.entries()) stacked.set(rc.first, rc.second, val);
  for (std::size_t g = 0; g < ng; ++g)
    for (std::size_t i = 0; i < uz.rank_z(); ++i)
      stacked.set(i, nv + g, -ix.rows[g][i]);

  IntMatrix gamma_cols(nv, nv);
  for (const auto& [rc, val] : gamma_m.entries()) gamma_cols.set(rc.second, rc.first, val);
  exactlin::HermiteResult gamma_lattice = exactlin::hermite_form(gamma_cols);

  rep.kernel_in_image = true;
  for (const auto& k : exactlin::kernel_integer(stacked)) {
    std::vector<Int> v(k.begin(), k.begin() + static_cast<std::ptrdiff_t>(nv));
    if (!exactlin::lattice_contains(gamma_lattice, v)) {
      rep.kernel_in_image = false;
      rep.detail = "kernel of U -> U/I_x exceeds the gamma image";
      break;
    }
  }

  // U_{z/z(x)} covers U_z / I_x: inclusion columns and I_x rows span Z^rank.
  IntMatrix cover(nv + ng, uz.rank_z());
  for (const auto& [rc, val] : incl.entries()) cover.set(rc.second, rc.first, val);
  for (std::size_t g = 0; g < ng; ++g)
    for (std::size_t i = 0; i < uz.rank_z(); ++i) cover.set(nv + g, i, ix.rows[g][i]);
  exactlin::HermiteResult cover_h = exactlin::hermite_form(cover);
  rep.surjective = cover_h.pivots.size() == uz.rank_z();
  for (const auto& [r, c] : cover_h.pivots)
    if (cover_h.h.get(r, c) != 1) rep.surjective = false;
  if (!rep.surjective && rep.detail.empty())
    rep.detail = "inclusion and I_x do not cover U_z";

  return rep;
}

}  // namespace undlab::dist
