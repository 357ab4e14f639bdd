#pragma once

// Finite verification models for the derived recursion.  A MockModel fixes a
// finite abelian acting group Gamma, images in Gamma for the layer generators
// and the distinguished Frobenius lifts, a torsion coefficient module W sitting
// as the leading block of a larger module WB, and a table assigning one WB
// value to every stalk symbol, translations included.  The table is a lift,
// not a Gamma map: moving a symbol and moving its value may differ, and the
// difference is where connecting values live.  Connecting values apply an
// evaluation element to the averaged lifted value and subtract; the quotient
// polynomial is the exact divisor of p(x;t) - p(x;1) by t - 1; the derived
// recursion matches the quotient polynomial applied one level down at the
// Frobenius image against the layer generator image applied at the level
// itself.

#include <undlab/cohomology.hpp>
#include <undlab/distribution.hpp>
#include <undlab/exactlin.hpp>
#include <undlab/ints.hpp>
#include <undlab/recursion.hpp>
#include <undlab/scenario_io.hpp>
#include <undlab/site.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace undlab::em {

using coh::CohomologyClass;
using dist::AVector;
using dist::StalkSymbol;
using dist::UPresentation;
using exactlin::ResMatrix;
using site::GroupElement;
using site::Level;
using site::ScenarioError;
using site::Site;
using site::TCoeff;

// Element of Gamma as one exponent per cyclic factor, reduced mod the factor
// order.
using GammaElem = std::vector<std::uint32_t>;

// Finite stand-in for the modules the derived recursion evaluates in.  The
// coefficient module W is the leading w_rank coordinates of the lifted module
// WB; every factor action preserves that block and restricts there to the
// configured coefficient action.  The lifted value table holds one WB vector
// per stalk symbol of the full level, translated symbols included; translating
// a symbol and acting on its value may disagree, and validation only demands
// that the disagreement stays inside W.
struct MockModel {
  std::vector<std::uint32_t> gamma_orders;
  std::vector<GammaElem> sigma_images;      // one per prime
  std::vector<GammaElem> frobenius_images;  // one per prime
  std::vector<GammaElem> h_images;          // one per coefficient group factor
  GammaElem averaging;                      // applied before every evaluation
  std::size_t w_rank = 0;
  std::size_t wbig_rank = 0;
  std::vector<ResMatrix> w_action;     // one per Gamma factor, w_rank square
  std::vector<ResMatrix> wbig_action;  // one per Gamma factor, wbig_rank square
  std::map<std::string, std::vector<Residue>> dhat;
  std::vector<std::vector<Residue>> local_generators;  // W coordinates
};

inline GammaElem gamma_identity(const MockModel& m) {
  return GammaElem(m.gamma_orders.size(), 0);
}

inline GammaElem gamma_reduce(const MockModel& m, GammaElem e) {
  for (std::size_t i = 0; i < e.size(); ++i) e[i] %= m.gamma_orders[i];
  return e;
}

inline GammaElem gamma_mul(const MockModel& m, const GammaElem& a, const GammaElem& b) {
  GammaElem c(a);
  for (std::size_t i = 0; i < c.size(); ++i)
    c[i] = (c[i] + b[i]) % m.gamma_orders[i];
  return c;
}

inline GammaElem gamma_inv(const MockModel& m, const GammaElem& a) {
  GammaElem c(a);
  for (std::size_t i = 0; i < c.size(); ++i)
    c[i] = c[i] == 0 ? 0 : m.gamma_orders[i] - c[i];
  return c;
}

inline GammaElem gamma_pow(const MockModel& m, const GammaElem& a, long long k) {
  GammaElem c(a.size(), 0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    long long v = (static_cast<long long>(a[i]) * k) % m.gamma_orders[i];
    if (v < 0) v += m.gamma_orders[i];
    c[i] = static_cast<std::uint32_t>(v);
  }
  return c;
}

inline bool gamma_is_identity(const GammaElem& a) {
  return std::all_of(a.begin(), a.end(), [](std::uint32_t v) { return v == 0; });
}

// Name of a stalk level: prime ids joined by '*' in site order, exponents
// written with '^', the trivial stalk written as "1".
inline std::string stalk_key(const Site& s, const Level& zp) {
  std::string out;
  for (std::size_t x = 0; x < s.prime_count(); ++x) {
    if (zp.v[x] == 0) continue;
    if (!out.empty()) out += "*";
    out += s.prime(x).id;
    if (zp.v[x] > 1) out += "^" + std::to_string(zp.v[x]);
  }
  return out.empty() ? "1" : out;
}

// Name of a stalk symbol: the stalk name, then '@' and the translation's
// exponents at the stalk's supported primes joined by ','.  Symbols over the
// trivial stalk carry no translation part.
inline std::string symbol_key(const Site& s, const StalkSymbol& sym) {
  std::string out = stalk_key(s, sym.zp);
  std::string exps;
  for (std::size_t x = 0; x < s.prime_count(); ++x) {
    if (sym.zp.v[x] == 0) continue;
    if (!exps.empty()) exps += ",";
    exps += std::to_string(sym.g.e[x]);
  }
  if (!exps.empty()) out += "@" + exps;
  return out;
}

// Image in Gamma of a layer group element: the product of the per-prime
// generator images raised to the element's exponents.
inline GammaElem rho_of(const Site& s, const MockModel& m, const GroupElement& g) {
  GammaElem out = gamma_identity(m);
  for (std::size_t x = 0; x < s.prime_count(); ++x)
    out = gamma_mul(m, out, gamma_pow(m, m.sigma_images[x], g.e[x]));
  return out;
}

// Image in Gamma of the coefficient group element with the given dense index.
inline GammaElem rho_of_hslot(const Site& s, const MockModel& m, std::size_t slot) {
  GammaElem out = gamma_identity(m);
  auto exps = s.h().exps(slot);
  for (std::size_t i = 0; i < exps.size(); ++i)
    out = gamma_mul(m, out, gamma_pow(m, m.h_images[i], exps[i]));
  return out;
}

namespace detail {

inline std::vector<Residue> vec_zero(std::size_t n) { return std::vector<Residue>(n, 0); }

inline bool vec_is_zero(const std::vector<Residue>& v) {
  return std::all_of(v.begin(), v.end(), [](Residue r) { return r == 0; });
}

inline std::vector<Residue> vec_add(const Mod& ring, const std::vector<Residue>& a,
                                    const std::vector<Residue>& b) {
  std::vector<Residue> c(a);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = ring.add(c[i], b[i]);
  return c;
}

inline std::vector<Residue> vec_sub(const Mod& ring, const std::vector<Residue>& a,
                                    const std::vector<Residue>& b) {
  std::vector<Residue> c(a);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = ring.sub(c[i], b[i]);
  return c;
}

inline std::vector<Residue> vec_scale(const Mod& ring, Residue k,
                                      const std::vector<Residue>& a) {
  std::vector<Residue> c(a);
  for (auto& v : c) v = ring.mul(k, v);
  return c;
}

inline std::string vec_str(const std::vector<Residue>& v) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  os << ")";
  return os.str();
}

inline ResMatrix mat_identity(const Mod& ring, std::size_t n) {
  ResMatrix out(ring.modulus(), n, n);
  for (std::size_t i = 0; i < n; ++i) out.set(i, i, 1);
  return out;
}

inline ResMatrix mat_mul(const ResMatrix& a, const ResMatrix& b) {
  const Mod& ring = a.ring();
  ResMatrix out(ring.modulus(), a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      Residue aik = a(i, k);
      if (aik == 0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j)
        out.set(i, j, ring.add(out(i, j), ring.mul(aik, b(k, j))));
    }
  return out;
}

inline ResMatrix mat_add(const ResMatrix& a, const ResMatrix& b) {
  const Mod& ring = a.ring();
  ResMatrix out(ring.modulus(), a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      out.set(i, j, ring.add(a(i, j), b(i, j)));
  return out;
}

inline ResMatrix mat_sub(const ResMatrix& a, const ResMatrix& b) {
  const Mod& ring = a.ring();
  ResMatrix out(ring.modulus(), a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      out.set(i, j, ring.sub(a(i, j), b(i, j)));
  return out;
}

inline ResMatrix mat_scale(const ResMatrix& a, Residue k) {
  const Mod& ring = a.ring();
  ResMatrix out(ring.modulus(), a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.set(i, j, ring.mul(k, a(i, j)));
  return out;
}

inline ResMatrix mat_pow(const ResMatrix& a, std::uint64_t k) {
  ResMatrix out = mat_identity(a.ring(), a.rows());
  for (std::uint64_t i = 0; i < k; ++i) out = mat_mul(out, a);
  return out;
}

inline bool mat_is_zero(const ResMatrix& a) {
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (a(i, j) != 0) return false;
  return true;
}

inline std::vector<Residue> mat_vec(const ResMatrix& a, const std::vector<Residue>& v) {
  const Mod& ring = a.ring();
  std::vector<Residue> out(a.rows(), 0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    Residue acc = 0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc = ring.add(acc, ring.mul(a(i, j), v[j]));
    out[i] = acc;
  }
  return out;
}

// Applies the action of a Gamma element to a vector through the given factor
// generator matrices, one repeated factor at a time.
inline std::vector<Residue> apply_elem(const MockModel& m, const std::vector<ResMatrix>& gens,
                                       const GammaElem& e, std::vector<Residue> v) {
  for (std::size_t i = 0; i < gens.size(); ++i)
    for (std::uint32_t k = 0; k < e[i]; ++k) v = mat_vec(gens[i], v);
  return v;
}

inline ResMatrix matrix_of_elem(const Mod& ring, const MockModel& m,
                                const std::vector<ResMatrix>& gens, const GammaElem& e) {
  ResMatrix out = mat_identity(ring, gens.empty() ? 0 : gens[0].rows());
  for (std::size_t i = 0; i < gens.size(); ++i)
    for (std::uint32_t k = 0; k < e[i]; ++k) out = mat_mul(gens[i], out);
  return out;
}

// Applies a polynomial with coefficients in the coefficient group ring,
// evaluated at the given Gamma element, to a vector.
inline std::vector<Residue> poly_apply(const Site& s, const MockModel& m,
                                       const std::vector<ResMatrix>& gens,
                                       const std::vector<TCoeff>& coeffs,
                                       const GammaElem& base, const std::vector<Residue>& v) {
  const Mod& ring = s.ring();
  std::vector<Residue> out(v.size(), 0);
  std::vector<Residue> cur(v);
  for (std::size_t k = 0; k < coeffs.size(); ++k) {
    for (std::size_t j = 0; j < coeffs[k].size(); ++j) {
      Residue cj = ring.reduce(coeffs[k][j]);
      if (cj == 0) continue;
      auto term = apply_elem(m, gens, rho_of_hslot(s, m, j), cur);
      out = vec_add(ring, out, vec_scale(ring, cj, term));
    }
    if (k + 1 < coeffs.size()) cur = apply_elem(m, gens, base, cur);
  }
  return out;
}

// Matrix of the same polynomial action, used where the operator itself is
// inspected or reused across many vectors.
inline ResMatrix poly_matrix(const Site& s, const MockModel& m,
                             const std::vector<ResMatrix>& gens,
                             const std::vector<TCoeff>& coeffs, const GammaElem& base) {
  const Mod& ring = s.ring();
  std::size_t n = gens.empty() ? 0 : gens[0].rows();
  ResMatrix out(ring.modulus(), n, n);
  ResMatrix cur = mat_identity(ring, n);
  ResMatrix basemat = matrix_of_elem(ring, m, gens, base);
  for (std::size_t k = 0; k < coeffs.size(); ++k) {
    for (std::size_t j = 0; j < coeffs[k].size(); ++j) {
      Residue cj = ring.reduce(coeffs[k][j]);
      if (cj == 0) continue;
      ResMatrix term = mat_mul(matrix_of_elem(ring, m, gens, rho_of_hslot(s, m, j)), cur);
      out = mat_add(out, mat_scale(term, cj));
    }
    if (k + 1 < coeffs.size()) cur = mat_mul(basemat, cur);
  }
  return out;
}

}  // namespace detail

inline ResMatrix w_matrix(const Site& s, const MockModel& m, const GammaElem& e) {
  return detail::matrix_of_elem(s.ring(), m, m.w_action, e);
}

inline ResMatrix wbig_matrix(const Site& s, const MockModel& m, const GammaElem& e) {
  return detail::matrix_of_elem(s.ring(), m, m.wbig_action, e);
}

// Lifted value of a symbol combination: each stalk symbol contributes its own
// table entry, translation and all, and coefficients act on the value through
// the images of the coefficient group.
inline std::vector<Residue> dhat_value(const Site& s, const MockModel& m, const AVector& v) {
  const Mod& ring = s.ring();
  std::vector<Residue> out(m.wbig_rank, 0);
  for (const auto& [sym, t] : v.terms()) {
    auto it = m.dhat.find(symbol_key(s, sym));
    if (it == m.dhat.end())
      throw ScenarioError("model: lift table has no entry for symbol '" +
                          symbol_key(s, sym) + "'");
    for (std::size_t j = 0; j < t.size(); ++j) {
      Residue cj = ring.reduce(t[j]);
      if (cj == 0) continue;
      auto term = detail::apply_elem(m, m.wbig_action, rho_of_hslot(s, m, j), it->second);
      out = detail::vec_add(ring, out, detail::vec_scale(ring, cj, term));
    }
  }
  return out;
}

// Connecting value of a symbol combination at an evaluation element, in the
// coordinates of the lifted module: the evaluation moves the averaged lifted
// value and the difference against the unmoved value is taken.
inline std::vector<Residue> kappa_raw(const Site& s, const MockModel& m, const AVector& v,
                                      const GammaElem& gamma) {
  const Mod& ring = s.ring();
  auto base = dhat_value(s, m, v);
  if (!gamma_is_identity(m.averaging))
    base = detail::apply_elem(m, m.wbig_action, m.averaging, base);
  auto moved = detail::apply_elem(m, m.wbig_action, gamma_reduce(m, gamma), base);
  return detail::vec_sub(ring, moved, base);
}

// Connecting value of a cohomology class at an evaluation element, in the
// coordinates of the coefficient module.  The class is lifted through its
// presentation; a value with a nonzero coordinate outside the coefficient
// block is an error.
inline std::vector<Residue> kappa(const Site& s, const UPresentation& u, const MockModel& m,
                                  const CohomologyClass& c, const GammaElem& gamma) {
  if (c.ambient != u.ambient())
    throw ScenarioError("model: class and presentation live at different levels");
  if (c.modulus != s.modulus())
    throw ScenarioError("model: class modulus does not match the scenario");
  auto value = kappa_raw(s, m, u.lift(coh::ints_of(c.rep)), gamma);
  for (std::size_t i = m.w_rank; i < value.size(); ++i)
    if (value[i] != 0)
      throw ScenarioError("model: connecting value " + detail::vec_str(value) +
                          " escapes the coefficient submodule");
  value.resize(m.w_rank);
  return value;
}

// Connecting values of one class at every designated evaluation element: the
// layer generator image and the Frobenius image of each prime.
struct KappaClass {
  std::vector<std::string> labels;
  std::vector<GammaElem> points;
  std::vector<std::vector<Residue>> values;  // W coordinates
};

inline KappaClass kappa_class(const Site& s, const UPresentation& u, const MockModel& m,
                              const CohomologyClass& c) {
  KappaClass out;
  for (std::size_t x = 0; x < s.prime_count(); ++x) {
    out.labels.push_back("sigma at '" + s.prime(x).id + "'");
    out.points.push_back(m.sigma_images[x]);
    out.values.push_back(kappa(s, u, m, c, m.sigma_images[x]));
    out.labels.push_back("frobenius at '" + s.prime(x).id + "'");
    out.points.push_back(m.frobenius_images[x]);
    out.values.push_back(kappa(s, u, m, c, m.frobenius_images[x]));
  }
  return out;
}

// Quotient of p(x;t) - p(x;1) by t - 1, computed by exact division over the
// coefficient ring.  The division never leaves a remainder because the
// difference vanishes at t = 1; a nonzero remainder falls back to the same
// recurrence with coefficients reduced mod M.  The certificate records that
// multiplication by t - 1 on reduced polynomials of the relevant degree has
// trivial kernel, so the reduced quotient is the only solution.
struct QPolynomial {
  std::vector<TCoeff> coeffs;  // constant term first, reduced mod M
  bool unique = false;
};

namespace detail {

// Back-substitution for (t - 1) q = s from the top coefficient down.  Over
// the integral coefficient ring the remainder is checked by the caller; mod M
// the same recurrence is the congruence route.
inline std::vector<TCoeff> q_backsub(const site::AbelianGroup& h, const std::vector<TCoeff>& sp,
                                     TCoeff& remainder) {
  std::size_t d = sp.size() - 1;
  std::vector<TCoeff> q(d, site::t_zero(h));
  TCoeff carry = site::t_zero(h);
  for (std::size_t k = d; k >= 1; --k) {
    carry = site::t_add(sp[k], carry);
    q[k - 1] = carry;
  }
  remainder = site::t_add(sp[0], q[0]);
  return q;
}

inline TCoeff t_mod(const Mod& ring, const TCoeff& a) {
  TCoeff c(a);
  for (auto& v : c) v = Int(ring.reduce(v));
  return c;
}

}  // namespace detail

inline QPolynomial q_polynomial(const Site& s, std::size_t x) {
  const auto& p = s.prime(x).p;
  const auto& h = s.h();
  const Mod& ring = s.ring();
  QPolynomial out;

  if (p.size() >= 2) {
    // s(t) = p(t) - p(1) has coefficient sum zero, so t - 1 divides exactly.
    std::vector<TCoeff> sp(p);
    TCoeff p1 = site::t_zero(h);
    for (const auto& c : p) p1 = site::t_add(p1, c);
    sp[0] = site::t_sub(sp[0], p1);

    TCoeff remainder = site::t_zero(h);
    auto q = detail::q_backsub(h, sp, remainder);
    if (!site::t_is_zero(remainder)) {
      std::vector<TCoeff> spm;
      for (const auto& c : sp) spm.push_back(detail::t_mod(ring, c));
      q = detail::q_backsub(h, spm, remainder);
      if (!site::t_is_zero(detail::t_mod(ring, remainder)))
        throw ScenarioError("model: quotient polynomial does not exist at '" +
                            s.prime(x).id + "'");
    }
    for (auto& c : q) out.coeffs.push_back(detail::t_mod(ring, c));
    while (!out.coeffs.empty() && site::t_is_zero(out.coeffs.back())) out.coeffs.pop_back();
  }

  // Uniqueness certificate: the kernel of multiplication by t - 1 from
  // polynomials of the quotient's degree range is trivial mod M.
  std::size_t hs = h.size();
  std::size_t deg = std::max<std::size_t>(p.empty() ? 1 : p.size(), 2) - 1;
  ResMatrix mult(ring.modulus(), (deg + 1) * hs, deg * hs);
  for (std::size_t k = 0; k < deg; ++k)
    for (std::size_t j = 0; j < hs; ++j) {
      mult.set(k * hs + j, k * hs + j, ring.reduce(Int(-1)));
      mult.set((k + 1) * hs + j, k * hs + j, 1);
    }
  out.unique = exactlin::kernel_mod(mult).rows() == 0;
  return out;
}

// Validation report: one item per behavioral requirement on a model, with a
// witness describing the first failure found.
struct ModelReport {
  struct Item {
    std::string check;
    bool ok = true;
    std::string witness;
  };
  std::vector<Item> items;
  bool ok() const {
    return std::all_of(items.begin(), items.end(), [](const Item& i) { return i.ok; });
  }
};

namespace detail {

// Evaluation elements used when a check quantifies over Gamma: the whole
// group when small, otherwise the identity and every designated image.
inline std::vector<GammaElem> tested_elements(const Site& s, const MockModel& m) {
  std::size_t size = 1;
  bool small = true;
  for (auto n : m.gamma_orders) {
    size *= n;
    if (size > 4096) {
      small = false;
      break;
    }
  }
  std::vector<GammaElem> out;
  if (small) {
    GammaElem e = gamma_identity(m);
    while (true) {
      out.push_back(e);
      std::size_t i = e.size();
      while (i > 0) {
        --i;
        if (++e[i] < m.gamma_orders[i]) break;
        e[i] = 0;
        if (i == 0) return out;
      }
    }
  }
  out.push_back(gamma_identity(m));
  for (const auto& g : m.sigma_images) out.push_back(g);
  for (const auto& g : m.frobenius_images) out.push_back(g);
  for (const auto& g : m.h_images) out.push_back(g);
  return out;
}

inline std::vector<Residue> w_part(const MockModel& m, const std::vector<Residue>& v,
                                   bool& inside) {
  inside = true;
  for (std::size_t i = m.w_rank; i < v.size(); ++i)
    if (v[i] != 0) inside = false;
  std::vector<Residue> w(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m.w_rank));
  return w;
}

}  // namespace detail

// Behavioral validation of a model against a scenario.  Structural shape is
// enforced at load time; the four checks here are the facts the recursion
// proof consumes.
inline ModelReport validate_model(const Site& s, const MockModel& m) {
  const Mod& ring = s.ring();
  ModelReport report;
  auto tested = detail::tested_elements(s, m);
  Level full = s.level_full();
  auto stalks = s.stalks(full);

  // The Frobenius polynomial of each prime annihilates the coefficient
  // module when evaluated at the inverse Frobenius image.
  {
    ModelReport::Item item{"frobenius polynomial annihilates the coefficient module", true, ""};
    for (std::size_t x = 0; x < s.prime_count() && item.ok; ++x) {
      auto op = detail::poly_matrix(s, m, m.w_action, s.prime(x).p,
                                    gamma_inv(m, m.frobenius_images[x]));
      if (!detail::mat_is_zero(op)) {
        item.ok = false;
        item.witness = "p at '" + s.prime(x).id + "' acts with a nonzero matrix on W";
      }
    }
    report.items.push_back(std::move(item));
  }

  // The designated generator and Frobenius images of each prime commute as
  // operators on every translated lifted value.
  {
    ModelReport::Item item{"designated images commute on lifted values", true, ""};
    for (std::size_t x = 0; x < s.prime_count() && item.ok; ++x) {
      const auto& a = m.sigma_images[x];
      const auto& b = m.frobenius_images[x];
      for (const auto& g : tested) {
        if (!item.ok) break;
        for (const auto& [key, val] : m.dhat) {
          auto moved = detail::apply_elem(m, m.wbig_action, g, val);
          auto ab = detail::apply_elem(m, m.wbig_action, b,
                                       detail::apply_elem(m, m.wbig_action, a, moved));
          auto ba = detail::apply_elem(m, m.wbig_action, a,
                                       detail::apply_elem(m, m.wbig_action, b, moved));
          if (ab != ba) {
            item.ok = false;
            item.witness = "images at '" + s.prime(x).id +
                           "' disagree on the lifted value at '" + key + "'";
            break;
          }
        }
      }
    }
    report.items.push_back(std::move(item));
  }

  // The norm of the layer group at a prime carries the lifted value of a
  // canonical stalk symbol to the Frobenius polynomial applied to the value
  // one level down, uniformly over acting elements.
  {
    ModelReport::Item item{"layer norm matches the frobenius polynomial one level down", true,
                           ""};
    for (std::size_t x = 0; x < s.prime_count() && item.ok; ++x) {
      GammaElem finv = gamma_inv(m, m.frobenius_images[x]);
      for (const auto& zp : stalks) {
        if (!item.ok) break;
        if (zp.v[x] == 0) continue;
        Level below = zp;
        below.v[x] = 0;
        const auto& top = m.dhat.at(symbol_key(s, StalkSymbol{zp, s.ge_identity()}));
        const auto& low = m.dhat.at(symbol_key(s, StalkSymbol{below, s.ge_identity()}));
        for (const auto& g : tested) {
          auto vtop = detail::apply_elem(m, m.wbig_action, g, top);
          std::vector<Residue> norm(m.wbig_rank, 0);
          for (std::uint32_t k = 0; k < s.prime(x).order; ++k)
            norm = detail::vec_add(
                ring, norm,
                detail::apply_elem(m, m.wbig_action, gamma_pow(m, m.sigma_images[x], k), vtop));
          auto vlow = detail::apply_elem(m, m.wbig_action, g, low);
          auto poly = detail::poly_apply(s, m, m.wbig_action, s.prime(x).p, finv, vlow);
          if (norm != poly) {
            item.ok = false;
            item.witness = "norm at '" + s.prime(x).id + "' gives " + detail::vec_str(norm) +
                           " on '" + stalk_key(s, zp) + "', the polynomial gives " +
                           detail::vec_str(poly);
            break;
          }
        }
      }
    }
    report.items.push_back(std::move(item));
  }

  // Connecting values of the congruence submodule generators stay inside the
  // coefficient module and inside the configured local span.
  {
    ModelReport::Item item{"congruence generators land in the local submodule", true, ""};
    ResMatrix loc(ring.modulus(), m.local_generators.size(), m.w_rank);
    for (std::size_t i = 0; i < m.local_generators.size(); ++i)
      for (std::size_t j = 0; j < m.w_rank; ++j) loc.set(i, j, m.local_generators[i][j]);
    ResMatrix span = exactlin::howell_span(loc);
    for (std::size_t x = 0; x < s.prime_count() && item.ok; ++x) {
      auto gens = rec::congruence_generators(s, full, x);
      for (const auto& gen : gens) {
        if (!item.ok) break;
        for (const auto& gamma : {m.sigma_images[x], m.frobenius_images[x]}) {
          auto value = kappa_raw(s, m, gen, gamma);
          bool inside = true;
          auto w = detail::w_part(m, value, inside);
          if (!inside) {
            item.ok = false;
            item.witness = "a congruence value at '" + s.prime(x).id +
                           "' escapes the coefficient submodule: " + detail::vec_str(value);
            break;
          }
          if (!exactlin::span_contains(span, w)) {
            item.ok = false;
            item.witness = "a congruence value at '" + s.prime(x).id +
                           "' falls outside the local span: " + detail::vec_str(w);
            break;
          }
        }
      }
    }
    report.items.push_back(std::move(item));
  }

  return report;
}

// Verification of the derived recursion: for every divisor and every prime in
// it, the quotient polynomial at the inverse Frobenius image applied to the
// connecting value one level down at the Frobenius image equals the
// connecting value at the layer generator image.  The optional replay records
// the intermediate identities the equality factors through.
struct KolyvaginReport {
  struct Item {
    std::uint32_t y = 0;
    std::size_t x = 0;
    bool ok = true;
    std::vector<Residue> lhs, rhs;
  };
  struct ChainStep {
    std::uint32_t y = 0;
    std::size_t x = 0;
    std::string name;
    bool ok = true;
  };
  std::vector<Item> items;
  std::vector<ChainStep> chain;
  std::size_t checked = 0;
  std::size_t passed = 0;
  std::string counterexample;
  bool ok() const {
    return counterexample.empty() && passed == checked &&
           std::all_of(chain.begin(), chain.end(), [](const ChainStep& c) { return c.ok; });
  }
};

inline KolyvaginReport verify_kolyvagin_recursion(const Site& s, const rec::RecursiveFamily& f,
                                                  const MockModel& m,
                                                  bool replay_chain = false) {
  const Mod& ring = s.ring();
  KolyvaginReport report;

  std::map<std::uint32_t, std::unique_ptr<UPresentation>> pres;
  auto pres_at = [&](std::uint32_t y) -> const UPresentation& {
    auto it = pres.find(y);
    if (it == pres.end())
      it = pres.emplace(y, std::make_unique<UPresentation>(s, s.stalk_of(y, f.ambient)))
               .first;
    return *it->second;
  };

  std::vector<QPolynomial> q;
  std::vector<ResMatrix> qop_w;
  for (std::size_t x = 0; x < s.prime_count(); ++x) {
    q.push_back(q_polynomial(s, x));
    qop_w.push_back(detail::poly_matrix(s, m, m.w_action, q.back().coeffs,
                                        gamma_inv(m, m.frobenius_images[x])));
  }

  for (std::uint32_t y : f.ys) {
    if (y == 0) continue;
    for (std::size_t x = 0; x < s.prime_count(); ++x) {
      if (!(y & (1u << x))) continue;
      std::uint32_t base = y & ~(1u << x);
      KolyvaginReport::Item item;
      item.y = y;
      item.x = x;
      ++report.checked;
      try {
        auto below = kappa(s, pres_at(base), m, f.at(base), m.frobenius_images[x]);
        item.lhs = detail::mat_vec(qop_w[x], below);
        item.rhs = kappa(s, pres_at(y), m, f.at(y), m.sigma_images[x]);
        item.ok = item.lhs == item.rhs;
      } catch (const ScenarioError& e) {
        item.ok = false;
        if (report.counterexample.empty()) report.counterexample = e.what();
      }
      if (item.ok) {
        ++report.passed;
      } else if (report.counterexample.empty()) {
        report.counterexample =
            "derived pairing at '" + s.prime(x).id + "' of the class below " +
            coh::divisor_name(s, y) + " gives " + detail::vec_str(item.lhs) +
            ", the class at " + coh::divisor_name(s, y) + " evaluates to " +
            detail::vec_str(item.rhs);
      }
      report.items.push_back(item);

      if (replay_chain) {
        // Intermediate identities, each in the coordinates of the lifted
        // module: the Frobenius inverse is inserted, the quotient identity
        // rewrites the operator as a polynomial difference, the recursion
        // congruence swaps the difference for the twisted layer operator,
        // and the group order annihilates the remaining multiple.
        GammaElem fimg = m.frobenius_images[x];
        GammaElem finv = gamma_inv(m, fimg);
        GammaElem simg = m.sigma_images[x];
        auto vlow = dhat_value(s, m, pres_at(base).lift(coh::ints_of(f.at(base).rep)));
        auto vtop = dhat_value(s, m, pres_at(y).lift(coh::ints_of(f.at(y).rep)));
        if (!gamma_is_identity(m.averaging)) {
          vlow = detail::apply_elem(m, m.wbig_action, m.averaging, vlow);
          vtop = detail::apply_elem(m, m.wbig_action, m.averaging, vtop);
        }
        auto kap_low =
            detail::vec_sub(ring, detail::apply_elem(m, m.wbig_action, fimg, vlow), vlow);
        auto kap_top =
            detail::vec_sub(ring, detail::apply_elem(m, m.wbig_action, simg, vtop), vtop);

        auto qk = [&](const std::vector<Residue>& v) {
          return detail::poly_apply(s, m, m.wbig_action, q[x].coeffs, finv, v);
        };
        auto b0 = detail::vec_sub(ring, qk(kap_low), kap_top);
        auto inserted = detail::vec_sub(ring, vlow, detail::apply_elem(m, m.wbig_action, finv, vlow));
        auto b1 = detail::vec_sub(ring, qk(inserted), kap_top);
        report.chain.push_back({y, x, "frobenius inverse inserted", b0 == b1});

        auto pl = detail::poly_apply(s, m, m.wbig_action, s.prime(x).p, finv, vlow);
        TCoeff p1 = site::t_zero(s.h());
        for (const auto& c : s.prime(x).p) p1 = site::t_add(p1, c);
        auto pl1 = detail::poly_apply(s, m, m.wbig_action, {p1}, gamma_identity(m), vlow);
        auto b2 = detail::vec_sub(ring, detail::vec_sub(ring, pl1, pl), kap_top);
        report.chain.push_back({y, x, "quotient identity applied", b1 == b2});

        auto rl = detail::poly_apply(s, m, m.wbig_action, s.prime(x).r, finv, vlow);
        Residue ord = ring.reduce(Int(s.prime(x).order));
        auto gl = detail::vec_sub(ring, pl, detail::vec_scale(ring, ord, rl));
        auto b3 = detail::vec_sub(ring, gl, pl);
        report.chain.push_back({y, x, "recursion congruence applied", b2 == b3});

        auto b4 = detail::vec_scale(ring, ring.neg(ord), rl);
        report.chain.push_back({y, x, "norm multiple extracted", b3 == b4});
        report.chain.push_back({y, x, "group order annihilates", detail::vec_is_zero(b4)});
      }
    }
  }

  for (const auto& step : report.chain)
    if (!step.ok && report.counterexample.empty())
      report.counterexample = "chain step '" + step.name + "' fails below " +
                              coh::divisor_name(s, step.y) + " at '" +
                              s.prime(step.x).id + "'";
  return report;
}

// JSON image of a model, with deterministic key order.
inline nlohmann::json model_to_json(const Site& s, const MockModel& m) {
  nlohmann::json j;
  j["schema"] = 1;
  j["gamma_orders"] = m.gamma_orders;
  nlohmann::json sig, frob;
  for (std::size_t x = 0; x < s.prime_count(); ++x) {
    sig[s.prime(x).id] = m.sigma_images[x];
    frob[s.prime(x).id] = m.frobenius_images[x];
  }
  j["sigma_images"] = sig;
  j["frobenius_images"] = frob;
  j["h_images"] = m.h_images;
  j["averaging"] = m.averaging;
  j["w_rank"] = m.w_rank;
  j["wbig_rank"] = m.wbig_rank;
  auto mats = [](const std::vector<ResMatrix>& v) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& mat : v) {
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t i = 0; i < mat.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t k = 0; k < mat.cols(); ++k) row.push_back(mat(i, k));
        rows.push_back(row);
      }
      out.push_back(rows);
    }
    return out;
  };
  j["w_action"] = mats(m.w_action);
  j["wbig_action"] = mats(m.wbig_action);
  nlohmann::json dh;
  for (const auto& [key, val] : m.dhat) dh[key] = val;
  j["dhat"] = dh;
  j["local_generators"] = m.local_generators;
  return j;
}

namespace detail {

inline GammaElem json_gamma(const MockModel& m, const nlohmann::json& j,
                            const std::string& where) {
  if (!j.is_array() || j.size() != m.gamma_orders.size())
    throw ScenarioError("model: " + where + " must be an array of " +
                        std::to_string(m.gamma_orders.size()) + " exponents");
  GammaElem e;
  for (const auto& v : j) e.push_back(site::detail::json_u32(v, where));
  return gamma_reduce(m, e);
}

inline ResMatrix json_matrix(const Mod& ring, const nlohmann::json& j, std::size_t n,
                             const std::string& where) {
  if (!j.is_array() || j.size() != n)
    throw ScenarioError("model: " + where + " must be a " + std::to_string(n) + " by " +
                        std::to_string(n) + " matrix");
  ResMatrix out(ring.modulus(), n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = j.at(i);
    if (!row.is_array() || row.size() != n)
      throw ScenarioError("model: " + where + " must be a " + std::to_string(n) + " by " +
                          std::to_string(n) + " matrix");
    for (std::size_t k = 0; k < n; ++k)
      out.set(i, k, ring.reduce(site::detail::json_int(row.at(k), where)));
  }
  return out;
}

inline std::vector<Residue> json_resvec(const Mod& ring, const nlohmann::json& j,
                                        std::size_t n, const std::string& where) {
  if (!j.is_array() || j.size() != n)
    throw ScenarioError("model: " + where + " must be an array of " + std::to_string(n) +
                        " residues");
  std::vector<Residue> out;
  for (const auto& v : j) out.push_back(ring.reduce(site::detail::json_int(v, where)));
  return out;
}

}  // namespace detail

// Parses and structurally validates a model document: shapes, exponent
// ranges, generator orders, commutation, preservation of the coefficient
// block, and an exactly matching lift table.  Behavioral facts are left to
// validate_model.
inline MockModel model_from_json(const Site& s, const nlohmann::json& j) {
  const Mod& ring = s.ring();
  if (!j.is_object()) throw ScenarioError("model: document must be an object");
  MockModel m;

  if (!j.contains("gamma_orders") || !j.at("gamma_orders").is_array() ||
      j.at("gamma_orders").empty())
    throw ScenarioError("model: missing or empty 'gamma_orders'");
  for (const auto& v : j.at("gamma_orders")) {
    std::uint32_t n = site::detail::json_u32(v, "'gamma_orders'");
    if (n == 0) throw ScenarioError("model: 'gamma_orders' entries must be positive");
    m.gamma_orders.push_back(n);
  }

  auto images = [&](const char* field) {
    if (!j.contains(field) || !j.at(field).is_object())
      throw ScenarioError(std::string("model: missing '") + field + "'");
    const auto& obj = j.at(field);
    std::vector<GammaElem> out;
    for (std::size_t x = 0; x < s.prime_count(); ++x) {
      const std::string& id = s.prime(x).id;
      if (!obj.contains(id))
        throw ScenarioError(std::string("model: '") + field + "' has no entry for prime '" +
                            id + "'");
      out.push_back(detail::json_gamma(m, obj.at(id), std::string("'") + field + "." + id + "'"));
    }
    if (obj.size() != s.prime_count())
      throw ScenarioError(std::string("model: '") + field + "' names an unknown prime");
    return out;
  };
  m.sigma_images = images("sigma_images");
  m.frobenius_images = images("frobenius_images");

  for (std::size_t x = 0; x < s.prime_count(); ++x)
    if (!gamma_is_identity(gamma_pow(m, m.sigma_images[x], s.prime(x).order)))
      throw ScenarioError("model: sigma image at '" + s.prime(x).id +
                          "' does not respect the layer order");

  if (j.contains("h_images")) {
    const auto& arr = j.at("h_images");
    if (!arr.is_array() || arr.size() != s.h().factors())
      throw ScenarioError("model: 'h_images' must have one entry per coefficient group factor");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      m.h_images.push_back(detail::json_gamma(m, arr.at(i), "'h_images'"));
      if (!gamma_is_identity(gamma_pow(m, m.h_images.back(), s.h().order(i))))
        throw ScenarioError("model: coefficient group image does not respect the factor order");
    }
  } else {
    m.h_images.assign(s.h().factors(), gamma_identity(m));
  }

  m.averaging = j.contains("averaging")
                    ? detail::json_gamma(m, j.at("averaging"), "'averaging'")
                    : gamma_identity(m);

  if (!j.contains("w_rank") || !j.contains("wbig_rank"))
    throw ScenarioError("model: missing 'w_rank' or 'wbig_rank'");
  m.w_rank = site::detail::json_u32(j.at("w_rank"), "'w_rank'");
  m.wbig_rank = site::detail::json_u32(j.at("wbig_rank"), "'wbig_rank'");
  if (m.w_rank == 0 || m.wbig_rank < m.w_rank)
    throw ScenarioError("model: ranks must satisfy 1 <= w_rank <= wbig_rank");

  auto actions = [&](const char* field, std::size_t n) {
    if (!j.contains(field) || !j.at(field).is_array() ||
        j.at(field).size() != m.gamma_orders.size())
      throw ScenarioError(std::string("model: '") + field +
                          "' must have one matrix per group factor");
    std::vector<ResMatrix> out;
    for (std::size_t i = 0; i < m.gamma_orders.size(); ++i)
      out.push_back(
          detail::json_matrix(ring, j.at(field).at(i), n, std::string("'") + field + "'"));
    return out;
  };
  m.w_action = actions("w_action", m.w_rank);
  m.wbig_action = actions("wbig_action", m.wbig_rank);

  for (std::size_t i = 0; i < m.gamma_orders.size(); ++i) {
    if (!(detail::mat_pow(m.w_action[i], m.gamma_orders[i]) ==
          detail::mat_identity(ring, m.w_rank)) ||
        !(detail::mat_pow(m.wbig_action[i], m.gamma_orders[i]) ==
          detail::mat_identity(ring, m.wbig_rank)))
      throw ScenarioError("model: action matrix at factor " + std::to_string(i) +
                          " does not respect the factor order");
    for (std::size_t k = i + 1; k < m.gamma_orders.size(); ++k) {
      if (!(detail::mat_mul(m.w_action[i], m.w_action[k]) ==
            detail::mat_mul(m.w_action[k], m.w_action[i])) ||
          !(detail::mat_mul(m.wbig_action[i], m.wbig_action[k]) ==
            detail::mat_mul(m.wbig_action[k], m.wbig_action[i])))
        throw ScenarioError("model: action matrices do not commute");
    }
    for (std::size_t r = m.w_rank; r < m.wbig_rank; ++r)
      for (std::size_t c = 0; c < m.w_rank; ++c)
        if (m.wbig_action[i](r, c) != 0)
          throw ScenarioError("model: lifted action does not preserve the coefficient block");
    for (std::size_t r = 0; r < m.w_rank; ++r)
      for (std::size_t c = 0; c < m.w_rank; ++c)
        if (m.wbig_action[i](r, c) != m.w_action[i](r, c))
          throw ScenarioError(
              "model: lifted action does not restrict to the coefficient action");
  }

  if (!j.contains("dhat") || !j.at("dhat").is_object())
    throw ScenarioError("model: missing 'dhat'");
  const auto& dh = j.at("dhat");
  std::size_t expected = 0;
  for (const auto& zp : s.stalks(s.level_full())) {
    std::uint32_t mask = s.support_mask(zp);
    for (const auto& g : s.group_elements(mask)) {
      std::string key = symbol_key(s, StalkSymbol{zp, g});
      if (!dh.contains(key))
        throw ScenarioError("model: lift table missing entry for '" + key + "'");
      m.dhat[key] = detail::json_resvec(ring, dh.at(key), m.wbig_rank, "'dhat." + key + "'");
      ++expected;
    }
  }
  if (dh.size() != expected) throw ScenarioError("model: lift table has an unknown entry");

  if (j.contains("local_generators")) {
    const auto& lg = j.at("local_generators");
    if (!lg.is_array()) throw ScenarioError("model: 'local_generators' must be an array");
    for (const auto& row : lg)
      m.local_generators.push_back(
          detail::json_resvec(ring, row, m.w_rank, "'local_generators'"));
  }

  return m;
}

inline MockModel load_model(const Site& s, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError("malformed JSON in '" + path + "': " + e.what());
  }
  return model_from_json(s, j);
}

namespace detail {

// Reduces combinations to an independent spanning set mod M in dense symbol
// coordinates.
inline std::vector<AVector> reduced_span(const Site& s, const dist::SymbolBasis& basis,
                                         const std::vector<AVector>& gens) {
  const Mod& ring = s.ring();
  ResMatrix gmat(ring.modulus(), gens.size(), basis.dim());
  for (std::size_t i = 0; i < gens.size(); ++i) {
    auto dense = basis.dense(gens[i]);
    for (std::size_t j = 0; j < dense.size(); ++j) gmat.set(i, j, ring.reduce(dense[j]));
  }
  ResMatrix red = exactlin::howell_span(gmat);
  std::vector<AVector> out;
  for (std::size_t r = 0; r < red.rows(); ++r) {
    std::vector<Int> coords(basis.dim(), Int(0));
    bool nonzero = false;
    for (std::size_t j = 0; j < basis.dim(); ++j) {
      coords[j] = Int(red(r, j));
      nonzero = nonzero || red(r, j) != 0;
    }
    if (nonzero) out.push_back(basis.sparse(coords));
  }
  return out;
}

}  // namespace detail

// Solves for a lifted value table over a scenario as one homogeneous system
// mod M.  The unknowns are one lifted vector per stalk of the full level plus
// one coefficient-block deviation per translated symbol: a translated
// symbol's value is its stalk vector moved by the image of the translation
// plus the deviation, so moving a symbol and acting on its value agree up to
// the coefficient block by construction.  The rows: lifted values of the
// relation lattice stay in the coefficient block, which makes connecting
// values independent of the chosen lift; the value-side layer norm on a
// canonical symbol equals the Frobenius polynomial one level down, exactly;
// designated evaluation differences on the lifts of both recursion families
// and on the congruence generators stay in the coefficient block; and the
// evaluation of each family class at its layer generator image equals
// p(x;1) - p(x;Fr^-1) applied to the value one level down, exactly.  Gamma is
// three cyclic factors of order M: the layer generator images span pairwise
// distinct lines in the first two factors, so the norm at one prime does not
// annihilate the derivative operator of another, and the third factor
// separates every Frobenius image from every layer image.  The lifted module
// is the group algebra of Gamma in a basis whose first vector is the sum of
// all elements.  The seed picks a kernel combination; draws are retried until
// the trivial and full stalks carry nonzero vectors and every nonempty
// divisor has a prime at which the Kolyvagin class evaluates nonzero.
// Returns nothing when the kernel has no such element.
inline std::optional<MockModel> generate_mock(const Site& s, std::uint64_t seed) {
  const Mod& ring = s.ring();
  const Residue M = ring.modulus();
  MockModel m;

  // One cyclic factor per prime of the full layer order, one factor of order
  // M carrying the Frobenius images away from every layer image, and one
  // factor of order M acting only through the coefficient block to cancel the
  // Frobenius action there.  Full layer orders keep every value-side layer
  // norm a genuine norm instead of a multiple of one.
  std::size_t np = s.prime_count();
  std::size_t nf = np + 2;
  for (std::size_t x = 0; x < np; ++x)
    m.gamma_orders.push_back(s.prime(x).order);
  m.gamma_orders.push_back(static_cast<std::uint32_t>(M));
  m.gamma_orders.push_back(static_cast<std::uint32_t>(M));

  for (std::size_t x = 0; x < np; ++x) {
    GammaElem sig(nf, 0);
    sig[x] = 1;
    m.sigma_images.push_back(sig);
  }
  for (std::size_t x = 0; x < np; ++x) {
    const GroupElement sf = s.frobenius(x);
    GammaElem fr = rho_of(s, m, sf);
    fr[np] = 1;
    std::uint32_t drift = 0;
    for (std::size_t k = 0; k < np; ++k)
      drift = static_cast<std::uint32_t>((drift + sf.e[k]) % M);
    fr[np + 1] = drift;
    m.frobenius_images.push_back(fr);
  }
  m.h_images.assign(s.h().factors(), gamma_identity(m));
  m.averaging = gamma_identity(m);

  // Coefficient module: rank two with a unipotent action.  Every layer
  // generator acts by the elementary unipotent, the Frobenius carrier fixes
  // it, and the last factor acts by the inverse unipotent so that every
  // Frobenius image acts as the identity there.
  m.w_rank = 2;
  ResMatrix uni(ring.modulus(), 2, 2);
  uni.set(0, 0, 1);
  uni.set(0, 1, 1);
  uni.set(1, 1, 1);
  ResMatrix uni_inv(ring.modulus(), 2, 2);
  uni_inv.set(0, 0, 1);
  uni_inv.set(0, 1, ring.neg(1));
  uni_inv.set(1, 1, 1);
  for (std::size_t x = 0; x < np; ++x) m.w_action.push_back(uni);
  m.w_action.push_back(detail::mat_identity(ring, 2));
  m.w_action.push_back(uni_inv);

  // Lifted module: the induced module of the coefficient module, realized as
  // the group algebra of the regular factors tensored with two coefficient
  // slots that only the last factor twists.  The coefficient module embeds as
  // the twisted diagonal sum over group elements, which becomes the leading
  // coordinate pair of an adapted basis.
  std::vector<std::uint32_t> reg_orders(m.gamma_orders.begin(),
                                        m.gamma_orders.begin() + static_cast<std::ptrdiff_t>(np + 1));
  site::AbelianGroup reg(reg_orders);
  std::size_t R = reg.size();
  std::size_t S = R * 2;
  if (S > 2048) return std::nullopt;
  m.wbig_rank = S;

  ResMatrix from_adapted(ring.modulus(), S, S);
  ResMatrix to_adapted(ring.modulus(), S, S);
  for (std::size_t i = 0; i < S; ++i) {
    from_adapted.set(i, i, 1);
    to_adapted.set(i, i, 1);
  }
  for (std::size_t i = 1; i < R; ++i) {
    // inverse coefficient action of the element: the opposite unipotent power
    const auto& e = reg.exps(i);
    std::uint32_t tot = 0;
    for (std::size_t x = 0; x < np; ++x)
      tot = static_cast<std::uint32_t>((tot + e[x]) % M);
    ResMatrix phinv =
        detail::mat_pow(uni, static_cast<std::uint64_t>((M - tot % M) % M));
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t j = 0; j < 2; ++j) {
        from_adapted.set(2 * i + r, j, phinv(r, j));
        to_adapted.set(2 * i + r, j, ring.neg(phinv(r, j)));
      }
  }
  auto tensor = [&](const ResMatrix& left, const ResMatrix& right) {
    ResMatrix out(ring.modulus(), left.rows() * 2, left.rows() * 2);
    for (std::size_t i = 0; i < left.rows(); ++i)
      for (std::size_t k = 0; k < left.cols(); ++k) {
        if (left(i, k) == 0) continue;
        for (std::size_t r = 0; r < 2; ++r)
          for (std::size_t c = 0; c < 2; ++c)
            out.set(2 * i + r, 2 * k + c, ring.mul(left(i, k), right(r, c)));
      }
    return out;
  };
  for (std::size_t f = 0; f + 1 < nf; ++f) {
    std::vector<std::uint32_t> gexp(np + 1, 0);
    gexp[f] = 1;
    std::size_t gidx = reg.index(gexp);
    ResMatrix perm(ring.modulus(), R, R);
    for (std::size_t idx = 0; idx < R; ++idx) perm.set(reg.mul(gidx, idx), idx, 1);
    ResMatrix amb = tensor(perm, detail::mat_identity(ring, 2));
    m.wbig_action.push_back(
        detail::mat_mul(to_adapted, detail::mat_mul(amb, from_adapted)));
  }
  {
    ResMatrix amb = tensor(detail::mat_identity(ring, R), uni_inv);
    m.wbig_action.push_back(
        detail::mat_mul(to_adapted, detail::mat_mul(amb, from_adapted)));
  }

  Level full = s.level_full();
  dist::SymbolBasis basis(s, full);
  auto stalks = s.stalks(full);
  std::size_t ns = basis.size();
  std::size_t hs = s.h().size();

  std::map<std::string, std::size_t> stalk_pos;
  for (std::size_t i = 0; i < stalks.size(); ++i) stalk_pos[stalk_key(s, stalks[i])] = i * S;
  std::size_t cols = stalks.size() * S;
  std::vector<std::ptrdiff_t> wcol(ns, -1);
  for (std::size_t i = 0; i < ns; ++i)
    if (!(basis.symbol(i).g == s.ge_identity())) {
      wcol[i] = static_cast<std::ptrdiff_t>(cols);
      cols += m.w_rank;
    }

  std::map<GammaElem, ResMatrix> elem_cache;
  auto elem_matrix = [&](const GammaElem& e) -> const ResMatrix& {
    auto it = elem_cache.find(e);
    if (it == elem_cache.end())
      it = elem_cache.emplace(e, detail::matrix_of_elem(ring, m, m.wbig_action, e)).first;
    return it->second;
  };

  // Linear map from the unknowns to the lifted value of a combination.  The
  // deviation of a symbol lies in the coefficient block, where every
  // coefficient image acts as the identity.
  auto dhat_matrix = [&](const AVector& v) {
    ResMatrix out(ring.modulus(), S, cols);
    for (const auto& [sym, t] : v.terms()) {
      std::size_t idx = basis.index_of(sym);
      std::size_t pos = stalk_pos.at(stalk_key(s, sym.zp));
      GammaElem ge = rho_of(s, m, sym.g);
      for (std::size_t j = 0; j < t.size(); ++j) {
        Residue cj = ring.reduce(t[j]);
        if (cj == 0) continue;
        const ResMatrix& mat = elem_matrix(gamma_mul(m, ge, rho_of_hslot(s, m, j)));
        for (std::size_t i = 0; i < S; ++i)
          for (std::size_t c = 0; c < S; ++c)
            out.set(i, pos + c, ring.add(out(i, pos + c), ring.mul(cj, mat(i, c))));
        if (wcol[idx] >= 0) {
          std::size_t wc = static_cast<std::size_t>(wcol[idx]);
          for (std::size_t r = 0; r < m.w_rank; ++r)
            out.set(r, wc + r, ring.add(out(r, wc + r), cj));
        }
      }
    }
    return out;
  };

  std::vector<std::vector<Residue>> rows;
  // Emits the rows of an expression matrix: all of them for an exact
  // constraint, only those outside the coefficient block for containment in
  // the coefficient module.
  auto emit = [&](const ResMatrix& expr, std::size_t from) {
    for (std::size_t i = from; i < S; ++i) {
      std::vector<Residue> row(cols, 0);
      bool nonzero = false;
      for (std::size_t c = 0; c < cols; ++c) {
        row[c] = expr(i, c);
        nonzero = nonzero || row[c] != 0;
      }
      if (nonzero) rows.push_back(std::move(row));
    }
  };
  auto op_minus_one = [&](const GammaElem& g, const ResMatrix& dmat) {
    return detail::mat_sub(detail::mat_mul(elem_matrix(g), dmat), dmat);
  };

  // Lifted values of the relation lattice stay in the coefficient block.
  // The lattice is reduced to an independent spanning set mod M first.
  {
    std::vector<AVector> gens;
    std::uint32_t support = s.support_mask(full);
    auto translations = s.group_elements(support);
    for (std::size_t x = 0; x < np; ++x) {
      if (!(support & (1u << x))) continue;
      Level below = full;
      below.v[x] = 0;
      dist::SymbolBasis sub(s, below);
      for (std::size_t i = 0; i < sub.size(); ++i) {
        AVector image = dist::lambda_symbol(s, x, sub.symbol(i));
        for (const auto& g : translations) {
          AVector moved = dist::av_act_elem(s, g, image);
          for (std::size_t hk = 0; hk < hs; ++hk) {
            TCoeff t = site::t_zero(s.h());
            t[hk] = 1;
            gens.push_back(dist::av_mul_t(s.h(), moved, t));
          }
        }
      }
    }
#ifndef EM_NO_LAMBDA
    for (const auto& gen : detail::reduced_span(s, basis, gens))
      emit(dhat_matrix(gen), m.w_rank);
#endif
  }

  // The value-side layer norm on a canonical symbol equals the Frobenius
  // polynomial one level down, exactly.
  std::vector<ResMatrix> pmat, p1mat;
  for (std::size_t x = 0; x < np; ++x) {
    GammaElem finv = gamma_inv(m, m.frobenius_images[x]);
    pmat.push_back(detail::poly_matrix(s, m, m.wbig_action, s.prime(x).p, finv));
    TCoeff p1 = site::t_zero(s.h());
    for (const auto& c : s.prime(x).p) p1 = site::t_add(p1, c);
    p1mat.push_back(detail::poly_matrix(s, m, m.wbig_action, {p1}, gamma_identity(m)));
    ResMatrix nmat(ring.modulus(), S, S);
    for (std::uint32_t k = 0; k < s.prime(x).order; ++k)
      nmat = detail::mat_add(nmat, elem_matrix(gamma_pow(m, m.sigma_images[x], k)));
    for (const auto& zp : stalks) {
      if (zp.v[x] == 0) continue;
      Level below = zp;
      below.v[x] = 0;
      ResMatrix expr(ring.modulus(), S, cols);
      std::size_t pos_top = stalk_pos.at(stalk_key(s, zp));
      std::size_t pos_low = stalk_pos.at(stalk_key(s, below));
      for (std::size_t i = 0; i < S; ++i)
        for (std::size_t c = 0; c < S; ++c) {
          expr.set(i, pos_top + c, nmat(i, c));
          expr.set(i, pos_low + c, ring.sub(expr(i, pos_low + c), pmat[x](i, c)));
        }
#ifndef EM_NO_NORM
      emit(expr, 0);
#endif
    }
  }

  std::vector<GammaElem> designated;
  for (std::size_t x = 0; x < np; ++x) {
    designated.push_back(m.sigma_images[x]);
    designated.push_back(m.frobenius_images[x]);
  }

  // Family rows: designated evaluation differences on every lift stay in the
  // coefficient block, and the layer generator evaluation at a divisor equals
  // the polynomial difference applied one level down.  The layer evaluations
  // of the Kolyvagin lifts double as richness probes.
  rec::RecursiveFamily canon = rec::canonical_family(s, full);
  rec::RecursiveFamily koly = rec::kolyvagin_family(s, full);
  std::vector<std::uint32_t> probe_ys;
  std::vector<std::vector<ResMatrix>> probe_mats;
#ifdef EM_DBG
  std::vector<ResMatrix> dbg_fev;
#endif
  {
    std::map<std::uint32_t, std::unique_ptr<UPresentation>> pres;
    auto pres_at = [&](std::uint32_t y) -> const UPresentation& {
      auto it = pres.find(y);
      if (it == pres.end())
        it = pres.emplace(y, std::make_unique<UPresentation>(s, s.stalk_of(y, full))).first;
      return *it->second;
    };
    for (const rec::RecursiveFamily* fam : {&canon, &koly}) {
#ifdef EM_NO_CANON
      if (fam == &canon) continue;
#endif
      std::map<std::uint32_t, ResMatrix> dm;
      for (std::uint32_t y : fam->ys)
        dm.emplace(y, dhat_matrix(pres_at(y).lift(coh::ints_of(fam->at(y).rep))));
#ifdef EM_DBG
      if (fam == &koly)
        for (std::size_t x = 0; x < np; ++x)
          dbg_fev.push_back(op_minus_one(m.frobenius_images[x], dm.at(0)));
#endif
      for (std::uint32_t y : fam->ys) {
#ifndef EM_NO_LAND
#ifndef EM_LAND_MASK
#define EM_LAND_MASK 3
#endif
        for (std::size_t gi = 0; gi < designated.size(); ++gi) {
          bool is_sigma = (gi % 2 == 0);
          if (is_sigma && !(EM_LAND_MASK & 1)) continue;
          if (!is_sigma && !(EM_LAND_MASK & 2)) continue;
          emit(op_minus_one(designated[gi], dm.at(y)), m.w_rank);
        }
#endif
        if (y == 0) continue;
        std::vector<ResMatrix> probes;
        for (std::size_t x = 0; x < np; ++x) {
          if (!(y & (1u << x))) continue;
          std::uint32_t base = y & ~(1u << x);
          ResMatrix lhs = op_minus_one(m.sigma_images[x], dm.at(y));
          ResMatrix rhs =
              detail::mat_mul(detail::mat_sub(p1mat[x], pmat[x]), dm.at(base));
#ifndef EM_NO_STAR
          emit(detail::mat_sub(lhs, rhs), 0);
#endif
          if (fam == &koly) probes.push_back(std::move(lhs));
        }
        if (fam == &koly) {
          probe_ys.push_back(y);
          probe_mats.push_back(std::move(probes));
        }
      }
    }
  }

  // Designated evaluation differences on the congruence generators stay in
  // the coefficient block, again from a reduced spanning set.
  for (std::size_t x = 0; x < np; ++x) {
    auto gens = rec::congruence_generators(s, full, x);
#ifndef EM_NO_LOC
#ifndef EM_LOC_MASK
#define EM_LOC_MASK 3
#endif
    for (const auto& gen : detail::reduced_span(s, basis, gens)) {
      ResMatrix dmat = dhat_matrix(gen);
#ifdef EM_LOC_SKIPFX
      if (x == EM_LOC_SKIPFX) {
        emit(op_minus_one(m.sigma_images[x], dmat), m.w_rank);
        continue;
      }
#endif
      if (EM_LOC_MASK & 1) emit(op_minus_one(m.sigma_images[x], dmat), m.w_rank);
      if (EM_LOC_MASK & 2) emit(op_minus_one(m.frobenius_images[x], dmat), m.w_rank);
    }
#endif
  }

  ResMatrix sys(ring.modulus(), rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < cols; ++c)
      if (rows[i][c] != 0) sys.set(i, c, rows[i][c]);

  ResMatrix kernel = exactlin::kernel_mod(sys);
#ifdef EM_DBG
  fprintf(stderr, "[dbg] rows=%zu cols=%zu kernel=%zu\n", rows.size(), cols, kernel.rows());
#endif
  if (kernel.rows() == 0) return std::nullopt;

  std::size_t pos_one = stalk_pos.at(stalk_key(s, s.level_one()));
  std::size_t pos_full = stalk_pos.at(stalk_key(s, full));
  auto stalk_block = [&](const std::vector<Residue>& sol, std::size_t pos) {
    return std::vector<Residue>(sol.begin() + static_cast<std::ptrdiff_t>(pos),
                                sol.begin() + static_cast<std::ptrdiff_t>(pos + S));
  };
  auto acceptable = [&](const std::vector<Residue>& sol) {
    if (detail::vec_is_zero(stalk_block(sol, pos_one))) return false;
    if (detail::vec_is_zero(stalk_block(sol, pos_full))) return false;
    for (std::size_t i = 0; i < probe_ys.size(); ++i) {
      bool rich = false;
      for (const auto& pm : probe_mats[i])
        rich = rich || !detail::vec_is_zero(detail::mat_vec(pm, sol));
      if (!rich) return false;
    }
    return true;
  };

#ifdef EM_DBG
  {
    bool any_one = false, any_full = false;
    std::vector<bool> any_probe(probe_ys.size(), false);
    for (std::size_t r = 0; r < kernel.rows(); ++r) {
      std::vector<Residue> sol(cols, 0);
      for (std::size_t j = 0; j < cols; ++j) sol[j] = kernel(r, j);
      any_one = any_one || !detail::vec_is_zero(stalk_block(sol, pos_one));
      any_full = any_full || !detail::vec_is_zero(stalk_block(sol, pos_full));
      for (std::size_t i = 0; i < probe_ys.size(); ++i)
        for (const auto& pm : probe_mats[i])
          any_probe[i] = any_probe[i] || !detail::vec_is_zero(detail::mat_vec(pm, sol));
    }
    fprintf(stderr, "[dbg] kernel coverage: one=%d full=%d", any_one, any_full);
    for (std::size_t i = 0; i < probe_ys.size(); ++i)
      fprintf(stderr, " probe(y=%u)=%d", probe_ys[i], (int)any_probe[i]);
    for (std::size_t x = 0; x < dbg_fev.size(); ++x) {
      bool any = false;
      for (std::size_t r = 0; r < kernel.rows(); ++r) {
        std::vector<Residue> sol(cols, 0);
        for (std::size_t j = 0; j < cols; ++j) sol[j] = kernel(r, j);
        any = any || !detail::vec_is_zero(detail::mat_vec(dbg_fev[x], sol));
      }
      fprintf(stderr, " fev(x=%zu)=%d", x, (int)any);
    }
    fprintf(stderr, "\n");
  }
#endif
  std::vector<Residue> chosen;
  std::mt19937_64 rng(seed);
  for (std::size_t attempt = 0; attempt < 64 && chosen.empty(); ++attempt) {
    std::vector<Residue> sol(cols, 0);
    for (std::size_t r = 0; r < kernel.rows(); ++r) {
      Residue c = static_cast<Residue>(rng() % ring.modulus());
      if (c == 0) continue;
      for (std::size_t j = 0; j < cols; ++j)
        sol[j] = ring.add(sol[j], ring.mul(c, kernel(r, j)));
    }
    if (acceptable(sol)) chosen = std::move(sol);
  }
  if (chosen.empty()) {
    // Deterministic fallback: single kernel rows, then partial sums.
    std::vector<Residue> acc(cols, 0);
    for (std::size_t r = 0; r < kernel.rows() && chosen.empty(); ++r) {
      std::vector<Residue> sol(cols, 0);
      for (std::size_t j = 0; j < cols; ++j) {
        sol[j] = kernel(r, j);
        acc[j] = ring.add(acc[j], kernel(r, j));
      }
      if (acceptable(sol)) chosen = std::move(sol);
      else if (acceptable(acc)) chosen = acc;
    }
  }
#ifdef EM_DBG
  if (chosen.empty()) fprintf(stderr, "[dbg] no acceptable draw\n");
#endif
  if (chosen.empty()) return std::nullopt;

  for (std::size_t i = 0; i < ns; ++i) {
    const StalkSymbol& sym = basis.symbol(i);
    auto value = detail::apply_elem(m, m.wbig_action, rho_of(s, m, sym.g),
                                    stalk_block(chosen, stalk_pos.at(stalk_key(s, sym.zp))));
    if (wcol[i] >= 0)
      for (std::size_t r = 0; r < m.w_rank; ++r)
        value[r] = ring.add(value[r], chosen[static_cast<std::size_t>(wcol[i]) + r]);
    m.dhat[symbol_key(s, sym)] = std::move(value);
  }

  // The realized local span: connecting values of every congruence generator
  // at the designated evaluations of its prime.
  std::vector<std::vector<Residue>> values;
  for (std::size_t x = 0; x < np; ++x) {
    auto gens = rec::congruence_generators(s, full, x);
    for (const auto& gen : gens)
      for (const auto& gelem : {m.sigma_images[x], m.frobenius_images[x]}) {
        auto value = kappa_raw(s, m, gen, gelem);
        bool inside = true;
        auto w = detail::w_part(m, value, inside);
#ifdef EM_DBG
        if (!inside) fprintf(stderr, "[dbg] locality value escapes W\n");
#endif
        if (!inside) return std::nullopt;
        if (!detail::vec_is_zero(w)) values.push_back(w);
      }
  }
  ResMatrix vm(ring.modulus(), values.size(), m.w_rank);
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t j = 0; j < m.w_rank; ++j) vm.set(i, j, values[i][j]);
  ResMatrix span = exactlin::howell_span(vm);
  for (std::size_t i = 0; i < span.rows(); ++i) {
    std::vector<Residue> row(m.w_rank, 0);
    bool nonzero = false;
    for (std::size_t j = 0; j < m.w_rank; ++j) {
      row[j] = span(i, j);
      nonzero = nonzero || row[j] != 0;
    }
    if (nonzero) m.local_generators.push_back(std::move(row));
  }

#ifdef EM_DBG
  {
    auto rep = validate_model(s, m);
    for (const auto& it : rep.items)
      if (!it.ok) fprintf(stderr, "[dbg] validate: %s: %s\n", it.check.c_str(), it.witness.c_str());
    auto r1 = verify_kolyvagin_recursion(s, canon, m, true);
    if (!r1.ok()) fprintf(stderr, "[dbg] canon: %s\n", r1.counterexample.c_str());
    auto r2 = verify_kolyvagin_recursion(s, koly, m, true);
    if (!r2.ok()) fprintf(stderr, "[dbg] koly: %s\n", r2.counterexample.c_str());
  }
#endif
  if (!validate_model(s, m).ok()) return std::nullopt;
  if (!verify_kolyvagin_recursion(s, canon, m, true).ok()) return std::nullopt;
  if (!verify_kolyvagin_recursion(s, koly, m, true).ok()) return std::nullopt;
  return m;
}

}  // namespace undlab::em
