#pragma once

// Ground data for universal norm distributions: an ordered list of primes,
// each carrying a cyclic layer group, a polynomial p(x;t) over T = Z[H], a
// Frobenius element, and the auxiliary polynomial r_x(t).  Levels, stalks,
// the sign omega, group elements of G_z, and group-ring arithmetic all live
// here.  Everything is validated once at construction and immutable after.

#include <undlab/ints.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace undlab::site {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Finite abelian group as a product of cyclic factors.  Elements are
// mixed-radix indices with the first factor most significant, so index
// order equals lexicographic order on exponent tuples.
class AbelianGroup {
 public:
  AbelianGroup() = default;
  explicit AbelianGroup(std::vector<std::uint32_t> orders) : orders_(std::move(orders)) {
    for (auto n : orders_) {
      if (n == 0) throw ScenarioError("cyclic factor of order 0");
      size_ *= n;
      if (size_ > (std::size_t{1} << 24)) throw ScenarioError("group too large");
    }
  }

  std::size_t size() const { return size_; }
  std::size_t factors() const { return orders_.size(); }
  std::uint32_t order(std::size_t i) const { return orders_[i]; }

  std::size_t index(const std::vector<std::uint32_t>& exps) const {
    std::size_t acc = 0;
    for (std::size_t i = 0; i < orders_.size(); ++i) acc = acc * orders_[i] + exps[i] % orders_[i];
    return acc;
  }

  std::vector<std::uint32_t> exps(std::size_t index) const {
    std::vector<std::uint32_t> e(orders_.size(), 0);
    for (std::size_t i = orders_.size(); i-- > 0;) {
      e[i] = static_cast<std::uint32_t>(index % orders_[i]);
      index /= orders_[i];
    }
    return e;
  }

  std::size_t mul(std::size_t a, std::size_t b) const {
    auto ea = exps(a), eb = exps(b);
    for (std::size_t i = 0; i < ea.size(); ++i) ea[i] = (ea[i] + eb[i]) % orders_[i];
    return index(ea);
  }

  std::size_t inv(std::size_t a) const {
    auto e = exps(a);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = e[i] == 0 ? 0 : orders_[i] - e[i];
    return index(e);
  }

  std::size_t pow(std::size_t a, long long k) const {
    auto e = exps(a);
    for (std::size_t i = 0; i < e.size(); ++i) {
      long long v = (static_cast<long long>(e[i]) * k) % orders_[i];
      if (v < 0) v += orders_[i];
      e[i] = static_cast<std::uint32_t>(v);
    }
    return index(e);
  }

 private:
  std::vector<std::uint32_t> orders_;
  std::size_t size_ = 1;
};

// Elements of T = Z[H], stored as dense coordinate vectors over H.
using TCoeff = std::vector<Int>;

inline TCoeff t_zero(const AbelianGroup& h) { return TCoeff(h.size(), Int(0)); }

inline TCoeff t_one(const AbelianGroup& h) {
  TCoeff c(h.size(), Int(0));
  c[0] = 1;
  return c;
}

inline bool t_is_zero(const TCoeff& a) {
  return std::all_of(a.begin(), a.end(), [](const Int& v) { return v == 0; });
}

inline TCoeff t_add(const TCoeff& a, const TCoeff& b) {
  TCoeff c(a);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

inline TCoeff t_sub(const TCoeff& a, const TCoeff& b) {
  TCoeff c(a);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

inline TCoeff t_neg(const TCoeff& a) {
  TCoeff c(a);
  for (auto& v : c) v = -v;
  return c;
}

inline TCoeff t_scale(const TCoeff& a, const Int& k) {
  TCoeff c(a);
  for (auto& v : c) v *= k;
  return c;
}

inline TCoeff t_mul(const AbelianGroup& h, const TCoeff& a, const TCoeff& b) {
  TCoeff c(h.size(), Int(0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0) continue;
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (b[j] == 0) continue;
      c[h.mul(i, j)] += a[i] * b[j];
    }
  }
  return c;
}

// Augmentation over H: the coordinate sum.
inline Int t_aug(const TCoeff& a) {
  Int s = 0;
  for (const auto& v : a) s += v;
  return s;
}

// Exponent vector over the configured primes.  Stalk levels keep each
// exponent at 0 or the configured layer exponent; free levels (the w
// direction of the double complex) may exceed the layer exponent.
struct Level {
  std::vector<std::uint32_t> v;
  bool operator==(const Level&) const = default;
  auto operator<=>(const Level&) const = default;
};

// Element of G_z: one exponent per prime slot, reduced mod the layer group
// order.  Slots outside the acting stalk are kept at 0.
struct GroupElement {
  std::vector<std::uint32_t> e;
  bool operator==(const GroupElement&) const = default;
  auto operator<=>(const GroupElement&) const = default;
};

// Finitely supported T-combination of group elements; zero coefficients are
// never stored.
class GroupRingElem {
 public:
  void add_term(GroupElement g, TCoeff c) {
    auto it = terms_.find(g);
    if (it == terms_.end()) {
      if (!t_is_zero(c)) terms_.emplace(std::move(g), std::move(c));
      return;
    }
    it->second = t_add(it->second, c);
    if (t_is_zero(it->second)) terms_.erase(it);
  }

  const std::map<GroupElement, TCoeff>& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }

  bool operator==(const GroupRingElem& o) const { return terms_ == o.terms_; }

 private:
  std::map<GroupElement, TCoeff> terms_;
};

struct Prime {
  std::string id;
  std::uint32_t level = 1;   // the layer at this prime is x^level
  std::uint32_t order = 1;   // size of the cyclic layer group
  std::vector<TCoeff> p;     // p(x;t), constant term first
  std::vector<TCoeff> r;     // r_x(t), explicit or derived from norm_hint
  std::optional<Int> norm_hint;
  GroupElement frob;         // exponent 0 at its own prime
};

// Raw configuration, as read from a scenario file; validated by Site.
struct SiteConfig {
  Residue modulus = 0;
  std::vector<std::uint32_t> coefficient_group;
  struct PrimeConfig {
    std::string id;
    std::uint32_t level = 1;
    std::uint32_t order = 1;
    std::vector<TCoeff> p_coeffs;
    std::optional<std::vector<TCoeff>> r_coeffs;
    std::optional<Int> norm_hint;
    std::map<std::string, std::uint32_t> frobenius;
  };
  std::vector<PrimeConfig> primes;
};

class Site {
 public:
  explicit Site(const SiteConfig& cfg) : ring_(validate_modulus(cfg.modulus)) {
    for (auto n : cfg.coefficient_group)
      if (n == 0) throw ScenarioError("coefficient group factor of order 0");
    h_ = AbelianGroup(cfg.coefficient_group);
    if (cfg.primes.size() > 30) throw ScenarioError("too many primes");

    for (const auto& pc : cfg.primes) {
      if (pc.id.empty()) throw ScenarioError("empty prime id");
      for (const auto& q : primes_)
        if (q.id == pc.id) throw ScenarioError("duplicate prime id '" + pc.id + "'");
      if (pc.level == 0) throw ScenarioError("prime '" + pc.id + "': level must be positive");
      if (pc.order == 0)
        throw ScenarioError("prime '" + pc.id + "': group order must be positive");

      Prime p;
      p.id = pc.id;
      p.level = pc.level;
      p.order = pc.order;
      p.p = pc.p_coeffs;
      p.norm_hint = pc.norm_hint;
      for (const auto& c : p.p)
        if (c.size() != h_.size())
          throw ScenarioError("prime '" + pc.id + "': coefficient length != |H|");

      if (p.order % ring_.modulus() != 0)
        throw ScenarioError("Kolyvagin condition 1 violated at prime '" + pc.id +
                            "': modulus does not divide the layer group order");
      TCoeff at_one = t_zero(h_);
      for (const auto& c : p.p) at_one = t_add(at_one, c);
      if (ring_.reduce(t_aug(at_one)) != 0)
        throw ScenarioError("Kolyvagin condition 1 violated at prime '" + pc.id +
                            "': modulus does not divide the augmentation of p(x;1)");

      if (pc.r_coeffs) {
        p.r = *pc.r_coeffs;
        for (const auto& c : p.r)
          if (c.size() != h_.size())
            throw ScenarioError("prime '" + pc.id + "': r coefficient length != |H|");
      } else {
        if (!pc.norm_hint)
          throw ScenarioError("prime '" + pc.id +
                              "': r_coeffs absent and no norm_hint to derive them");
        p.r = derive_r(pc.id, p.p, *pc.norm_hint, p.order);
      }
      primes_.push_back(std::move(p));
    }

    // Frobenius exponents resolve against the full prime list, so fill them
    // in a second pass.
    for (std::size_t i = 0; i < primes_.size(); ++i) {
      GroupElement fr;
      fr.e.assign(primes_.size(), 0);
      for (const auto& [id, exp] : cfg.primes[i].frobenius) {
        std::size_t j = prime_index(id);
        if (j == i && exp % primes_[j].order != 0)
          throw ScenarioError("prime '" + primes_[i].id +
                              "': frobenius must restrict to the identity on its own layer");
        fr.e[j] = exp % primes_[j].order;
      }
      primes_[i].frob = std::move(fr);
    }
  }

  const Mod& ring() const { return ring_; }
  Residue modulus() const { return ring_.modulus(); }
  const AbelianGroup& h() const { return h_; }
  std::size_t prime_count() const { return primes_.size(); }
  const Prime& prime(std::size_t i) const { return primes_.at(i); }

  std::size_t prime_index(const std::string& id) const {
    for (std::size_t i = 0; i < primes_.size(); ++i)
      if (primes_[i].id == id) return i;
    throw ScenarioError("unknown prime id '" + id + "'");
  }

  // Levels.
  Level level_one() const { return Level{std::vector<std::uint32_t>(primes_.size(), 0)}; }

  Level level_full() const {
    Level z = level_one();
    for (std::size_t i = 0; i < primes_.size(); ++i) z.v[i] = primes_[i].level;
    return z;
  }

  // The layer at x, as a level.
  Level layer(std::size_t x) const {
    Level z = level_one();
    z.v[x] = primes_[x].level;
    return z;
  }

  std::uint32_t support_mask(const Level& z) const {
    std::uint32_t m = 0;
    for (std::size_t i = 0; i < z.v.size(); ++i)
      if (z.v[i] != 0) m |= 1u << i;
    return m;
  }

  // The stalk of the ambient-layered z with the given support.
  Level stalk_of(std::uint32_t mask, const Level& z) const {
    Level out = level_one();
    for (std::size_t i = 0; i < primes_.size(); ++i)
      if (mask & (1u << i)) out.v[i] = z.v[i];
    return out;
  }

  bool is_stalk_of(const Level& a, const Level& b) const {
    for (std::size_t i = 0; i < a.v.size(); ++i)
      if (a.v[i] != 0 && a.v[i] != b.v[i]) return false;
    return true;
  }

  std::vector<Level> stalks(const Level& z) const {
    std::uint32_t support = support_mask(z);
    std::vector<std::uint32_t> masks;
    std::uint32_t sub = support;
    for (;;) {
      masks.push_back(sub);
      if (sub == 0) break;
      sub = (sub - 1) & support;
    }
    std::sort(masks.begin(), masks.end(), [](std::uint32_t a, std::uint32_t b) {
      int pa = std::popcount(a), pb = std::popcount(b);
      return pa != pb ? pa < pb : a < b;
    });
    std::vector<Level> out;
    out.reserve(masks.size());
    for (auto m : masks) out.push_back(stalk_of(m, z));
    return out;
  }

  // Sign of x against the squarefree divisor y: parity of the number of
  // smaller primes dividing y, zero when x does not divide y.
  int omega(std::size_t x, std::uint32_t ymask) const {
    if (x >= primes_.size()) throw ScenarioError("prime index out of range");
    if (!(ymask & (1u << x))) return 0;
    return std::popcount(ymask & ((1u << x) - 1)) % 2 == 0 ? 1 : -1;
  }

  int omega(std::size_t x, const Level& y) const { return omega(x, support_mask(y)); }

  // Group elements.
  GroupElement ge_identity() const {
    return GroupElement{std::vector<std::uint32_t>(primes_.size(), 0)};
  }

  GroupElement sigma(std::size_t x) const {
    GroupElement g = ge_identity();
    g.e[x] = 1 % primes_[x].order;
    return g;
  }

  GroupElement frobenius(std::size_t x) const { return primes_[x].frob; }

  GroupElement ge_mul(const GroupElement& a, const GroupElement& b) const {
    GroupElement c = a;
    for (std::size_t i = 0; i < c.e.size(); ++i) c.e[i] = (c.e[i] + b.e[i]) % primes_[i].order;
    return c;
  }

  GroupElement ge_inv(const GroupElement& a) const {
    GroupElement c = a;
    for (std::size_t i = 0; i < c.e.size(); ++i)
      c.e[i] = c.e[i] == 0 ? 0 : primes_[i].order - c.e[i];
    return c;
  }

  GroupElement ge_pow(const GroupElement& a, long long k) const {
    GroupElement c = a;
    for (std::size_t i = 0; i < c.e.size(); ++i) {
      long long v = (static_cast<long long>(c.e[i]) * k) % primes_[i].order;
      if (v < 0) v += primes_[i].order;
      c.e[i] = static_cast<std::uint32_t>(v);
    }
    return c;
  }

  // Restriction of g to the stalk supported on mask: components elsewhere
  // become the identity.
  GroupElement ge_restrict(const GroupElement& a, std::uint32_t mask) const {
    GroupElement c = a;
    for (std::size_t i = 0; i < c.e.size(); ++i)
      if (!(mask & (1u << i))) c.e[i] = 0;
    return c;
  }

  // All elements of the product of layer groups over the masked primes, in
  // lexicographic exponent order.
  std::vector<GroupElement> group_elements(std::uint32_t mask) const {
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < primes_.size(); ++i)
      if (mask & (1u << i)) slots.push_back(i);
    std::vector<GroupElement> out;
    GroupElement g = ge_identity();
    for (;;) {
      out.push_back(g);
      std::size_t k = slots.size();
      while (k > 0) {
        std::size_t s = slots[k - 1];
        if (++g.e[s] < primes_[s].order) break;
        g.e[s] = 0;
        --k;
      }
      if (k == 0) break;
    }
    return out;
  }

  // Group ring.
  GroupRingElem gr_of(GroupElement g, TCoeff c) const {
    GroupRingElem e;
    e.add_term(std::move(g), std::move(c));
    return e;
  }

  GroupRingElem gr_add(const GroupRingElem& a, const GroupRingElem& b) const {
    GroupRingElem c = a;
    for (const auto& [g, t] : b.terms()) c.add_term(g, t);
    return c;
  }

  GroupRingElem gr_neg(const GroupRingElem& a) const {
    GroupRingElem c;
    for (const auto& [g, t] : a.terms()) c.add_term(g, t_neg(t));
    return c;
  }

  GroupRingElem gr_mul(const GroupRingElem& a, const GroupRingElem& b) const {
    GroupRingElem c;
    for (const auto& [ga, ta] : a.terms())
      for (const auto& [gb, tb] : b.terms()) c.add_term(ge_mul(ga, gb), t_mul(h_, ta, tb));
    return c;
  }

  GroupRingElem gr_scale(const GroupRingElem& a, const Int& k) const {
    GroupRingElem c;
    for (const auto& [g, t] : a.terms()) c.add_term(g, t_scale(t, k));
    return c;
  }

  // Substitution of a group element into a T-polynomial: sum of p_k g^k.
  GroupRingElem eval_poly(const std::vector<TCoeff>& p, const GroupElement& g) const {
    GroupRingElem out;
    for (std::size_t k = 0; k < p.size(); ++k)
      out.add_term(ge_pow(g, static_cast<long long>(k)), p[k]);
    return out;
  }

  // Sum of every element of the layer group at x.
  GroupRingElem norm_element(std::size_t x) const {
    GroupRingElem out;
    GroupElement g = ge_identity();
    for (std::uint32_t k = 0; k < primes_[x].order; ++k) {
      g.e[x] = k;
      out.add_term(g, t_one(h_));
    }
    return out;
  }

  // p(x; Fr_x^{-1}) and r_x(Fr_x^{-1}).
  GroupRingElem p_at_frob(std::size_t x) const {
    return eval_poly(primes_[x].p, ge_inv(primes_[x].frob));
  }

  GroupRingElem r_at_frob(std::size_t x) const {
    return eval_poly(primes_[x].r, ge_inv(primes_[x].frob));
  }

  // gamma at x: p(x;Fr^{-1}) minus |G| r_x(Fr^{-1}).
  GroupRingElem gamma(std::size_t x) const {
    return gr_add(p_at_frob(x), gr_neg(gr_scale(r_at_frob(x), Int(primes_[x].order))));
  }

 private:
  static Residue validate_modulus(Residue m) {
    if (m < 2) throw ScenarioError("modulus must be >= 2");
    return m;
  }

  // r_x(t) with m r_x(t) = p(x;t) - p(x;n t); every coordinate must divide
  // exactly.
  std::vector<TCoeff> derive_r(const std::string& id, const std::vector<TCoeff>& p,
                               const Int& n, std::uint32_t m) const {
    std::vector<TCoeff> r(p.size(), t_zero(h_));
    Int nk = 1;
    for (std::size_t k = 0; k < p.size(); ++k) {
      // coefficient of t^k in p(x;t) - p(x;n t) is p_k (1 - n^k)
      Int factor = 1 - nk;
      for (std::size_t i = 0; i < p[k].size(); ++i) {
        Int num = p[k][i] * factor;
        if (num % m != 0)
          throw ScenarioError("prime '" + id +
                              "': layer group order does not divide p(x;t) - p(x;n t); "
                              "cannot derive r_x");
        r[k][i] = num / m;
      }
      nk *= n;
    }
    return r;
  }

  Mod ring_;
  AbelianGroup h_;
  std::vector<Prime> primes_;
};

}  // namespace undlab::site
