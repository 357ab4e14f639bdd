#pragma once

// Exact integer arithmetic used everywhere else: arbitrary-precision
// integers plus the handful of number-theoretic helpers the normal-form
// algorithms need.

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace undlab {

using Int = boost::multiprecision::cpp_int;

// Residues mod M live in [0, M).  M is capped well below 2^63 so that
// products fit in unsigned __int128 without overflow.
using Residue = std::uint64_t;

inline Int gcd_int(Int a, Int b) {
  if (a < 0) a = -a;
  if (b < 0) b = -b;
  while (b != 0) {
    Int t = a % b;
    a = b;
    b = t;
  }
  return a;
}

// Extended gcd: returns g >= 0 and (s, t) with s*a + t*b = g.
struct XGcd {
  Int g, s, t;
};

inline XGcd xgcd(const Int& a, const Int& b) {
  Int old_r = a, r = b;
  Int old_s = 1, s = 0;
  Int old_t = 0, t = 1;
  while (r != 0) {
    Int q = old_r / r;
    Int tmp = old_r - q * r;
    old_r = r;
    r = tmp;
    tmp = old_s - q * s;
    old_s = s;
    s = tmp;
    tmp = old_t - q * t;
    old_t = t;
    t = tmp;
  }
  if (old_r < 0) {
    old_r = -old_r;
    old_s = -old_s;
    old_t = -old_t;
  }
  return {old_r, old_s, old_t};
}

// Arithmetic on Z/M with M in [2, 2^31).
class Mod {
 public:
  explicit Mod(Residue m) : m_(m) {
    if (m < 2) throw std::invalid_argument("modulus must be >= 2");
    if (m >= (Residue{1} << 31))
      throw std::invalid_argument("modulus too large for residue arithmetic");
  }

  Residue modulus() const { return m_; }

  Residue reduce(const Int& v) const {
    Int r = v % Int(m_);
    if (r < 0) r += Int(m_);
    return static_cast<Residue>(r);
  }
  Residue reduce_ll(long long v) const {
    long long r = v % static_cast<long long>(m_);
    if (r < 0) r += static_cast<long long>(m_);
    return static_cast<Residue>(r);
  }

  Residue add(Residue a, Residue b) const {
    Residue s = a + b;
    return s >= m_ ? s - m_ : s;
  }
  Residue sub(Residue a, Residue b) const { return a >= b ? a - b : a + m_ - b; }
  Residue neg(Residue a) const { return a == 0 ? 0 : m_ - a; }
  Residue mul(Residue a, Residue b) const {
    return static_cast<Residue>((static_cast<unsigned __int128>(a) * b) % m_);
  }

  static Residue gcd_u(Residue a, Residue b) {
    while (b != 0) {
      Residue t = a % b;
      a = b;
      b = t;
    }
    return a;
  }

  // Inverse of a unit; throws if gcd(a, M) != 1.
  Residue inv(Residue a) const {
    XGcd e = xgcd(Int(a), Int(m_));
    if (e.g != 1) throw std::domain_error("not a unit mod M");
    Int s = e.s % Int(m_);
    if (s < 0) s += Int(m_);
    return static_cast<Residue>(s);
  }

  // Unit u with u*a == gcd(a, M) (mod M).  Pivot normalization for the
  // Howell form; a == 0 yields u == 1.
  Residue unit_for(Residue a) const {
    a %= m_;
    if (a == 0) return 1;
    Residue g = gcd_u(a, m_);
    Residue mp = m_ / g;  // >= 2 because g <= a < M
    // a/g is a unit mod M/g; lift its inverse to a unit mod M.  Some
    // translate u0 + k*(M/g), 0 <= k < g, is coprime to M.
    Residue u = Mod(mp).inv((a / g) % mp);
    while (gcd_u(u, m_) != 1) u += mp;
    return u;
  }

 private:
  Residue m_;
};

}  // namespace undlab
