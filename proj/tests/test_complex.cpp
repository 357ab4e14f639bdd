// Tests for Anderson's resolution, the windowed double complex, the bar
// complex with the augmentation u, and the S/Q splitting.

#include <undlab/complexes.hpp>
#include <undlab/distribution.hpp>
#include <undlab/exactlin.hpp>
#include <undlab/site.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <vector>

using undlab::Int;
namespace us = undlab::site;
namespace ud = undlab::dist;
namespace ux = undlab::exactlin;
namespace uc = undlab::cx;

namespace {

us::SiteConfig::PrimeConfig prime_cfg(std::string id, std::uint32_t level, std::uint32_t order,
                                      std::vector<us::TCoeff> p, Int norm_hint) {
  us::SiteConfig::PrimeConfig pc;
  pc.id = std::move(id);
  pc.level = level;
  pc.order = order;
  pc.p_coeffs = std::move(p);
  pc.norm_hint = norm_hint;
  return pc;
}

std::vector<us::TCoeff> one_minus_t() { return {{Int(1)}, {Int(-1)}}; }

us::Site site_s1() {
  us::SiteConfig cfg;
  cfg.modulus = 3;
  cfg.primes.push_back(prime_cfg("x", 1, 3, one_minus_t(), Int(4)));
  return us::Site(cfg);
}

us::Site site_pair(bool twist) {
  us::SiteConfig cfg;
  cfg.modulus = 3;
  auto p1 = prime_cfg("x1", 1, 3, one_minus_t(), Int(4));
  if (twist) p1.frobenius["x2"] = 1;
  cfg.primes.push_back(p1);
  cfg.primes.push_back(prime_cfg("x2", 1, 6, one_minus_t(), Int(7)));
  return us::Site(cfg);
}

us::Site site_deep() {
  us::SiteConfig cfg;
  cfg.modulus = 3;
  cfg.primes.push_back(prime_cfg("x", 2, 9, one_minus_t(), Int(10)));
  return us::Site(cfg);
}

us::Site site_pair_h2() {
  us::SiteConfig cfg;
  cfg.modulus = 3;
  cfg.coefficient_group = {2};
  std::vector<us::TCoeff> p{{Int(1), Int(0)}, {Int(-1), Int(0)}};
  cfg.primes.push_back(prime_cfg("x1", 1, 3, p, Int(4)));
  cfg.primes.push_back(prime_cfg("x2", 1, 6, p, Int(7)));
  return us::Site(cfg);
}

us::Level lv(std::vector<std::uint32_t> v) { return us::Level{std::move(v)}; }

ud::AVector unit_symbol(const us::Site& s, const us::Level& zp, const us::GroupElement& g) {
  return ud::AVector::unit(ud::StalkSymbol{zp, g}, us::t_one(s.h()));
}

// Random chain supported on one block family of the resolution.
ud::AVector random_avector(std::mt19937& rng, const ud::SymbolBasis& basis) {
  std::uniform_int_distribution<int> entry(-3, 3);
  std::vector<Int> v(basis.dim());
  for (auto& x : v) x = entry(rng);
  return basis.sparse(v);
}

bool t_all_divisible(const us::TCoeff& t, const Int& m) {
  for (const auto& c : t)
    if (c % m != 0) return false;
  return true;
}

}  // namespace

TEST_CASE("differential of the resolution", "[cx]") {
  us::Site s = site_s1();

  // d[1, x] = p(x;1)[1] - N[x] = -N[x] since p = 1 - t kills the identity.
  uc::LChain c;
  c.emplace(0b1u, unit_symbol(s, s.level_one(), s.ge_identity()));
  uc::LChain img = uc::d_L(s, c);
  REQUIRE(img.size() == 1);
  ud::AVector want;
  for (int k = 0; k < 3; ++k)
    want.add(ud::StalkSymbol{s.layer(0), s.ge_pow(s.sigma(0), k)}, us::TCoeff{Int(-1)});
  REQUIRE(img.at(0) == want);

  // Degree-0 chains are annihilated: the sum over x | y is empty.
  uc::LChain flat;
  flat.emplace(0u, unit_symbol(s, s.layer(0), s.sigma(0)));
  REQUIRE(uc::d_L(s, flat).empty());

  // d squares to zero on random chains over every y-block of a two-prime
  // structure.
  us::Site tw = site_pair(true);
  std::mt19937 rng(11);
  for (std::uint32_t y : {0b11u, 0b01u, 0b10u}) {
    us::Level below = tw.level_full();
    for (std::size_t i = 0; i < 2; ++i)
      if (y & (1u << i)) below.v[i] = 0;
    ud::SymbolBasis basis(tw, below);
    for (int trial = 0; trial < 4; ++trial) {
      uc::LChain chain;
      chain.emplace(y, random_avector(rng, basis));
      REQUIRE(uc::d_L(tw, uc::d_L(tw, chain)).empty());
    }
  }
}

TEST_CASE("resolution verification", "[cx]") {
  // One prime: H^{-1} vanishes and H^0 is U of rank 3.
  {
    us::Site s = site_s1();
    uc::ResolutionReport rep = uc::verify_resolution(s, s.layer(0));
    REQUIRE(rep.ok());
    REQUIRE(rep.vanishing.size() == 1);
    REQUIRE(rep.vanishing[0].first == -1);
  }

  // Trivial level: the complex is concentrated in degree 0.
  {
    us::Site s = site_s1();
    uc::ResolutionReport rep = uc::verify_resolution(s, s.level_one());
    REQUIRE(rep.ok());
    REQUIRE(rep.vanishing.empty());
  }

  // Two primes with a twist: acyclic at degrees -1 and -2.
  {
    us::Site tw = site_pair(true);
    uc::ResolutionReport rep = uc::verify_resolution(tw, tw.level_full());
    REQUIRE(rep.ok());
    REQUIRE(rep.vanishing.size() == 2);
  }

  // A level-2 prime and a nontrivial coefficient ring.
  {
    us::Site dp = site_deep();
    REQUIRE(uc::verify_resolution(dp, dp.layer(0)).ok());
    us::Site h2 = site_pair_h2();
    REQUIRE(uc::verify_resolution(h2, h2.level_full()).ok());
  }
}

TEST_CASE("double complex differentials", "[cx]") {
  us::Site s = site_s1();
  uc::KComplex K(s, s.layer(0), uc::default_window(s, s.layer(0)));
  REQUIRE(K.window().lo == -2);
  REQUIRE(K.window().hi == 2);
  REQUIRE(K.dim_of_degree(-1) == 1);
  REQUIRE(K.dim_of_degree(0) == 5);
  REQUIRE(K.dim_of_degree(1) == 5);
  REQUIRE(K.dim_of_degree(2) == 5);

  uc::BlockKey base{0u, lv({0})};
  uc::BlockKey wx{0u, lv({1})};
  uc::BlockKey wxx{0u, lv({2})};

  // delta on the trivial stalk at even parity evaluates to the zero chain:
  // sigma restricts to the identity there.
  uc::KChain triv;
  triv.add(base, unit_symbol(s, s.level_one(), s.ge_identity()));
  REQUIRE(K.delta_x(0, triv).is_zero());

  // delta on a stalk-x symbol at even parity is [x] - [sigma x] one w up.
  uc::KChain stx;
  stx.add(base, unit_symbol(s, s.layer(0), s.ge_identity()));
  uc::KChain img = K.delta_x(0, stx);
  uc::KChain want;
  ud::AVector diff = unit_symbol(s, s.layer(0), s.ge_identity());
  diff = ud::av_sub(diff, unit_symbol(s, s.layer(0), s.sigma(0)));
  want.add(wx, diff);
  REQUIRE(img == want);

  // Odd parity applies the norm: on the trivial stalk this is multiplication
  // by the group order.
  uc::KChain triv1;
  triv1.add(wx, unit_symbol(s, s.level_one(), s.ge_identity()));
  uc::KChain img2 = K.delta_x(0, triv1);
  uc::KChain want2;
  want2.add(wxx, ud::av_scale(unit_symbol(s, s.level_one(), s.ge_identity()), Int(3)));
  REQUIRE(img2 == want2);

  // Odd parity on a stalk-x symbol sums the full orbit.
  uc::KChain stx1;
  stx1.add(wx, unit_symbol(s, s.layer(0), s.ge_identity()));
  uc::KChain img3 = K.delta_x(0, stx1);
  ud::AVector orbit;
  for (int k = 0; k < 3; ++k)
    orbit = ud::av_add(orbit, unit_symbol(s, s.layer(0), s.ge_pow(s.sigma(0), k)));
  uc::KChain want3;
  want3.add(wxx, orbit);
  REQUIRE(img3 == want3);

  // d_x on [1, x, 1] is -N[x, 1, 1]: the p-part drops since p(x;1) = 0.
  uc::KChain top;
  top.add(uc::BlockKey{0b1u, lv({0})}, unit_symbol(s, s.level_one(), s.ge_identity()));
  uc::KChain img4 = K.d_x(0, top);
  uc::KChain want4;
  want4.add(base, ud::av_neg(orbit));
  REQUIRE(img4 == want4);

  // d_x ignores blocks whose y does not contain x.
  REQUIRE(K.d_x(0, stx).is_zero());

  // Sign pinning on two primes: the y-parity sign of delta_{x2} past x1,
  // and the w-parity sign of d_{x2} past a power of x1.
  us::Site tw = site_pair(true);
  uc::KComplex Kt(tw, tw.level_full(), uc::default_window(tw, tw.level_full()));

  uc::KChain c5;
  c5.add(uc::BlockKey{0b01u, lv({0, 0})}, unit_symbol(tw, tw.layer(1), tw.ge_identity()));
  uc::KChain img5 = Kt.delta_x(1, c5);
  uc::KChain want5;
  ud::AVector flip = unit_symbol(tw, tw.layer(1), tw.sigma(1));
  flip = ud::av_sub(flip, unit_symbol(tw, tw.layer(1), tw.ge_identity()));
  want5.add(uc::BlockKey{0b01u, lv({0, 1})}, flip);
  REQUIRE(img5 == want5);

  // omega(x2, x1x2) = -1 and the w-sign past x1^1 is -1: they cancel.
  uc::KChain c6;
  c6.add(uc::BlockKey{0b11u, lv({1, 0})}, unit_symbol(tw, tw.level_one(), tw.ge_identity()));
  uc::KChain img6 = Kt.d_x(1, c6);
  ud::AVector norm2;
  for (int k = 0; k < 6; ++k)
    norm2 = ud::av_add(norm2, unit_symbol(tw, tw.layer(1), tw.ge_pow(tw.sigma(1), k)));
  uc::KChain want6;
  want6.add(uc::BlockKey{0b01u, lv({1, 0})}, ud::av_neg(norm2));
  REQUIRE(img6 == want6);

  // Without the w-power the sign flips.
  uc::KChain c7;
  c7.add(uc::BlockKey{0b11u, lv({0, 0})}, unit_symbol(tw, tw.level_one(), tw.ge_identity()));
  uc::KChain img7 = Kt.d_x(1, c7);
  uc::KChain want7;
  want7.add(uc::BlockKey{0b01u, lv({0, 0})}, norm2);
  REQUIRE(img7 == want7);
}

TEST_CASE("matrix of the total differential", "[cx]") {
  us::Site s = site_pair(true);
  uc::KComplex K(s, s.level_full(), uc::default_window(s, s.level_full()));
  std::mt19937 rng(23);
  std::uniform_int_distribution<int> entry(-3, 3);

  for (int n : {-1, 0}) {
    ux::IntMatrix m = K.matrix_total(n);
    REQUIRE(m.rows() == K.dim_of_degree(n + 1));
    REQUIRE(m.cols() == K.dim_of_degree(n));
    for (int trial = 0; trial < 3; ++trial) {
      std::vector<Int> v(K.dim_of_degree(n));
      for (auto& x : v) x = entry(rng);
      uc::KChain c = K.sparse_degree(v, n);
      REQUIRE(K.dense_degree(c, n) == v);
      REQUIRE(ux::apply(m, v) == K.dense_degree(K.total(c), n + 1));
    }
  }
}

TEST_CASE("differentials anticommute inside the window", "[cx]") {
  {
    us::Site s = site_s1();
    uc::KComplex K(s, s.layer(0), uc::default_window(s, s.layer(0)));
    uc::AnticommuteReport rep = uc::verify_anticommute(K);
    REQUIRE(rep.passed);
    REQUIRE(rep.counterexample.empty());
    REQUIRE(rep.checked > 0);
    REQUIRE(rep.skipped > 0);
  }
  {
    us::Site tw = site_pair(true);
    uc::KComplex K(tw, tw.level_full(), uc::default_window(tw, tw.level_full()));
    uc::AnticommuteReport rep = uc::verify_anticommute(K);
    REQUIRE(rep.passed);
    REQUIRE(rep.checked > 0);
  }
  {
    us::Site h2 = site_pair_h2();
    uc::KComplex K(h2, h2.level_full(), uc::Window{-1, 1});
    uc::AnticommuteReport rep = uc::verify_anticommute(K);
    REQUIRE(rep.passed);
    REQUIRE(rep.checked > 0);
  }
  {
    // An empty window passes vacuously.
    us::Site s = site_s1();
    uc::KComplex K(s, s.layer(0), uc::Window{1, 0});
    uc::AnticommuteReport rep = uc::verify_anticommute(K);
    REQUIRE(rep.passed);
    REQUIRE(rep.checked == 0);
  }
}

TEST_CASE("window faults on escaping images", "[cx]") {
  us::Site s = site_s1();
  uc::KComplex K(s, s.layer(0), uc::Window{-2, 0});

  // A zero image never faults even when its target block is outside.
  uc::KChain triv;
  triv.add(uc::BlockKey{0u, lv({0})}, unit_symbol(s, s.level_one(), s.ge_identity()));
  REQUIRE_NOTHROW(K.delta_x(0, triv));

  // A nonzero image leaving the window faults.
  uc::KChain stx;
  stx.add(uc::BlockKey{0u, lv({0})}, unit_symbol(s, s.layer(0), s.ge_identity()));
  REQUIRE_THROWS_AS(K.delta_x(0, stx), uc::WindowExceeded);

  // Degree -1 stays assemblable; degree 0 hits the cutoff.
  REQUIRE_NOTHROW(K.matrix_total(-1));
  REQUIRE_THROWS_AS(K.matrix_total(0), uc::WindowExceeded);
}

TEST_CASE("augmentation to the bar complex", "[cx]") {
  us::Site s = site_s1();
  ud::UPresentation u(s, s.layer(0));

  // u keeps the y = 1 part and forgets nothing else of it.
  uc::KChain c;
  c.add(uc::BlockKey{0u, lv({0})}, unit_symbol(s, s.level_one(), s.ge_identity()));
  c.add(uc::BlockKey{0b1u, lv({0})}, unit_symbol(s, s.level_one(), s.ge_identity()));
  uc::BarChain bar = uc::u_map(c);
  REQUIRE(bar.size() == 1);
  REQUIRE(bar.begin()->first == lv({0}));
  REQUIRE(uc::bar_to_U(u, bar) == u.reduce(unit_symbol(s, s.level_one(), s.ge_identity())));

  // A pure y != 1 chain dies and maps to zero in U.
  uc::KChain cy;
  cy.add(uc::BlockKey{0b1u, lv({0})}, unit_symbol(s, s.level_one(), s.ge_identity()));
  REQUIRE(uc::u_map(cy).empty());
  std::vector<Int> zero = uc::bar_to_U(u, uc::u_map(cy));
  for (const auto& v : zero) REQUIRE(v == 0);

  // Chains with w-degree above 0 have no image in U.
  uc::BarChain high;
  uc::bar_accum(high, lv({1}), unit_symbol(s, s.layer(0), s.ge_identity()));
  REQUIRE_THROWS_AS(uc::bar_to_U(u, high), us::ScenarioError);
}

TEST_CASE("bar differential respects the relations", "[cx]") {
  for (bool pair : {false, true}) {
    us::Site s = pair ? site_pair(true) : site_s1();
    us::Level z = pair ? s.level_full() : s.layer(0);
    ud::UPresentation u(s, z);

    for (std::size_t xr = 0; xr < s.prime_count(); ++xr) {
      us::Level below = z;
      below.v[xr] = 0;
      ud::SymbolBasis basis(s, below);
      for (std::size_t i = 0; i < basis.size(); ++i) {
        ud::AVector rel = ud::lambda_symbol(s, xr, basis.symbol(i));
        // Both delta parities must send the relation back into the lattice.
        for (const us::Level& w : {us::Level{std::vector<std::uint32_t>(s.prime_count(), 0)},
                                   s.layer(xr)}) {
          uc::BarChain chain;
          uc::bar_accum(chain, w, rel);
          for (std::size_t x = 0; x < s.prime_count(); ++x) {
            uc::BarChain img = uc::bar_delta_x(s, x, chain);
            for (const auto& [wk, v] : img) REQUIRE(u.in_relations(v));
          }
        }
      }
    }
  }
}

TEST_CASE("bar differentials square to zero and anticommute", "[cx]") {
  us::Site s = site_pair(true);
  ud::SymbolBasis basis(s, s.level_full());
  std::mt19937 rng(37);
  std::uniform_int_distribution<std::uint32_t> wexp(0, 2);

  for (int trial = 0; trial < 6; ++trial) {
    uc::BarChain chain;
    uc::bar_accum(chain, lv({wexp(rng), wexp(rng)}), random_avector(rng, basis));
    for (std::size_t x = 0; x < 2; ++x)
      REQUIRE(uc::bar_delta_x(s, x, uc::bar_delta_x(s, x, chain)).empty());
    uc::BarChain sum = uc::bar_delta_x(s, 0, uc::bar_delta_x(s, 1, chain));
    for (const auto& [w, v] : uc::bar_delta_x(s, 1, uc::bar_delta_x(s, 0, chain)))
      uc::bar_accum(sum, w, v);
    REQUIRE(sum.empty());
  }
}

TEST_CASE("projection onto the canonical quotient", "[cx]") {
  us::Site s = site_s1();
  uc::KComplex K(s, s.layer(0), uc::default_window(s, s.layer(0)));

  // [1, y, w] with y | supp(w) is retained with its coefficient.
  uc::KChain keep;
  keep.add(uc::BlockKey{0b1u, lv({1})}, unit_symbol(s, s.level_one(), s.ge_identity()));
  uc::QChain q = uc::project_Q(s, keep);
  REQUIRE(q.size() == 1);
  REQUIRE(q.begin()->first == uc::BlockKey{0b1u, lv({1})});
  REQUIRE(q.begin()->second == us::t_one(s.h()));

  // Nontrivial stalks or group translates span S and die.
  us::Site tw = site_pair(true);
  uc::KChain kill;
  kill.add(uc::BlockKey{0b01u, lv({1, 0})}, unit_symbol(tw, tw.layer(1), tw.sigma(1)));
  REQUIRE(uc::project_Q(tw, kill).empty());

  // y not dividing the support of w dies even on the trivial symbol.
  uc::KChain offw;
  offw.add(uc::BlockKey{0b1u, lv({0})}, unit_symbol(s, s.level_one(), s.ge_identity()));
  REQUIRE(uc::project_Q(s, offw).empty());

  // The induced differentials on Q vanish mod M on every retained generator.
  for (int which = 0; which < 2; ++which) {
    const us::Site& ss = which == 0 ? s : tw;
    us::Level z = which == 0 ? ss.layer(0) : ss.level_full();
    uc::KComplex KK(ss, z, uc::default_window(ss, z));
    std::size_t checked = 0;
    for (const auto& b : KK.blocks()) {
      if (b.y & ~ss.support_mask(b.w)) continue;
      uc::KChain gen;
      gen.add(b, unit_symbol(ss, ss.level_one(), ss.ge_identity()));
      uc::KChain image;
      try {
        image = KK.total(gen);
      } catch (const uc::WindowExceeded&) {
        continue;
      }
      ++checked;
      for (const auto& [bk, t] : uc::project_Q(ss, image))
        REQUIRE(t_all_divisible(t, Int(ss.modulus())));
    }
    REQUIRE(checked > 0);
  }
}

TEST_CASE("window containment for low degrees", "[cx]") {
  std::vector<us::Site> sites;
  sites.push_back(site_s1());
  sites.push_back(site_pair(true));
  sites.push_back(site_deep());
  sites.push_back(site_pair_h2());

  for (const us::Site& s : sites) {
    us::Level z = s.prime_count() == 1 ? s.layer(0) : s.level_full();
    uc::KComplex K(s, z, uc::default_window(s, z));

    // Boundary probe: blocks in degrees -1..1 with w-excess at most one are
    // reachable from degree-0 data, and one more differential stays inside.
    std::size_t probed = 0;
    for (const auto& b : K.blocks()) {
      int deg = uc::block_degree(b);
      if (deg < -1 || deg > 1) continue;
      if (uc::deg_w(b.w) > std::popcount(b.y) + 1) continue;
      const ud::SymbolBasis& basis = K.block_basis(b.y);
      for (std::size_t j = 0; j < basis.dim(); ++j) {
        REQUIRE_NOTHROW(K.total(K.unit(b, j)));
        ++probed;
      }
    }
    REQUIRE(probed > 0);

    // Two steps from balanced degree-0 blocks never leave the window.
    for (const auto& b : K.blocks()) {
      if (uc::block_degree(b) != 0 || uc::deg_w(b.w) != std::popcount(b.y)) continue;
      const ud::SymbolBasis& basis = K.block_basis(b.y);
      for (std::size_t j = 0; j < basis.dim(); ++j) {
        uc::KChain once;
        REQUIRE_NOTHROW(once = K.total(K.unit(b, j)));
        REQUIRE_NOTHROW(K.total(once));
      }
    }
  }
}
