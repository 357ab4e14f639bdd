// Tests for the universal norm distribution: lambda and beta, the free
// presentation of U, inclusions, gamma, I_x, and the exact sequence.

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

using Catch::Matchers::ContainsSubstring;

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

// Two primes with the first Frobenius acting at the second prime.
us::Site site_pair(bool twist) {
  us::SiteConfig cfg;
  cfg.modulus = 3;
  auto p1 = prime_cfg("x1", 1, 3, one_minus_t(), Int(4));
  if (twist) p1.frobenius["x2"] = 1;
  cfg.primes.push_back(p1);
  cfg.primes.push_back(prime_cfg("x2", 1, 6, one_minus_t(), Int(7)));
  return us::Site(cfg);
}

// One prime at level 2 with a group of order 9.
us::Site site_deep() {
  us::SiteConfig cfg;
  cfg.modulus = 3;
  cfg.primes.push_back(prime_cfg("x", 2, 9, one_minus_t(), Int(10)));
  return us::Site(cfg);
}

// The two-prime shape over T = Z[C2].
us::Site site_pair_h2() {
  us::SiteConfig cfg;
  cfg.modulus = 3;
  cfg.coefficient_group = {2};
  std::vector<us::TCoeff> p{{Int(1), Int(0)}, {Int(-1), Int(0)}};
  cfg.primes.push_back(prime_cfg("x1", 1, 3, p, Int(4)));
  cfg.primes.push_back(prime_cfg("x2", 1, 6, p, Int(7)));
  return us::Site(cfg);
}

ud::AVector unit_symbol(const us::Site& s, const us::Level& zp, const us::GroupElement& g) {
  return ud::AVector::unit(ud::StalkSymbol{zp, g}, us::t_one(s.h()));
}

std::vector<Int> random_coords(std::mt19937& rng, std::size_t n) {
  std::uniform_int_distribution<int> entry(-4, 4);
  std::vector<Int> v(n);
  for (auto& x : v) x = entry(rng);
  return v;
}

}  // namespace

TEST_CASE("lambda on stalk symbols", "[dist]") {
  us::Site s = site_s1();

  // p(x;1) = 0, so lambda[1] = -N[x]: minus the sum of the three translates.
  ud::AVector img = ud::lambda_symbol(s, 0, ud::StalkSymbol{s.level_one(), s.ge_identity()});
  ud::AVector want;
  for (int k = 0; k < 3; ++k)
    want.add(ud::StalkSymbol{s.layer(0), s.ge_pow(s.sigma(0), k)}, us::TCoeff{Int(-1)});
  REQUIRE(img == want);

  // Symbols already divisible by x are outside the domain.
  REQUIRE_THROWS_AS(ud::lambda_symbol(s, 0, ud::StalkSymbol{s.layer(0), s.ge_identity()}),
                    us::ScenarioError);

  // A Frobenius acting at the other prime: lambda_x1 [x2] =
  // [x2] - Fr^{-1}[x2] - N_{x1}[x1 x2].
  us::Site tw = site_pair(true);
  ud::AVector img2 =
      ud::lambda_symbol(tw, 0, ud::StalkSymbol{tw.layer(1), tw.ge_identity()});
  ud::AVector want2;
  want2.add(ud::StalkSymbol{tw.layer(1), tw.ge_identity()}, us::TCoeff{Int(1)});
  want2.add(ud::StalkSymbol{tw.layer(1), tw.ge_inv(tw.frobenius(0))}, us::TCoeff{Int(-1)});
  for (int k = 0; k < 3; ++k)
    want2.add(ud::StalkSymbol{tw.level_full(), tw.ge_pow(tw.sigma(0), k)},
              us::TCoeff{Int(-1)});
  REQUIRE(img2 == want2);

  // lambda commutes with the group acting below its own prime.
  std::mt19937 rng(5);
  auto elems = tw.group_elements(0b10);
  for (const auto& g : elems) {
    ud::AVector base = unit_symbol(tw, tw.layer(1), tw.ge_identity());
    ud::AVector lhs = ud::lambda_map(tw, 0, ud::av_act_elem(tw, g, base));
    ud::AVector rhs = ud::av_act_elem(tw, g, ud::lambda_map(tw, 0, base));
    REQUIRE(lhs == rhs);
  }
}

TEST_CASE("beta composed with lambda is gamma", "[dist]") {
  for (const us::Site& s : {site_s1(), site_pair(false), site_pair(true), site_pair_h2()}) {
    for (std::size_t x = 0; x < s.prime_count(); ++x) {
      us::Level below = s.level_full();
      below.v[x] = 0;
      ud::SymbolBasis basis(s, below);
      for (std::size_t i = 0; i < basis.size(); ++i) {
        ud::AVector in = ud::AVector::unit(basis.symbol(i), us::t_one(s.h()));
        ud::AVector through = ud::beta_map(s, x, ud::lambda_map(s, x, in));
        ud::AVector direct = ud::av_act(s, s.gamma(x), in);
        REQUIRE(through == direct);
      }
    }
  }
}

TEST_CASE("beta commutes with lambda at other primes", "[dist]") {
  for (const us::Site& s : {site_pair(false), site_pair(true), site_pair_h2()}) {
    // beta at x1, lambda at x2: both composites A_{z/z(x2)} -> A_{z/z(x1)}.
    us::Level dom = s.level_full();
    dom.v[1] = 0;
    ud::SymbolBasis basis(s, dom);
    for (std::size_t i = 0; i < basis.size(); ++i) {
      ud::AVector in = ud::AVector::unit(basis.symbol(i), us::t_one(s.h()));
      ud::AVector lhs = ud::beta_map(s, 0, ud::lambda_map(s, 1, in));
      ud::AVector rhs = ud::lambda_map(s, 1, ud::beta_map(s, 0, in));
      REQUIRE(lhs == rhs);
    }
  }
}

TEST_CASE("U presentation ranks and reduction", "[dist]") {
  us::Site s = site_s1();

  ud::UPresentation u1(s, s.level_one());
  REQUIRE(u1.rank_z() == 1);
  REQUIRE(u1.basis().dim() == 1);

  ud::UPresentation ux_(s, s.level_full());
  REQUIRE(ux_.rank_z() == 3);

  // The norm relation: N[x] reduces to zero, [1] does not.
  ud::AVector norm_vec = ud::av_act(s, s.norm_element(0),
                                    unit_symbol(s, s.layer(0), s.ge_identity()));
  auto z3 = ux_.reduce(norm_vec);
  REQUIRE(std::all_of(z3.begin(), z3.end(), [](const Int& v) { return v == 0; }));
  REQUIRE(ux_.in_relations(norm_vec));
  auto one_coords = ux_.reduce(unit_symbol(s, s.level_one(), s.ge_identity()));
  REQUIRE(!std::all_of(one_coords.begin(), one_coords.end(),
                       [](const Int& v) { return v == 0; }));

  // reduce after lift is the identity; lift after reduce differs by a relation.
  std::mt19937 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto u = random_coords(rng, ux_.rank_z());
    REQUIRE(ux_.reduce(ux_.lift(u)) == u);
    ud::AVector v = ux_.basis().sparse(random_coords(rng, ux_.basis().dim()));
    REQUIRE(ux_.in_relations(ud::av_sub(ux_.lift(ux_.reduce(v)), v)));
  }

  // Ranks multiply across coprime supports.
  us::Site pair = site_pair(true);
  ud::UPresentation ua(pair, pair.layer(0));
  ud::UPresentation ub(pair, pair.layer(1));
  ud::UPresentation uab(pair, pair.level_full());
  REQUIRE(ua.rank_z() == 3);
  REQUIRE(ub.rank_z() == 6);
  REQUIRE(uab.rank_z() == ua.rank_z() * ub.rank_z());

  // A level-2 prime with a single order-9 layer group.
  us::Site deep = site_deep();
  ud::UPresentation udeep(deep, deep.level_full());
  REQUIRE(udeep.rank_z() == 9);

  // Over T = Z[C2] the Z-rank doubles and the T-rank matches the Z case.
  us::Site h2 = site_pair_h2();
  ud::UPresentation uh(h2, h2.level_full());
  REQUIRE(uh.rank_z() == 36);
  REQUIRE(uh.rank_t() == 18);
}

TEST_CASE("inclusions are primitive embeddings", "[dist]") {
  us::Site s = site_pair(true);
  ud::UPresentation u1(s, s.level_one());
  ud::UPresentation ua(s, s.layer(0));
  ud::UPresentation ub(s, s.layer(1));
  ud::UPresentation uab(s, s.level_full());

  // Identity inclusion.
  REQUIRE(ud::include_U(ua, ua) == ux::IntMatrix::identity(ua.rank_z()));

  // [1] maps to [1].
  ux::IntMatrix i1a = ud::include_U(u1, ua);
  REQUIRE(ux::apply(i1a, u1.reduce(unit_symbol(s, s.level_one(), s.ge_identity()))) ==
          ua.reduce(unit_symbol(s, s.level_one(), s.ge_identity())));

  for (const auto* pr : {&ua, &ub}) {
    ux::IntMatrix m = ud::include_U(*pr, uab);
    auto snf = ux::smith_normal_form(m);
    REQUIRE(snf.rank() == pr->rank_z());
    for (std::size_t i = 0; i < snf.rank(); ++i) REQUIRE(snf.diag[i] == 1);
    REQUIRE(ux::rank_q(m) == pr->rank_z());
  }

  // Non-stalk pairs are rejected.
  REQUIRE_THROWS_AS(ud::include_U(uab, ua), us::ScenarioError);
}

TEST_CASE("gamma endomorphism and Kolyvagin condition 3", "[dist]") {
  us::Site s = site_s1();
  ud::UPresentation u1(s, s.level_one());
  ux::IntMatrix g = ud::gamma_endo(s, 0, u1);
  REQUIRE(g.rows() == 1);
  REQUIRE(g.get(0, 0) == -3);
  REQUIRE(ux::determinant(g) == -3);

  // gamma on U_{x2} for the twisted pair is 1 - 4 Fr^{-1}, still injective.
  us::Site tw = site_pair(true);
  ud::UPresentation ub(tw, tw.layer(1));
  ux::IntMatrix g2 = ud::gamma_endo(tw, 0, ub);
  REQUIRE(ux::rank_q(g2) == ub.rank_z());

  // Explicit r = 0 with identity Frobenius gives gamma = p(1) = 0: rejected.
  us::SiteConfig cfg;
  cfg.modulus = 3;
  auto pc = prime_cfg("x", 1, 3, one_minus_t(), Int(4));
  pc.r_coeffs = std::vector<us::TCoeff>{{Int(0)}};
  cfg.primes.push_back(pc);
  us::Site bad{cfg};
  ud::UPresentation bad_u1(bad, bad.level_one());
  REQUIRE_THROWS_WITH(ud::gamma_endo(bad, 0, bad_u1),
                      ContainsSubstring("Kolyvagin condition 3"));

  // gamma acts below its own prime only.
  ud::UPresentation ufull(s, s.level_full());
  REQUIRE_THROWS_AS(ud::gamma_endo(s, 0, ufull), us::ScenarioError);
}

TEST_CASE("I_x membership", "[dist]") {
  us::Site s = site_s1();
  ud::UPresentation u(s, s.level_full());
  ud::IxSubmodule ix = ud::build_Ix(s, 0, u);

  // (sigma - 1)[x] lies in I_x over Z.
  ud::AVector xsym = unit_symbol(s, s.layer(0), s.ge_identity());
  ud::AVector sx = ud::av_sub(ud::av_act_elem(s, s.sigma(0), xsym), xsym);
  REQUIRE(ix.contains_z(u.reduce(sx)));

  // (sigma - 1)u for random classes u.
  std::mt19937 rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    ud::AVector v = u.lift(random_coords(rng, u.rank_z()));
    ud::AVector sv = ud::av_sub(ud::av_act_elem(s, s.sigma(0), v), v);
    REQUIRE(ix.contains_z(u.reduce(sv)));
    REQUIRE(ix.contains_mod(u.reduce(sv), s.ring()));
  }

  // U/I_x is Z/3 generated by the class of [1].
  ud::AVector one = unit_symbol(s, s.level_one(), s.ge_identity());
  REQUIRE(!ix.contains_z(u.reduce(one)));
  REQUIRE(!ix.contains_mod(u.reduce(one), s.ring()));
  REQUIRE(ix.contains_z(u.reduce(ud::av_scale(one, Int(3)))));

  // r(Fr^{-1})[1] - g[x] is a generator, so [1] - [sigma x] is in I_x.
  ud::AVector gen = ud::av_sub(one, unit_symbol(s, s.layer(0), s.sigma(0)));
  REQUIRE(ix.contains_z(u.reduce(gen)));

  REQUIRE_THROWS_AS(ud::build_Ix(s, 0, ud::UPresentation(s, s.level_one())),
                    us::ScenarioError);
}

TEST_CASE("exact sequence at each prime", "[dist]") {
  // Smallest instance: z = z(x), so the left module is U_1 = T.
  us::Site s = site_s1();
  ud::ExactReport r1 = ud::check_exact(s, 0, s.level_full());
  CAPTURE(r1.detail);
  REQUIRE(r1.gamma_injective);
  REQUIRE(r1.image_in_kernel);
  REQUIRE(r1.kernel_in_image);
  REQUIRE(r1.surjective);
  REQUIRE(r1.ok());

  // Both primes of the twisted pair at full level.
  us::Site tw = site_pair(true);
  for (std::size_t x = 0; x < 2; ++x) {
    ud::ExactReport rep = ud::check_exact(tw, x, tw.level_full());
    CAPTURE(x, rep.detail);
    REQUIRE(rep.ok());
  }

  // Level-2 prime.
  us::Site deep = site_deep();
  REQUIRE(ud::check_exact(deep, 0, deep.level_full()).ok());
}
