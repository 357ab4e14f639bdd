#pragma once

// Scenario ingestion: JSON documents to SiteConfig, with structural errors
// reported as ScenarioError.  Mathematical validation happens in the Site
// constructor.

#include <undlab/site.hpp>

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>

namespace undlab::site {

namespace detail {

inline Int json_int(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number_integer())
    throw ScenarioError("scenario: " + where + " must be an integer");
  return Int(j.get<long long>());
}

inline std::uint32_t json_u32(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number_integer() || j.get<long long>() < 0)
    throw ScenarioError("scenario: " + where + " must be a nonnegative integer");
  return static_cast<std::uint32_t>(j.get<long long>());
}

// A T-coefficient: an array of integers over H; a bare integer is accepted
// as shorthand for a length-1 array when H is trivial.
inline TCoeff json_tcoeff(const nlohmann::json& j, const std::string& where) {
  TCoeff c;
  if (j.is_number_integer()) {
    c.push_back(json_int(j, where));
    return c;
  }
  if (!j.is_array()) throw ScenarioError("scenario: " + where + " must be an array");
  for (const auto& v : j) c.push_back(json_int(v, where));
  return c;
}

inline std::vector<TCoeff> json_poly(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw ScenarioError("scenario: " + where + " must be an array");
  std::vector<TCoeff> p;
  for (const auto& v : j) p.push_back(json_tcoeff(v, where));
  return p;
}

}  // namespace detail

inline SiteConfig scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ScenarioError("scenario: document must be an object");
  SiteConfig cfg;

  if (!j.contains("modulus")) throw ScenarioError("scenario: missing 'modulus'");
  Int m = detail::json_int(j.at("modulus"), "'modulus'");
  if (m < 2) throw ScenarioError("scenario: 'modulus' must be >= 2");
  cfg.modulus = static_cast<Residue>(m);

  if (j.contains("coefficient_group")) {
    const auto& cg = j.at("coefficient_group");
    if (!cg.is_array()) throw ScenarioError("scenario: 'coefficient_group' must be an array");
    for (const auto& v : cg)
      cfg.coefficient_group.push_back(detail::json_u32(v, "'coefficient_group' entry"));
  }

  if (!j.contains("primes") || !j.at("primes").is_array())
    throw ScenarioError("scenario: missing 'primes' array");
  for (const auto& pj : j.at("primes")) {
    if (!pj.is_object()) throw ScenarioError("scenario: prime entries must be objects");
    SiteConfig::PrimeConfig pc;
    if (!pj.contains("id") || !pj.at("id").is_string())
      throw ScenarioError("scenario: prime missing string 'id'");
    pc.id = pj.at("id").get<std::string>();
    const std::string where = "prime '" + pc.id + "'";

    if (!pj.contains("level")) throw ScenarioError("scenario: " + where + " missing 'level'");
    pc.level = detail::json_u32(pj.at("level"), where + " 'level'");
    if (!pj.contains("group_order"))
      throw ScenarioError("scenario: " + where + " missing 'group_order'");
    pc.order = detail::json_u32(pj.at("group_order"), where + " 'group_order'");
    if (!pj.contains("p_coeffs"))
      throw ScenarioError("scenario: " + where + " missing 'p_coeffs'");
    pc.p_coeffs = detail::json_poly(pj.at("p_coeffs"), where + " 'p_coeffs'");

    if (pj.contains("r_coeffs"))
      pc.r_coeffs = detail::json_poly(pj.at("r_coeffs"), where + " 'r_coeffs'");
    if (pj.contains("norm_hint"))
      pc.norm_hint = detail::json_int(pj.at("norm_hint"), where + " 'norm_hint'");

    if (pj.contains("frobenius")) {
      const auto& fr = pj.at("frobenius");
      if (!fr.is_object())
        throw ScenarioError("scenario: " + where + " 'frobenius' must be an object");
      for (const auto& [id, exp] : fr.items())
        pc.frobenius[id] = detail::json_u32(exp, where + " frobenius exponent");
    }
    cfg.primes.push_back(std::move(pc));
  }
  return cfg;
}

inline SiteConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError("malformed JSON in '" + path + "': " + e.what());
  }
  return scenario_from_json(j);
}

inline Site load_site(const std::string& path) { return Site(load_scenario(path)); }

}  // namespace undlab::site
