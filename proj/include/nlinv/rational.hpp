#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nlinv {

using Integer = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

inline Integer num(const Rational& r) { return boost::multiprecision::numerator(r); }
inline Integer den(const Rational& r) { return boost::multiprecision::denominator(r); }

inline bool is_integer(const Rational& r) { return den(r) == 1; }

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

/// Floor of an exact rational.
inline Integer floor_int(const Rational& r) {
  Integer q = num(r) / den(r);  // truncates toward zero
  if (num(r) < 0 && q * den(r) != num(r)) q -= 1;
  return q;
}

/// `p/q`, or just `p` when the denominator is one.
inline std::string to_string(const Rational& r) {
  if (is_integer(r)) return num(r).str();
  return num(r).str() + "/" + den(r).str();
}

/// Parses `p`, `p/q` or a plain decimal such as `-0.25`.
inline Rational parse_rational(std::string_view text) {
  std::string s(text);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  if (s.empty()) throw std::invalid_argument("empty rational literal");
  try {
    if (auto slash = s.find('/'); slash != std::string::npos) {
      Integer p(s.substr(0, slash));
      Integer q(s.substr(slash + 1));
      if (q == 0) throw std::invalid_argument("zero denominator in '" + s + "'");
      return Rational(p, q);
    }
    if (auto dot = s.find('.'); dot != std::string::npos) {
      bool neg = !s.empty() && s[0] == '-';
      std::string whole = s.substr(neg ? 1 : 0, dot - (neg ? 1 : 0));
      std::string frac = s.substr(dot + 1);
      if (whole.empty()) whole = "0";
      Integer scale = 1;
      for (std::size_t i = 0; i < frac.size(); ++i) scale *= 10;
      Integer digits(whole + (frac.empty() ? "" : frac));
      Rational r(digits, scale);
      return neg ? Rational(-r) : r;
    }
    return Rational(Integer(s));
  } catch (const std::runtime_error&) {
    throw std::invalid_argument("malformed rational literal '" + s + "'");
  }
}

/// Exact rational from a double (every finite double is a dyadic rational).
inline Rational from_double(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("non-finite value has no rational form");
  int exp = 0;
  double mant = std::frexp(x, &exp);
  // 53 bits of mantissa
  auto m = static_cast<std::int64_t>(std::ldexp(mant, 53));
  exp -= 53;
  Rational r{Integer(m)};
  if (exp > 0) {
    r *= Rational(Integer(1) << exp);
  } else if (exp < 0) {
    r /= Rational(Integer(1) << (-exp));
  }
  return r;
}

inline Integer gcd(Integer a, Integer b) {
  if (a < 0) a = -a;
  if (b < 0) b = -b;
  while (b != 0) {
    Integer t = a % b;
    a = b;
    b = t;
  }
  return a;
}

inline Integer lcm(const Integer& a, const Integer& b) {
  if (a == 0 || b == 0) return 0;
  Integer g = gcd(a, b);
  Integer r = a / g * b;
  return r < 0 ? Integer(-r) : r;
}

}  // namespace nlinv
