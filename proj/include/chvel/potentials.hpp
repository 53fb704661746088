#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace chvel {

enum class PotentialKind { logarithmic, polynomial };

inline const char* to_string(PotentialKind k) {
  return k == PotentialKind::logarithmic ? "logarithmic" : "polynomial";
}

inline PotentialKind parse_potential_kind(const std::string& s) {
  if (s == "logarithmic" || s == "log") return PotentialKind::logarithmic;
  if (s == "polynomial" || s == "poly") return PotentialKind::polynomial;
  throw std::invalid_argument("unknown potential kind '" + s + "'");
}

/// Free-energy density split into a convex part f1 and a concave part f2.
///
///   logarithmic: f1(r) = c1((1+r)ln(1+r) + (1-r)ln(1-r)),  r in (-1,1)
///   polynomial:  f1(r) = (c1/4)(r^4 + 1)
///   both:        f2(r) = -c2 r^2
///
/// With c2 = c1/2 the polynomial kind is the double well (c1/4)(r^2-1)^2.
struct PotentialSpec {
  PotentialKind kind = PotentialKind::logarithmic;
  double c1 = 1.0;
  double c2 = 2.0;
};

/// Bulk and surface densities together with the domination constants of
/// |f1'(r)| <= gamma1 |f_G1'(r)| + gamma2.
struct PotentialPair {
  PotentialSpec bulk{PotentialKind::logarithmic, 1.0, 2.0};
  PotentialSpec surface{PotentialKind::logarithmic, 2.0, 1.0};
  double gamma1 = 1.0;
  double gamma2 = 1.0;
};

/// Raised for |r| >= 1 - kDomainGuard with the logarithmic kind.
class PotentialDomainError : public std::domain_error {
 public:
  explicit PotentialDomainError(double r)
      : std::domain_error("potential evaluated outside (-1,1): r = " + std::to_string(r)), r_(r) {}
  [[nodiscard]] double value() const { return r_; }

 private:
  double r_;
};

/// Finite argument but non-finite result.
class PotentialOverflowError : public std::overflow_error {
 public:
  using std::overflow_error::overflow_error;
};

inline constexpr double kDomainGuard = 1e-12;

inline void validate(const PotentialSpec& s) {
  if (!(s.c1 > 0.0) || !(s.c2 > 0.0)) throw std::invalid_argument("potential coefficients c1, c2 must be positive");
}

namespace detail {

inline double checked(double v) {
  if (!std::isfinite(v)) throw PotentialOverflowError("potential derivative overflowed");
  return v;
}

inline void check_domain(const PotentialSpec& s, double r) {
  if (!std::isfinite(r)) throw PotentialDomainError(r);
  if (s.kind == PotentialKind::logarithmic && std::abs(r) >= 1.0 - kDomainGuard) throw PotentialDomainError(r);
}

}  // namespace detail

/// Derivative of order 0..3 of the convex part f1.
inline double convex_part(const PotentialSpec& s, int order, double r) {
  detail::check_domain(s, r);
  const double c = s.c1;
  if (s.kind == PotentialKind::logarithmic) {
    switch (order) {
      case 0: return detail::checked(c * ((1 + r) * std::log1p(r) + (1 - r) * std::log1p(-r)));
      case 1: return detail::checked(c * (std::log1p(r) - std::log1p(-r)));
      case 2: return detail::checked(2.0 * c / ((1 - r) * (1 + r)));
      case 3: {
        const double d = (1 - r) * (1 + r);
        return detail::checked(4.0 * c * r / (d * d));
      }
      default: break;
    }
  } else {
    switch (order) {
      case 0: return detail::checked(0.25 * c * (r * r * r * r + 1.0));
      case 1: return detail::checked(c * r * r * r);
      case 2: return detail::checked(3.0 * c * r * r);
      case 3: return detail::checked(6.0 * c * r);
      default: break;
    }
  }
  throw std::invalid_argument("potential derivative order must be in 0..3");
}

/// Derivative of order 0..3 of the concave part f2(r) = -c2 r^2.
inline double concave_part(const PotentialSpec& s, int order, double r) {
  detail::check_domain(s, r);
  switch (order) {
    case 0: return -s.c2 * r * r;
    case 1: return -2.0 * s.c2 * r;
    case 2: return -2.0 * s.c2;
    case 3: return 0.0;
    default: throw std::invalid_argument("potential derivative order must be in 0..3");
  }
}

inline double eval_derivative(const PotentialSpec& s, int order, double r) {
  return convex_part(s, order, r) + concave_part(s, order, r);
}

struct DominationReport {
  bool holds = false;
  double worst_margin = 0.0;
  double worst_r = 0.0;
};

/// Samples gamma1 |f_G1'(r)| + gamma2 - |f1'(r)| on a symmetric grid in
/// (-1+delta, 1-delta), delta = 1e-6, and reports the smallest value.
inline DominationReport check_domination(const PotentialSpec& bulk, const PotentialSpec& surface, double gamma1,
                                         double gamma2, int samples) {
  if (bulk.kind != surface.kind) throw std::invalid_argument("check_domination: kinds differ");
  if (samples < 2) throw std::invalid_argument("check_domination: need at least 2 samples");
  constexpr double delta = 1e-6;
  DominationReport rep;
  rep.worst_margin = std::numeric_limits<double>::infinity();
  const double a = 1.0 - delta;
  for (int k = 0; k < samples; ++k) {
    const double r = -a + 2.0 * a * k / (samples - 1);
    const double margin =
        gamma1 * std::abs(convex_part(surface, 1, r)) + gamma2 - std::abs(convex_part(bulk, 1, r));
    if (margin < rep.worst_margin) {
      rep.worst_margin = margin;
      rep.worst_r = r;
    }
  }
  rep.holds = rep.worst_margin >= 0.0;
  return rep;
}

inline DominationReport check_domination(const PotentialPair& p, int samples = 2001) {
  return check_domination(p.bulk, p.surface, p.gamma1, p.gamma2, samples);
}

struct SingularProbeRow {
  int k;
  double r;
  double at_plus;   // f'(1 - 10^-k)
  double at_minus;  // f'(-(1 - 10^-k))
};

/// f' near the endpoints r = +-(1 - 10^-k), k = 2..8.
inline std::vector<SingularProbeRow> singular_limit_probe(const PotentialSpec& s) {
  if (s.kind != PotentialKind::logarithmic) throw std::invalid_argument("singular_limit_probe: logarithmic kind only");
  std::vector<SingularProbeRow> rows;
  for (int k = 2; k <= 8; ++k) {
    const double r = 1.0 - std::pow(10.0, -k);
    rows.push_back({k, r, eval_derivative(s, 1, r), eval_derivative(s, 1, -r)});
  }
  return rows;
}

}  // namespace chvel
