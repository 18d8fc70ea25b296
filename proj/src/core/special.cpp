#include "kronvb/special.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <cmath>
#include <numbers>
#include <string>

#include "kronvb/error.hpp"

namespace kronvb {

namespace {

void check_domain(int p, double nu, const char *what) {
  if (p < 1) throw ValidationError(std::string(what) + ": order must be positive");
  if (!(nu > p - 1))
    throw ValidationError(std::string(what) + ": degrees of freedom " + std::to_string(nu) +
                          " must exceed order - 1 = " + std::to_string(p - 1));
}

}  // namespace

double log_multigamma(int p, double a) {
  check_domain(p, 2.0 * a, "log_multigamma");
  double s = 0.25 * p * (p - 1) * std::log(std::numbers::pi);
  for (int j = 1; j <= p; ++j) s += boost::math::lgamma(a + 0.5 * (1 - j));
  return s;
}

double digamma_sum(int p, double nu) {
  check_domain(p, nu, "digamma_sum");
  double s = 0.0;
  for (int i = 1; i <= p; ++i) s += boost::math::digamma(0.5 * (nu - p + i));
  return s;
}

double trigamma_sum(int p, double nu) {
  check_domain(p, nu, "trigamma_sum");
  double s = 0.0;
  for (int i = 1; i <= p; ++i) s += boost::math::trigamma(0.5 * (nu - p + i));
  return s;
}

}  // namespace kronvb
