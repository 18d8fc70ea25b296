#pragma once

namespace kronvb {

// log Gamma_p(a) = p(p-1)/4 log(pi) + sum_{j=1}^p log Gamma(a + (1-j)/2).
// Requires a > (p-1)/2.
double log_multigamma(int p, double a);

// sum_{i=1}^p psi((nu - p + i)/2). Requires nu > p - 1.
double digamma_sum(int p, double nu);

// sum_{i=1}^p psi'((nu - p + i)/2). Requires nu > p - 1.
double trigamma_sum(int p, double nu);

}  // namespace kronvb
