#pragma once

namespace richiv {

// Standard normal density.
double norm_pdf(double x);

// Standard normal CDF, computed as erfc(-x/sqrt(2))/2 so both tails keep
// full relative precision.
double norm_cdf(double x);

// Inverse of norm_cdf on (0, 1). Returns -inf/+inf at 0/1.
double norm_quantile(double p);

}  // namespace richiv
