#pragma once

namespace certgap::normal {

double pdf(double x);

/// Standard normal CDF via erfc; accurate in relative terms deep in the lower tail.
double cdf(double x);

/// Phi(-x) / phi(x) for x >= 0 (Mills ratio), finite for all x.
double mills_ratio(double x);

/// Phi(b) - Phi(a) for a <= b without cancellation in either tail.
double interval_mass(double a, double b);

/// (Phi(b) - Phi(a)) / phi(b) for a < b <= 0, free of underflow far in the tail.
double interval_mass_over_pdf(double a, double b);

}  // namespace certgap::normal
