#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace atlas {

struct SarimaSpec {
  std::size_t p = 0, d = 0, q = 0;
  std::size_t P = 0, D = 0, Q = 0;
  std::size_t s = 1;  // s = 1 disables the seasonal part
  bool include_mean = true;  // a drift term once the series is differenced

  void validate() const;
  /// Shortest series sarima_fit accepts.
  std::size_t min_length() const;
  std::size_t n_coefficients() const;  // ARMA terms plus the mean
  std::string to_string() const;       // "(p,d,q)(P,D,Q)_s"

  friend bool operator==(const SarimaSpec&, const SarimaSpec&) = default;
};

/// Coefficients use the sign conventions
///   (1 - sum ar_i B^i)(1 - sum sar_i B^{si}) (z_t - mean)
///     = (1 + sum ma_i B^i)(1 + sum sma_i B^{si}) e_t
/// where z is the differenced series.
struct SarimaFit {
  SarimaSpec spec;
  std::vector<double> ar, ma, sar, sma;
  double mean = 0.0;
  double sigma2 = 0.0;   // innovation variance, CSS / effective length
  double css = 0.0;
  std::size_t n_effective = 0;
  double loglik = 0.0;   // Gaussian proxy from the CSS
  double aicc = 0.0;
};

/// Inverse of SarimaSpec::to_string; "(p,d,q)" alone means no seasonal part.
SarimaSpec parse_sarima_spec(const std::string& text);

std::vector<double> difference(const std::vector<double>& x, std::size_t d, std::size_t D,
                               std::size_t s);
/// Inverse of `difference`: rebuilds the series from its first d + D*s values
/// and the differenced tail.
std::vector<double> integrate(const std::vector<double>& head, const std::vector<double>& z,
                              std::size_t d, std::size_t D, std::size_t s);

/// Conditional-sum-of-squares fit from a zero start. The ARMA polynomials are
/// parametrized through partial autocorrelations so every iterate is
/// stationary and invertible. Throws ArgumentError if the series is too short
/// and NumericError if the optimizer fails.
SarimaFit sarima_fit(const std::vector<double>& series, const SarimaSpec& spec);

/// Iterated conditional expectation with future innovations set to zero.
std::vector<double> sarima_forecast(const SarimaFit& fit, const std::vector<double>& series,
                                    std::size_t horizon);

/// Minimum-AICc spec; ties go to fewer coefficients, then lexicographic order.
/// Specs whose fit fails or whose minimum length exceeds the series are
/// skipped; if none survives, (0,1,0)(0,0,0) is returned with a warning.
SarimaSpec sarima_select(const std::vector<double>& series, const std::vector<SarimaSpec>& grid);

/// p, q in {0,1,2}, d in {0,1}, P, Q, D in {0,1} at season s.
std::vector<SarimaSpec> default_sarima_grid(std::size_t s = 52);

/// One row per coefficient: dimension,spec,term,lag,value.
void write_sarima_coefficients(const std::filesystem::path& path,
                               const std::vector<SarimaFit>& fits);

}  // namespace atlas
