#pragma once

#include <complex>
#include <vector>

namespace echosonar {

// Real-input DFT helpers backed by FFTW (FFTW_ESTIMATE plans, so results are
// deterministic for a given input). Plans are cached per transform size.

// Forward DFT of a real sequence; returns the n/2 + 1 nonnegative bins.
std::vector<std::complex<double>> rfft(const std::vector<double>& x);

// Inverse of rfft, normalized so irfft(rfft(x)) == x (up to rounding).
std::vector<double> irfft(const std::vector<std::complex<double>>& spectrum,
                          std::size_t n);

// Power of a single tone in a real signal, via a direct DFT projection.
// Serves as an independent spectrum probe in tests and noise shaping.
double tone_power(const std::vector<double>& x, double freq_hz,
                  int sample_rate_hz);

}  // namespace echosonar
