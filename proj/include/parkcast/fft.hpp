#pragma once

#include <complex>
#include <vector>

namespace parkcast {

/// In-place DFT of arbitrary length: radix-2 Cooley-Tukey for powers of two,
/// Bluestein's chirp-z for everything else. `inverse` applies the conjugate
/// transform scaled by 1/N.
void fft(std::vector<std::complex<double>>& a, bool inverse);

} // namespace parkcast
