#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hybridvc/frame.hpp"

namespace hvc::metrics {

enum class PsnrMode { kRgb, kLuma };

// Mean squared error over all samples on the [0, 1] scale.
double mse(const Frame& a, const Frame& b);

// 10*log10(1/MSE). Identical inputs give +infinity. For videos the per-frame
// values are averaged.
double psnr(const Frame& a, const Frame& b, PsnrMode mode = PsnrMode::kRgb);
double psnr(const VideoSequence& a, const VideoSequence& b,
            PsnrMode mode = PsnrMode::kRgb);

inline constexpr std::array<double, 5> kMsSsimWeights = {
    0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
// Smallest side that survives four dyadic downsamplings with an 11-tap window.
inline constexpr int kMsSsimMinSide = kSsimWindow * 16;

// Five-scale MS-SSIM of one plane (row-major, [0, 1] data), Gaussian window
// 11x11 with sigma 1.5, "valid" filtering, 2x2 average downsampling. Negative
// contrast-structure terms are clamped to zero before exponentiation. Throws
// ScaleError if min(w, h) < 176.
double ms_ssim_plane(std::span<const double> a, std::span<const double> b,
                     int width, int height);
// Same value plus d(ms_ssim)/d(a), written to grad_a.
double ms_ssim_plane_grad(std::span<const double> a, std::span<const double> b,
                          int width, int height, std::span<double> grad_a);

// Average of the per-channel scores.
double ms_ssim(const Frame& a, const Frame& b);
double ms_ssim(const VideoSequence& a, const VideoSequence& b);

double bpp(std::uint64_t total_bits, int width, int height, int frames);

enum class MetricKind { kPsnr, kMsSsim };

struct RDPoint {
  double rate = 0.0;        // bits per pixel, > 0
  double distortion = 0.0;  // PSNR (dB) or MS-SSIM
  std::string label;
};

struct RDCurve {
  std::vector<RDPoint> points;
  MetricKind kind = MetricKind::kPsnr;

  // Sorts by rate and checks the hard invariants (>= 4 points, positive and
  // strictly increasing rates); throws ValidationError. Returns soft warnings,
  // e.g. distortion that falls as rate rises.
  std::vector<std::string> validate();
};

// Bjontegaard delta rate in percent (negative = test saves bits). log10(rate)
// is interpolated over distortion with monotone piecewise-cubic Hermite
// (PCHIP) segments and integrated exactly over the shared distortion range.
// Throws ValidationError for fewer than 4 points or repeated distortions, and
// DomainError when the distortion ranges do not overlap.
double bdbr(RDCurve anchor, RDCurve test);

// PCHIP pieces, exposed for tests.
std::vector<double> pchip_slopes(std::span<const double> x,
                                 std::span<const double> y);
double pchip_integral(std::span<const double> x, std::span<const double> y,
                      double lo, double hi);

}  // namespace hvc::metrics
