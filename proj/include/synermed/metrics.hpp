#pragma once

#include <string>
#include <vector>

#include "synermed/domain.hpp"

namespace synermed::metrics {

using domain::Image2D;

/// Structural-similarity parameters. Defaults are the canonical ones; local
/// statistics use a normalized Gaussian window and only fully interior window
/// placements contribute.
struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;  // L; images are normalized to [0,1]

    void validate() const;
};

/// Mean local SSIM over valid window placements, in [-1, 1].
/// Errors: DimMismatch, TooSmall (image smaller than the window).
double ssim(const Image2D& a, const Image2D& b, const SsimParams& params = {});

/// PSNR on [0,1] images. MSE below 1e-12 is reported as the IDENTICAL
/// sentinel instead of a capped dB number.
struct PsnrValue {
    bool identical = false;
    double db = 0.0;

    std::string to_string() const;  // "inf" for the identical case
};

PsnrValue psnr(const Image2D& a, const Image2D& b);

/// Mean absolute error on the 8-bit-equivalent scale: 255 * mean |a-b|.
double mae(const Image2D& a, const Image2D& b);

struct Stat {
    double mean = 0.0;
    double stddev = 0.0;  // population std
};

struct RouteMetricsReport {
    std::string route_id;
    int n_slices = 0;
    Stat ssim_x100;        // table convention: SSIM * 100
    Stat psnr_db;          // identical slices are excluded from the mean/std
    int psnr_identical = 0;
    Stat mae_8bit;
};

/// Per-slice metrics then mean/population-std aggregation in slice order.
/// Errors: CountMismatch plus per-metric errors tagged with the slice index.
RouteMetricsReport evaluate_route(const std::string& route_id,
                                  const std::vector<Image2D>& predictions,
                                  const std::vector<Image2D>& ground_truth,
                                  const SsimParams& params = {}, int jobs = 1);

}  // namespace synermed::metrics
