#include "synermed/metrics.hpp"

#include <cmath>
#include <sstream>

#include "synermed/parallel.hpp"

namespace synermed::metrics {

void SsimParams::validate() const {
    if (window < 3 || window % 2 == 0) {
        fail(ErrorKind::Usage, "ConfigInvalid", "SSIM window must be odd and >= 3");
    }
    if (sigma <= 0.0) fail(ErrorKind::Usage, "ConfigInvalid", "SSIM sigma must be positive");
    if (dynamic_range <= 0.0) {
        fail(ErrorKind::Usage, "ConfigInvalid", "SSIM dynamic range must be positive");
    }
}

namespace {

void check_dims(const Image2D& a, const Image2D& b) {
    if (a.width != b.width || a.height != b.height) {
        fail(ErrorKind::Data, "DimMismatch",
             "image dimensions differ: " + std::to_string(a.width) + "x" +
                 std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                 std::to_string(b.height));
    }
}

std::vector<double> gaussian_kernel(int window, double sigma) {
    std::vector<double> k(static_cast<size_t>(window));
    double c = (window - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < window; ++i) {
        double d = i - c;
        k[static_cast<size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        sum += k[static_cast<size_t>(i)];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Valid-mode separable convolution with the same 1-D kernel on both axes.
// Input is width x height row-major; output is (width-w+1) x (height-w+1).
std::vector<double> conv_valid(const std::vector<double>& img, int width, int height,
                               const std::vector<double>& kernel) {
    int w = static_cast<int>(kernel.size());
    int out_w = width - w + 1;
    int out_h = height - w + 1;
    std::vector<double> hpass(static_cast<size_t>(out_w) * height);
    for (int y = 0; y < height; ++y) {
        const double* row = img.data() + static_cast<size_t>(y) * width;
        double* out = hpass.data() + static_cast<size_t>(y) * out_w;
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int i = 0; i < w; ++i) acc += kernel[static_cast<size_t>(i)] * row[x + i];
            out[x] = acc;
        }
    }
    std::vector<double> vpass(static_cast<size_t>(out_w) * out_h);
    for (int y = 0; y < out_h; ++y) {
        double* out = vpass.data() + static_cast<size_t>(y) * out_w;
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int i = 0; i < w; ++i) {
                acc += kernel[static_cast<size_t>(i)] * hpass[static_cast<size_t>(y + i) * out_w + x];
            }
            out[x] = acc;
        }
    }
    return vpass;
}

}  // namespace

double ssim(const Image2D& a, const Image2D& b, const SsimParams& params) {
    params.validate();
    check_dims(a, b);
    if (a.width < params.window || a.height < params.window) {
        fail(ErrorKind::Data, "TooSmall",
             "images must be at least window x window for SSIM (window = " +
                 std::to_string(params.window) + ")");
    }

    std::vector<double> kernel = gaussian_kernel(params.window, params.sigma);
    size_t n = a.data.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (size_t i = 0; i < n; ++i) {
        aa[i] = a.data[i] * a.data[i];
        bb[i] = b.data[i] * b.data[i];
        ab[i] = a.data[i] * b.data[i];
    }

    std::vector<double> mu_a = conv_valid(a.data, a.width, a.height, kernel);
    std::vector<double> mu_b = conv_valid(b.data, a.width, a.height, kernel);
    std::vector<double> m_aa = conv_valid(aa, a.width, a.height, kernel);
    std::vector<double> m_bb = conv_valid(bb, a.width, a.height, kernel);
    std::vector<double> m_ab = conv_valid(ab, a.width, a.height, kernel);

    double c1 = params.k1 * params.dynamic_range * params.k1 * params.dynamic_range;
    double c2 = params.k2 * params.dynamic_range * params.k2 * params.dynamic_range;

    double total = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        double var_a = m_aa[i] - mu_a[i] * mu_a[i];
        double var_b = m_bb[i] - mu_b[i] * mu_b[i];
        double cov = m_ab[i] - mu_a[i] * mu_b[i];
        double numerator = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
        double denominator = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
        total += numerator / denominator;
    }
    return total / static_cast<double>(mu_a.size());
}

PsnrValue psnr(const Image2D& a, const Image2D& b) {
    check_dims(a, b);
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    PsnrValue out;
    if (mse < 1e-12) {
        out.identical = true;
        return out;
    }
    out.db = 10.0 * std::log10(1.0 / mse);
    return out;
}

std::string PsnrValue::to_string() const {
    if (identical) return "inf";
    std::ostringstream s;
    s << db;
    return s.str();
}

double mae(const Image2D& a, const Image2D& b) {
    check_dims(a, b);
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += std::abs(a.data[i] - b.data[i]);
    return 255.0 * acc / static_cast<double>(a.data.size());
}

namespace {

Stat aggregate(const std::vector<double>& values) {
    Stat s;
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) {
        double d = v - s.mean;
        sq += d * d;
    }
    s.stddev = std::sqrt(sq / static_cast<double>(values.size()));
    return s;
}

}  // namespace

RouteMetricsReport evaluate_route(const std::string& route_id,
                                  const std::vector<Image2D>& predictions,
                                  const std::vector<Image2D>& ground_truth,
                                  const SsimParams& params, int jobs) {
    if (predictions.size() != ground_truth.size()) {
        fail(ErrorKind::Data, "CountMismatch",
             route_id + ": " + std::to_string(predictions.size()) + " predictions vs " +
                 std::to_string(ground_truth.size()) + " ground-truth slices");
    }
    if (predictions.empty()) {
        fail(ErrorKind::Data, "CountMismatch", route_id + ": needs at least one slice");
    }

    size_t n = predictions.size();
    std::vector<double> ssim_vals(n), mae_vals(n);
    std::vector<PsnrValue> psnr_vals(n);
    parallel_for(n, jobs, [&](size_t i) {
        try {
            ssim_vals[i] = ssim(predictions[i], ground_truth[i], params);
            psnr_vals[i] = psnr(predictions[i], ground_truth[i]);
            mae_vals[i] = mae(predictions[i], ground_truth[i]);
        } catch (const Error& e) {
            fail(e.kind(), e.code(),
                 route_id + ": slice " + std::to_string(i) + ": " + e.what());
        }
    });

    RouteMetricsReport report;
    report.route_id = route_id;
    report.n_slices = static_cast<int>(n);
    std::vector<double> ssim_x100(n);
    for (size_t i = 0; i < n; ++i) ssim_x100[i] = 100.0 * ssim_vals[i];
    report.ssim_x100 = aggregate(ssim_x100);
    report.mae_8bit = aggregate(mae_vals);
    std::vector<double> psnr_finite;
    for (const PsnrValue& v : psnr_vals) {
        if (v.identical) {
            ++report.psnr_identical;
        } else {
            psnr_finite.push_back(v.db);
        }
    }
    report.psnr_db = aggregate(psnr_finite);
    return report;
}

}  // namespace synermed::metrics
