#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "synermed/metrics.hpp"

using namespace synermed;
using namespace synermed::metrics;
using domain::Image2D;

namespace {

// Brute-force sliding-window SSIM: explicit 2-D Gaussian kernel and a double
// loop over valid placements. This is the independent reference the
// production (separable) implementation is checked against.
double ssim_oracle(const Image2D& a, const Image2D& b, const SsimParams& p) {
    int w = p.window;
    std::vector<double> kernel(static_cast<size_t>(w) * w);
    double c = (w - 1) / 2.0;
    double total = 0.0;
    for (int y = 0; y < w; ++y) {
        for (int x = 0; x < w; ++x) {
            double dx = x - c, dy = y - c;
            kernel[static_cast<size_t>(y) * w + x] =
                std::exp(-(dx * dx + dy * dy) / (2.0 * p.sigma * p.sigma));
            total += kernel[static_cast<size_t>(y) * w + x];
        }
    }
    for (double& k : kernel) k /= total;

    double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
    double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);

    double acc = 0.0;
    int count = 0;
    for (int oy = 0; oy + w <= a.height; ++oy) {
        for (int ox = 0; ox + w <= a.width; ++ox) {
            double mu_a = 0.0, mu_b = 0.0, m_aa = 0.0, m_bb = 0.0, m_ab = 0.0;
            for (int y = 0; y < w; ++y) {
                for (int x = 0; x < w; ++x) {
                    double k = kernel[static_cast<size_t>(y) * w + x];
                    double va = a.at(ox + x, oy + y);
                    double vb = b.at(ox + x, oy + y);
                    mu_a += k * va;
                    mu_b += k * vb;
                    m_aa += k * va * va;
                    m_bb += k * vb * vb;
                    m_ab += k * va * vb;
                }
            }
            double var_a = m_aa - mu_a * mu_a;
            double var_b = m_bb - mu_b * mu_b;
            double cov = m_ab - mu_a * mu_b;
            acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                   ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            ++count;
        }
    }
    return acc / count;
}

Image2D random_image(int w, int h, domain::RngStream& rng) {
    Image2D img(w, h);
    for (double& v : img.data) v = rng.uniform01();
    return img;
}

Image2D smooth_random_image(int w, int h, domain::RngStream& rng) {
    // Blobby image so local statistics vary meaningfully.
    Image2D img(w, h);
    double cx = 4.0 + rng.uniform01() * (w - 8);
    double cy = 4.0 + rng.uniform01() * (h - 8);
    double r = 3.0 + 4.0 * rng.uniform01();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            img.at(x, y) = std::clamp(
                0.3 + 0.6 * std::exp(-d2 / (2 * r * r)) + 0.05 * rng.uniform01(), 0.0, 1.0);
        }
    }
    return img;
}

}  // namespace

TEST_CASE("ssim of an image with itself is exactly 1") {
    domain::RngStream rng(1, {"ssim-self"});
    Image2D img = random_image(16, 16, rng);
    SsimParams p;
    p.window = 11;
    CHECK(ssim(img, img, p) == 1.0);
}

TEST_CASE("constant-vs-constant ssim collapses to C1/(1+C1)") {
    Image2D zeros(16, 16, 0.0);
    Image2D ones(16, 16, 1.0);
    double c1 = 0.01 * 0.01;
    double expected = c1 / (1.0 + c1);  // ~9.999e-5
    CHECK(std::abs(ssim(zeros, ones) - expected) < 1e-12);
}

TEST_CASE("production ssim matches the brute-force oracle within 1e-9") {
    domain::RngStream rng(2, {"ssim-oracle"});
    SsimParams p;
    for (int trial = 0; trial < 10; ++trial) {
        Image2D a = trial % 2 == 0 ? random_image(24, 24, rng) : smooth_random_image(24, 24, rng);
        Image2D b = trial % 2 == 0 ? random_image(24, 24, rng) : smooth_random_image(24, 24, rng);
        CHECK(std::abs(ssim(a, b, p) - ssim_oracle(a, b, p)) < 1e-9);
    }
}

TEST_CASE("ssim is symmetric and bounded by 1") {
    domain::RngStream rng(3, {"ssim-sym"});
    for (int trial = 0; trial < 10; ++trial) {
        Image2D a = smooth_random_image(20, 20, rng);
        Image2D b = smooth_random_image(20, 20, rng);
        double ab = ssim(a, b);
        CHECK(ab == ssim(b, a));  // exact
        CHECK(ab <= 1.0);
        CHECK(ab >= -1.0);
    }
}

TEST_CASE("ssim rejects dimension mismatches and tiny images") {
    Image2D a(16, 16, 0.5), b(15, 16, 0.5), tiny(8, 8, 0.5);
    CHECK_THROWS_AS(ssim(a, b), Error);
    CHECK_THROWS_AS(ssim(tiny, tiny), Error);  // smaller than the window
    SsimParams bad;
    bad.window = 4;
    CHECK_THROWS_AS(ssim(a, a, bad), Error);
}

TEST_CASE("psnr analytic cases") {
    Image2D x(8, 8, 0.3);
    CHECK(psnr(x, x).identical);
    CHECK(psnr(x, x).to_string() == "inf");

    Image2D a(8, 8, 0.25), b(8, 8, 0.75);  // constant difference 0.5
    PsnrValue v = psnr(a, b);
    CHECK(!v.identical);
    CHECK(v.db == doctest::Approx(6.0206).epsilon(1e-4));

    Image2D zeros(8, 8, 0.0), ones(8, 8, 1.0);
    CHECK(psnr(zeros, ones).db == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("mae analytic cases") {
    Image2D x(8, 8, 0.631);
    CHECK(mae(x, x) == 0.0);

    Image2D zeros(8, 8, 0.0), ones(8, 8, 1.0);
    CHECK(mae(zeros, ones) == 255.0);

    // Half the pixels differ by 0.2, half are identical: 255 * 0.1 = 25.5.
    Image2D a(8, 8, 0.4), b(8, 8, 0.4);
    for (int i = 0; i < 32; ++i) b.data[static_cast<size_t>(i)] = 0.6;
    CHECK(mae(a, b) == doctest::Approx(25.5).epsilon(1e-12));
}

TEST_CASE("mae and psnr are translation-consistent") {
    domain::RngStream rng(4, {"translate"});
    Image2D a(12, 12), b(12, 12);
    for (double& v : a.data) v = 0.2 + 0.5 * rng.uniform01();
    for (double& v : b.data) v = 0.2 + 0.5 * rng.uniform01();
    Image2D a2 = a, b2 = b;
    for (double& v : a2.data) v += 0.2;
    for (double& v : b2.data) v += 0.2;
    CHECK(mae(a, b) == doctest::Approx(mae(a2, b2)).epsilon(1e-12));
    CHECK(psnr(a, b).db == doctest::Approx(psnr(a2, b2).db).epsilon(1e-12));
}

TEST_CASE("evaluate_route aggregates with population std and the x100 convention") {
    Image2D gt0(16, 16, 0.0), gt1(16, 16, 0.0);

    SUBCASE("identical predictions give SSIM 100 and MAE 0") {
        RouteMetricsReport r = evaluate_route("brats/t1_to_t2", {gt0, gt1}, {gt0, gt1});
        CHECK(r.n_slices == 2);
        CHECK(r.ssim_x100.mean == 100.0);
        CHECK(r.ssim_x100.stddev == 0.0);
        CHECK(r.mae_8bit.mean == 0.0);
        CHECK(r.psnr_identical == 2);
    }

    SUBCASE("single slice has zero std") {
        Image2D pred(16, 16, 0.5);
        RouteMetricsReport r = evaluate_route("brats/t1_to_t2", {pred}, {gt0});
        CHECK(r.n_slices == 1);
        CHECK(r.ssim_x100.stddev == 0.0);
        CHECK(r.mae_8bit.stddev == 0.0);
    }

    SUBCASE("count mismatch is rejected") {
        CHECK_THROWS_AS(evaluate_route("r", {gt0}, {gt0, gt1}), Error);
        CHECK_THROWS_AS(evaluate_route("r", {}, {}), Error);
    }
}

TEST_CASE("evaluate_route mean/std arithmetic on two known slices") {
    // Construct two prediction/GT pairs with known SSIM by reusing the oracle.
    domain::RngStream rng(5, {"agg"});
    Image2D p1 = smooth_random_image(16, 16, rng), g1 = smooth_random_image(16, 16, rng);
    Image2D p2 = smooth_random_image(16, 16, rng), g2 = smooth_random_image(16, 16, rng);
    double s1 = ssim(p1, g1), s2 = ssim(p2, g2);
    RouteMetricsReport r = evaluate_route("r", {p1, p2}, {g1, g2});
    CHECK(r.ssim_x100.mean == doctest::Approx(100.0 * (s1 + s2) / 2.0).epsilon(1e-12));
    double mean = (s1 + s2) / 2.0;
    double pop_std = std::sqrt(((s1 - mean) * (s1 - mean) + (s2 - mean) * (s2 - mean)) / 2.0);
    CHECK(r.ssim_x100.stddev == doctest::Approx(100.0 * pop_std).epsilon(1e-9));
}

TEST_CASE("parallel evaluate_route matches the sequential result") {
    domain::RngStream rng(6, {"par"});
    std::vector<Image2D> preds, gts;
    for (int i = 0; i < 12; ++i) {
        preds.push_back(smooth_random_image(16, 16, rng));
        gts.push_back(smooth_random_image(16, 16, rng));
    }
    RouteMetricsReport seq = evaluate_route("r", preds, gts, {}, 1);
    RouteMetricsReport par = evaluate_route("r", preds, gts, {}, 8);
    CHECK(seq.ssim_x100.mean == par.ssim_x100.mean);
    CHECK(seq.mae_8bit.mean == par.mae_8bit.mean);
    CHECK(seq.psnr_db.mean == par.psnr_db.mean);
}
