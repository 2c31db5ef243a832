#include "synermed/flowcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace synermed::flowcore {

Tensor::Tensor(std::vector<std::uint32_t> d, double fill) : dims(std::move(d)) {
    size_t n = 1;
    for (std::uint32_t e : dims) n *= e;
    data.assign(n, fill);
}

Tensor Tensor::from_values(std::vector<double> values) {
    Tensor t;
    t.dims = {static_cast<std::uint32_t>(values.size())};
    t.data = std::move(values);
    return t;
}

void Tensor::validate() const {
    size_t n = 1;
    for (std::uint32_t e : dims) n *= e;
    if (n != data.size()) {
        fail(ErrorKind::Data, "ShapeMismatch", "tensor data length does not match dims");
    }
    for (double v : data) {
        if (!std::isfinite(v)) fail(ErrorKind::Numeric, "NonFinite", "tensor holds non-finite value");
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dims != b.dims) {
        fail(ErrorKind::Data, "DimMismatch", std::string(op) + ": tensor shapes differ");
    }
}

Tensor interpolate(const Tensor& z0, const Tensor& z1, double t) {
    check_same_shape(z0, z1, "interpolate");
    if (t < 0.0 || t > 1.0) {
        fail(ErrorKind::Usage, "TOutOfRange", "interpolation time must be in [0,1]");
    }
    Tensor out = z0;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = (1.0 - t) * z0.data[i] + t * z1.data[i];
    }
    return out;
}

Tensor fm_target(const Tensor& z0, const Tensor& z1) {
    check_same_shape(z0, z1, "fm_target");
    Tensor out = z1;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = z1.data[i] - z0.data[i];
    return out;
}

double fm_loss(const Tensor& v_pred, const Tensor& z0, const Tensor& z1) {
    check_same_shape(v_pred, z0, "fm_loss");
    check_same_shape(z0, z1, "fm_loss");
    double acc = 0.0;
    for (size_t i = 0; i < v_pred.data.size(); ++i) {
        double err = v_pred.data[i] - (z1.data[i] - z0.data[i]);
        acc += err * err;
    }
    return acc / static_cast<double>(v_pred.data.size());
}

Tensor oracle_velocity(const std::vector<Tensor>& dataset, const Tensor& z, double t) {
    if (dataset.empty()) {
        fail(ErrorKind::Data, "EmptyDataset", "oracle velocity needs at least one data point");
    }
    if (!(t > 0.0) || t > 1.0) {
        fail(ErrorKind::Usage, "TOutOfRange", "oracle velocity time must be in (0,1]");
    }
    for (const Tensor& p : dataset) check_same_shape(p, z, "oracle_velocity");

    // Log-weights: -||z - (1-t) z0_i||^2 / (2 t^2), normalized by log-sum-exp.
    size_t n = dataset.size();
    std::vector<double> log_w(n);
    double inv_2t2 = 1.0 / (2.0 * t * t);
    for (size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (size_t e = 0; e < z.data.size(); ++e) {
            double d = z.data[e] - (1.0 - t) * dataset[i].data[e];
            sq += d * d;
        }
        log_w[i] = -sq * inv_2t2;
    }
    double mx = *std::max_element(log_w.begin(), log_w.end());
    double denom = 0.0;
    for (double lw : log_w) denom += std::exp(lw - mx);

    Tensor v(z.dims, 0.0);
    double inv_t = 1.0 / t;
    for (size_t i = 0; i < n; ++i) {
        double w = std::exp(log_w[i] - mx) / denom;
        if (w == 0.0) continue;
        for (size_t e = 0; e < z.data.size(); ++e) {
            v.data[e] += w * (z.data[e] - dataset[i].data[e]) * inv_t;
        }
    }
    return v;
}

namespace {

void check_finite_step(const Tensor& z, int step, const char* what) {
    for (double v : z.data) {
        if (!std::isfinite(v)) {
            fail(ErrorKind::Numeric, "NonFinite",
                 std::string(what) + " became non-finite at step " + std::to_string(step));
        }
    }
}

}  // namespace

Tensor sample(const VelocityFn& v_fn, Tensor z_start, const Tensor& cond, int steps,
              double t_end, OdeMethod method) {
    if (steps < 1) fail(ErrorKind::Usage, "ConfigInvalid", "sampler needs steps >= 1");
    if (!(t_end > 0.0) || t_end >= 1.0) {
        fail(ErrorKind::Usage, "TOutOfRange", "t_end must be in (0,1)");
    }
    double dt = (1.0 - t_end) / steps;
    Tensor z = std::move(z_start);
    for (int s = 0; s < steps; ++s) {
        double t = 1.0 - s * dt;
        if (method == OdeMethod::Euler) {
            Tensor v = v_fn(z, t, cond);
            check_same_shape(v, z, "sample");
            check_finite_step(v, s, "velocity");
            for (size_t e = 0; e < z.data.size(); ++e) z.data[e] -= dt * v.data[e];
        } else {
            Tensor k1 = v_fn(z, t, cond);
            check_same_shape(k1, z, "sample");
            check_finite_step(k1, s, "velocity");
            Tensor z_mid = z;
            for (size_t e = 0; e < z.data.size(); ++e) z_mid.data[e] -= 0.5 * dt * k1.data[e];
            Tensor k2 = v_fn(z_mid, t - 0.5 * dt, cond);
            check_same_shape(k2, z, "sample");
            check_finite_step(k2, s, "velocity");
            for (size_t e = 0; e < z.data.size(); ++e) z.data[e] -= dt * k2.data[e];
        }
        check_finite_step(z, s, "state");
    }
    return z;
}

// ---------------------------------------------------------------------------
// .tns files
// ---------------------------------------------------------------------------

void write_tns(const std::filesystem::path& path, const Tensor& t) {
    t.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Data, "IoError", "cannot write " + path.string());
    out.write("TNS1", 4);
    std::uint8_t dtype = 1;  // f64 little-endian
    std::uint8_t rank = static_cast<std::uint8_t>(t.dims.size());
    out.put(static_cast<char>(dtype));
    out.put(static_cast<char>(rank));
    for (std::uint32_t d : t.dims) {
        char buf[4];
        buf[0] = static_cast<char>(d & 0xFF);
        buf[1] = static_cast<char>((d >> 8) & 0xFF);
        buf[2] = static_cast<char>((d >> 16) & 0xFF);
        buf[3] = static_cast<char>((d >> 24) & 0xFF);
        out.write(buf, 4);
    }
    // Raw little-endian f64 payload (matches the host layout on x86/ARM).
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!out) fail(ErrorKind::Data, "IoError", "short write to " + path.string());
}

Tensor read_tns(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Data, "IoError", "cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "TNS1", 4) != 0) {
        fail(ErrorKind::Data, "SchemaError", path.string() + ": bad .tns magic");
    }
    int dtype = in.get();
    int rank = in.get();
    if (dtype != 1) fail(ErrorKind::Data, "SchemaError", path.string() + ": unsupported dtype");
    if (rank < 0 || rank > 8) fail(ErrorKind::Data, "SchemaError", path.string() + ": bad rank");
    Tensor t;
    size_t n = 1;
    for (int i = 0; i < rank; ++i) {
        unsigned char buf[4];
        in.read(reinterpret_cast<char*>(buf), 4);
        if (!in) fail(ErrorKind::Data, "SchemaError", path.string() + ": truncated dims");
        std::uint32_t d = static_cast<std::uint32_t>(buf[0]) |
                          (static_cast<std::uint32_t>(buf[1]) << 8) |
                          (static_cast<std::uint32_t>(buf[2]) << 16) |
                          (static_cast<std::uint32_t>(buf[3]) << 24);
        t.dims.push_back(d);
        n *= d;
    }
    t.data.resize(n);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) fail(ErrorKind::Data, "SchemaError", path.string() + ": truncated payload");
    t.validate();
    return t;
}

}  // namespace synermed::flowcore
