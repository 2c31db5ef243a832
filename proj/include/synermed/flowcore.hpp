#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "synermed/domain.hpp"

namespace synermed::flowcore {

/// Flat row-major f64 tensor. 64-bit throughout so the exactness tolerances
/// of the flow tests (1e-12, 1e-9) are attainable.
struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::uint32_t> d, double fill = 0.0);
    static Tensor from_values(std::vector<double> values);  // rank-1

    size_t size() const { return data.size(); }
    void validate() const;  // shape consistency + finiteness
};

void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

/// z_t = (1-t) z0 + t z1, elementwise. Errors: DimMismatch, TOutOfRange.
Tensor interpolate(const Tensor& z0, const Tensor& z1, double t);

/// The flow-matching regression target z1 - z0.
Tensor fm_target(const Tensor& z0, const Tensor& z1);

/// Mean over elements of (v_pred - (z1 - z0))^2.
double fm_loss(const Tensor& v_pred, const Tensor& z0, const Tensor& z1);

/// Closed-form minimizer of the flow-matching loss for a finite dataset of
/// clean points with z1 ~ N(0, I): a posterior-weighted mixture of per-point
/// straight-line velocities,
///   v*(z, t) = sum_i w_i (z - z0_i) / t,
///   w_i proportional to exp(-||z - (1-t) z0_i||^2 / (2 t^2)),
/// normalized via log-sum-exp. Errors: EmptyDataset, TOutOfRange.
Tensor oracle_velocity(const std::vector<Tensor>& dataset, const Tensor& z, double t);

enum class OdeMethod { Euler, Midpoint };

using VelocityFn = std::function<Tensor(const Tensor& z, double t, const Tensor& cond)>;

/// Integrates dz/dt = v(z, t, cond) from t = 1 down to t_end on a uniform
/// grid (z_t runs data -> noise as t goes 0 -> 1, so sampling runs backward).
/// Euler: z <- z - dt * v; midpoint: classical two-stage with the same sign.
/// Errors: NonFinite (with the failing step index).
Tensor sample(const VelocityFn& v_fn, Tensor z_start, const Tensor& cond, int steps,
              double t_end, OdeMethod method);

/// ".tns" tensor file: magic "TNS1", u8 dtype code (1 = f64 little-endian),
/// u8 rank, then rank u32 dims (little-endian), then raw data.
void write_tns(const std::filesystem::path& path, const Tensor& t);
Tensor read_tns(const std::filesystem::path& path);

}  // namespace synermed::flowcore
