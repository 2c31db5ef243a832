#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "synermed/domain.hpp"
#include "synermed/flowcore.hpp"

namespace synermed::toynet {

using domain::RngStream;

/// Row-major f64 matrix; rows are batch samples in forward/backward.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    static Matrix from_row(const std::vector<double>& row);

    double& at(size_t r, size_t c) { return data[r * cols + c]; }
    double at(size_t r, size_t c) const { return data[r * cols + c]; }
    std::vector<double> row(size_t r) const;
};

struct Layer {
    Matrix weights;               // out x in
    std::vector<double> bias;     // out
};

/// Dense net: affine layers with ReLU between them and identity at the
/// output. Weights are He-normal (std = sqrt(2/in)), biases zero, drawn in
/// layer order / row-major order from the given stream.
struct MlpNet {
    std::vector<Layer> layers;

    static MlpNet init(const std::vector<size_t>& dims, RngStream& rng);

    size_t in_dim() const { return layers.front().weights.cols; }
    size_t out_dim() const { return layers.back().weights.rows; }
    size_t parameter_count() const;
};

struct ForwardCache {
    Matrix input;
    std::vector<Matrix> pre_activations;   // per layer, before ReLU
    std::vector<Matrix> activations;       // per layer, after ReLU (last = identity)
};

/// Batch forward pass; x is batch x in_dim. The cache retains what backward
/// needs. Errors: DimMismatch.
Matrix forward(const MlpNet& net, const Matrix& x, ForwardCache* cache = nullptr);

struct Gradients {
    std::vector<Layer> layers;   // same shapes as the net
    Matrix d_input;              // batch x in_dim

    void add_scaled(const Gradients& other, double scale);
    void scale(double factor);
};

Gradients zero_gradients(const MlpNet& net, size_t batch = 0);

/// Exact reverse-mode gradients. The ReLU subgradient at 0 is 0.
/// d_loss_d_out is batch x out_dim. Errors: ShapeMismatch.
Gradients backward(const MlpNet& net, const ForwardCache& cache, const Matrix& d_loss_d_out);

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<Layer> m;  // first moments, zero-initialized
    std::vector<Layer> v;  // second moments

    static AdamState for_net(const MlpNet& net, double lr = 1e-3);
};

/// One Adam update with bias correction. Errors: ShapeMismatch.
void adam_step(MlpNet& net, const Gradients& grads, AdamState& state);

struct SoftmaxXent {
    double loss = 0.0;
    std::vector<double> d_logits;  // softmax - one_hot(target)
};

/// Cross-entropy of softmax(logits) against a one-hot target (stable
/// log-sum-exp form). Errors: IndexOutOfRange.
SoftmaxXent softmax_xent(const std::vector<double>& logits, size_t target_index);

/// Checkpointing: one .tns file per parameter tensor plus a JSON topology
/// descriptor listing layer shapes.
void save_net(const MlpNet& net, const std::filesystem::path& dir, const std::string& name);
MlpNet load_net(const std::filesystem::path& dir, const std::string& name);

}  // namespace synermed::toynet
