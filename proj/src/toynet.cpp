#include "synermed/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace synermed::toynet {

Matrix Matrix::from_row(const std::vector<double>& row) {
    Matrix m(1, row.size());
    m.data = row;
    return m;
}

std::vector<double> Matrix::row(size_t r) const {
    return std::vector<double>(data.begin() + static_cast<long>(r * cols),
                               data.begin() + static_cast<long>((r + 1) * cols));
}

MlpNet MlpNet::init(const std::vector<size_t>& dims, RngStream& rng) {
    if (dims.size() < 2) {
        fail(ErrorKind::Usage, "ConfigInvalid", "an MLP needs at least input and output dims");
    }
    MlpNet net;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        size_t in = dims[l];
        size_t out = dims[l + 1];
        Layer layer;
        layer.weights = Matrix(out, in);
        double std_dev = std::sqrt(2.0 / static_cast<double>(in));
        for (double& w : layer.weights.data) w = std_dev * rng.gaussian();
        layer.bias.assign(out, 0.0);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

size_t MlpNet::parameter_count() const {
    size_t n = 0;
    for (const Layer& l : layers) n += l.weights.data.size() + l.bias.size();
    return n;
}

Matrix forward(const MlpNet& net, const Matrix& x, ForwardCache* cache) {
    if (x.cols != net.in_dim()) {
        fail(ErrorKind::Data, "DimMismatch",
             "input dim " + std::to_string(x.cols) + " does not match first layer " +
                 std::to_string(net.in_dim()));
    }
    if (cache) {
        cache->input = x;
        cache->pre_activations.clear();
        cache->activations.clear();
    }
    Matrix current = x;
    for (size_t l = 0; l < net.layers.size(); ++l) {
        const Layer& layer = net.layers[l];
        size_t out_dim = layer.weights.rows;
        size_t in_dim = layer.weights.cols;
        Matrix z(current.rows, out_dim);
        for (size_t r = 0; r < current.rows; ++r) {
            const double* in_row = current.data.data() + r * in_dim;
            double* out_row = z.data.data() + r * out_dim;
            for (size_t o = 0; o < out_dim; ++o) {
                const double* w = layer.weights.data.data() + o * in_dim;
                double acc = layer.bias[o];
                for (size_t i = 0; i < in_dim; ++i) acc += w[i] * in_row[i];
                out_row[o] = acc;
            }
        }
        if (cache) cache->pre_activations.push_back(z);
        bool last = l + 1 == net.layers.size();
        if (!last) {
            for (double& v : z.data) v = v > 0.0 ? v : 0.0;
        }
        if (cache) cache->activations.push_back(z);
        current = std::move(z);
    }
    return current;
}

Gradients zero_gradients(const MlpNet& net, size_t batch) {
    Gradients g;
    for (const Layer& l : net.layers) {
        Layer zl;
        zl.weights = Matrix(l.weights.rows, l.weights.cols);
        zl.bias.assign(l.bias.size(), 0.0);
        g.layers.push_back(std::move(zl));
    }
    g.d_input = Matrix(batch, net.in_dim());
    return g;
}

void Gradients::add_scaled(const Gradients& other, double scale) {
    for (size_t l = 0; l < layers.size(); ++l) {
        for (size_t i = 0; i < layers[l].weights.data.size(); ++i) {
            layers[l].weights.data[i] += scale * other.layers[l].weights.data[i];
        }
        for (size_t i = 0; i < layers[l].bias.size(); ++i) {
            layers[l].bias[i] += scale * other.layers[l].bias[i];
        }
    }
}

void Gradients::scale(double factor) {
    for (auto& layer : layers) {
        for (double& v : layer.weights.data) v *= factor;
        for (double& v : layer.bias) v *= factor;
    }
    for (double& v : d_input.data) v *= factor;
}

Gradients backward(const MlpNet& net, const ForwardCache& cache, const Matrix& d_loss_d_out) {
    size_t n_layers = net.layers.size();
    if (cache.pre_activations.size() != n_layers) {
        fail(ErrorKind::Data, "ShapeMismatch", "cache does not match the network");
    }
    if (d_loss_d_out.rows != cache.input.rows || d_loss_d_out.cols != net.out_dim()) {
        fail(ErrorKind::Data, "ShapeMismatch", "output gradient shape mismatch");
    }

    Gradients grads = zero_gradients(net, cache.input.rows);
    Matrix delta = d_loss_d_out;  // gradient wrt the current layer's output
    for (size_t l = n_layers; l-- > 0;) {
        const Layer& layer = net.layers[l];
        size_t out_dim = layer.weights.rows;
        size_t in_dim = layer.weights.cols;
        bool last = l + 1 == n_layers;

        // Through ReLU (identity at the output layer); subgradient at 0 is 0.
        if (!last) {
            const Matrix& z = cache.pre_activations[l];
            for (size_t i = 0; i < delta.data.size(); ++i) {
                if (z.data[i] <= 0.0) delta.data[i] = 0.0;
            }
        }

        const Matrix& input = l == 0 ? cache.input : cache.activations[l - 1];
        Layer& g = grads.layers[l];
        for (size_t r = 0; r < delta.rows; ++r) {
            const double* d_row = delta.data.data() + r * out_dim;
            const double* in_row = input.data.data() + r * in_dim;
            for (size_t o = 0; o < out_dim; ++o) {
                double d = d_row[o];
                if (d == 0.0) continue;
                double* w_grad = g.weights.data.data() + o * in_dim;
                for (size_t i = 0; i < in_dim; ++i) w_grad[i] += d * in_row[i];
                g.bias[o] += d;
            }
        }

        // delta_prev = delta @ W
        Matrix prev(delta.rows, in_dim);
        for (size_t r = 0; r < delta.rows; ++r) {
            const double* d_row = delta.data.data() + r * out_dim;
            double* p_row = prev.data.data() + r * in_dim;
            for (size_t o = 0; o < out_dim; ++o) {
                double d = d_row[o];
                if (d == 0.0) continue;
                const double* w = layer.weights.data.data() + o * in_dim;
                for (size_t i = 0; i < in_dim; ++i) p_row[i] += d * w[i];
            }
        }
        delta = std::move(prev);
    }
    grads.d_input = std::move(delta);
    return grads;
}

AdamState AdamState::for_net(const MlpNet& net, double lr) {
    AdamState s;
    s.lr = lr;
    for (const Layer& l : net.layers) {
        Layer zero;
        zero.weights = Matrix(l.weights.rows, l.weights.cols);
        zero.bias.assign(l.bias.size(), 0.0);
        s.m.push_back(zero);
        s.v.push_back(std::move(zero));
    }
    return s;
}

void adam_step(MlpNet& net, const Gradients& grads, AdamState& state) {
    if (grads.layers.size() != net.layers.size() || state.m.size() != net.layers.size()) {
        fail(ErrorKind::Data, "ShapeMismatch", "Adam state does not match the network");
    }
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    auto update = [&](double& p, double g, double& m, double& v) {
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g * g;
        double m_hat = m / bc1;
        double v_hat = v / bc2;
        p -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    };

    for (size_t l = 0; l < net.layers.size(); ++l) {
        Layer& layer = net.layers[l];
        const Layer& g = grads.layers[l];
        Layer& m = state.m[l];
        Layer& v = state.v[l];
        if (g.weights.data.size() != layer.weights.data.size()) {
            fail(ErrorKind::Data, "ShapeMismatch", "gradient shape mismatch in Adam step");
        }
        for (size_t i = 0; i < layer.weights.data.size(); ++i) {
            update(layer.weights.data[i], g.weights.data[i], m.weights.data[i],
                   v.weights.data[i]);
        }
        for (size_t i = 0; i < layer.bias.size(); ++i) {
            update(layer.bias[i], g.bias[i], m.bias[i], v.bias[i]);
        }
    }
}

SoftmaxXent softmax_xent(const std::vector<double>& logits, size_t target_index) {
    if (target_index >= logits.size()) {
        fail(ErrorKind::Data, "IndexOutOfRange", "softmax target index out of range");
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - mx);
    double log_denom = std::log(denom);

    SoftmaxXent out;
    out.loss = -(logits[target_index] - mx - log_denom);
    out.d_logits.resize(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        out.d_logits[i] = std::exp(logits[i] - mx - log_denom);
    }
    out.d_logits[target_index] -= 1.0;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_net(const MlpNet& net, const std::filesystem::path& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json topo;
    topo["name"] = name;
    topo["layers"] = nlohmann::ordered_json::array();
    for (size_t l = 0; l < net.layers.size(); ++l) {
        const Layer& layer = net.layers[l];
        nlohmann::ordered_json jl;
        jl["out"] = layer.weights.rows;
        jl["in"] = layer.weights.cols;
        topo["layers"].push_back(std::move(jl));

        flowcore::Tensor w;
        w.dims = {static_cast<std::uint32_t>(layer.weights.rows),
                  static_cast<std::uint32_t>(layer.weights.cols)};
        w.data = layer.weights.data;
        flowcore::write_tns(dir / (name + ".w" + std::to_string(l) + ".tns"), w);

        flowcore::Tensor b;
        b.dims = {static_cast<std::uint32_t>(layer.bias.size())};
        b.data = layer.bias;
        flowcore::write_tns(dir / (name + ".b" + std::to_string(l) + ".tns"), b);
    }
    std::ofstream out(dir / (name + ".topology.json"), std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Data, "IoError", "cannot write topology for " + name);
    out << topo.dump(2) << "\n";
}

MlpNet load_net(const std::filesystem::path& dir, const std::string& name) {
    std::ifstream in(dir / (name + ".topology.json"));
    if (!in) fail(ErrorKind::Data, "IoError", "cannot open topology for " + name);
    nlohmann::json topo;
    try {
        topo = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Data, "SchemaError", name + ": bad topology JSON: " + e.what());
    }
    MlpNet net;
    size_t n_layers = topo.at("layers").size();
    for (size_t l = 0; l < n_layers; ++l) {
        size_t out_dim = topo["layers"][l].at("out").get<size_t>();
        size_t in_dim = topo["layers"][l].at("in").get<size_t>();
        flowcore::Tensor w = flowcore::read_tns(dir / (name + ".w" + std::to_string(l) + ".tns"));
        flowcore::Tensor b = flowcore::read_tns(dir / (name + ".b" + std::to_string(l) + ".tns"));
        if (w.dims.size() != 2 || w.dims[0] != out_dim || w.dims[1] != in_dim ||
            b.data.size() != out_dim) {
            fail(ErrorKind::Data, "ShapeMismatch", name + ": checkpoint shape mismatch");
        }
        Layer layer;
        layer.weights = Matrix(out_dim, in_dim);
        layer.weights.data = std::move(w.data);
        layer.bias = std::move(b.data);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

}  // namespace synermed::toynet
