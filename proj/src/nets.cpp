#include "bravl/nets.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "bravl/rng.hpp"

namespace bravl {

std::size_t param_count(const MlpParams& p) {
    std::size_t n = 0;
    for (const Matrix& w : p.weights) n += w.size();
    for (const Matrix& b : p.biases) n += b.size();
    return n;
}

namespace {

MlpParams init_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    MlpParams p;
    const std::size_t dims[4] = {in, hidden, hidden, out};
    for (int layer = 0; layer < 3; ++layer) {
        const std::size_t fan_in = dims[layer];
        const std::size_t fan_out = dims[layer + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        Matrix w(fan_in, fan_out);
        for (double& x : w.data) x = rng.uniform(-bound, bound);
        p.weights.push_back(std::move(w));
        p.biases.push_back(Matrix(1, fan_out));
    }
    return p;
}

} // namespace

ModelParams init_params(const NetDims& dims, std::uint64_t seed) {
    Rng rng(seed);
    ModelParams p;
    p.latent_dim = dims.latent;
    for (Modality m : kAllModalities)
        p.encoder(m) = init_mlp(dims.feature[m], dims.hidden[m], 2 * dims.latent, rng);
    for (Modality m : kAllModalities)
        p.decoder(m) = init_mlp(dims.latent, dims.hidden[m], dims.feature[m], rng);
    for (Modality m : kAllModalities)
        p.aux_net(m) = init_mlp(dims.feature[m], dims.hidden[m], 2 * dims.latent, rng);
    return p;
}

GradientSet zeros_like(const ModelParams& p) {
    GradientSet g = p;
    for_each_tensor(g, ParamGroup::all, [](Matrix& m) { std::fill(m.data.begin(), m.data.end(), 0.0); });
    return g;
}

void zero_grads(GradientSet& g) {
    for_each_tensor(g, ParamGroup::all, [](Matrix& m) { std::fill(m.data.begin(), m.data.end(), 0.0); });
}

namespace {

template <typename Params, typename Fn>
void walk_group(Params& p, ParamGroup group, Fn&& fn) {
    auto walk_mlp = [&](auto& mlp) {
        for (std::size_t i = 0; i < mlp.weights.size(); ++i) {
            fn(mlp.weights[i]);
            fn(mlp.biases[i]);
        }
    };
    if (group == ParamGroup::encoders_decoders || group == ParamGroup::all) {
        for (auto& mlp : p.encoders) walk_mlp(mlp);
        for (auto& mlp : p.decoders) walk_mlp(mlp);
    }
    if (group == ParamGroup::aux || group == ParamGroup::all)
        for (auto& mlp : p.aux) walk_mlp(mlp);
}

} // namespace

void for_each_tensor(ModelParams& p, ParamGroup group, const std::function<void(Matrix&)>& fn) {
    walk_group(p, group, fn);
}

void for_each_tensor(const ModelParams& p, ParamGroup group, const std::function<void(const Matrix&)>& fn) {
    walk_group(p, group, fn);
}

void for_each_tensor_pair(ModelParams& a, ModelParams& b, ParamGroup group,
                          const std::function<void(Matrix&, Matrix&)>& fn) {
    std::vector<Matrix*> lhs, rhs;
    walk_group(a, group, [&](Matrix& m) { lhs.push_back(&m); });
    walk_group(b, group, [&](Matrix& m) { rhs.push_back(&m); });
    if (lhs.size() != rhs.size()) throw std::invalid_argument("for_each_tensor_pair: structure mismatch");
    for (std::size_t i = 0; i < lhs.size(); ++i) fn(*lhs[i], *rhs[i]);
}

std::uint64_t hash_tensors(const ModelParams& p, ParamGroup group) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for_each_tensor(p, group, [&](const Matrix& m) { mix(m.data.data(), m.data.size() * sizeof(double)); });
    return h;
}

Matrix mlp_forward(const MlpParams& p, const Matrix& x) {
    if (x.cols != p.input_dim()) throw std::invalid_argument("mlp_forward: input dimension mismatch");
    Matrix h = x;
    for (std::size_t layer = 0; layer < p.weights.size(); ++layer) {
        Matrix next = matmul(h, p.weights[layer]);
        for (std::size_t r = 0; r < next.rows; ++r)
            for (std::size_t c = 0; c < next.cols; ++c) next.at(r, c) += p.biases[layer].at(0, c);
        if (layer + 1 < p.weights.size() && p.activation == Activation::relu)
            for (double& v : next.data) v = v > 0.0 ? v : 0.0;
        h = std::move(next);
    }
    return h;
}

DiagGaussian encode(const MlpParams& enc, const Matrix& x) {
    const Matrix out = mlp_forward(enc, x);
    if (out.cols % 2 != 0) throw std::invalid_argument("encode: output width must be 2 x latent");
    const std::size_t latent = out.cols / 2;
    DiagGaussian g{Matrix(out.rows, latent), Matrix(out.rows, latent)};
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t c = 0; c < latent; ++c) {
            g.mean.at(r, c) = out.at(r, c);
            g.logvar.at(r, c) = clamp_logvar(out.at(r, latent + c));
        }
    return g;
}

Matrix decode(const MlpParams& dec, const Matrix& z) { return mlp_forward(dec, z); }

DiagGaussian aux_posterior(const MlpParams& aux, const Matrix& xhat) { return encode(aux, xhat); }

BoundMlp bind_mlp(Graph& g, const MlpParams& p, MlpParams* grads) {
    BoundMlp net;
    net.activation = p.activation;
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        net.weights.push_back(g.param(p.weights[i], grads ? &grads->weights[i] : nullptr));
        net.biases.push_back(g.param(p.biases[i], grads ? &grads->biases[i] : nullptr));
    }
    return net;
}

Graph::Var mlp_forward(Graph& g, const BoundMlp& net, Graph::Var x) {
    Graph::Var h = x;
    for (std::size_t layer = 0; layer < net.weights.size(); ++layer) {
        const bool rectify = layer + 1 < net.weights.size() && net.activation == Activation::relu;
        h = g.affine(h, net.weights[layer], net.biases[layer], rectify);
    }
    return h;
}

GaussianVars encode_graph(Graph& g, const BoundMlp& enc, Graph::Var x, std::size_t latent_dim) {
    const Graph::Var out = mlp_forward(g, enc, x);
    GaussianVars gv;
    gv.mean = g.slice_cols(out, 0, latent_dim);
    gv.logvar = g.clamp(g.slice_cols(out, latent_dim, 2 * latent_dim), kLogVarMin, kLogVarMax);
    return gv;
}

GaussianVars aux_graph(Graph& g, const BoundMlp& aux, Graph::Var xhat, std::size_t latent_dim) {
    return encode_graph(g, aux, xhat, latent_dim);
}

AdamState make_adam_state(const ModelParams& p, ParamGroup group) {
    AdamState s;
    for_each_tensor(p, group, [&](const Matrix& m) {
        s.m.push_back(Matrix::zeros(m.rows, m.cols));
        s.v.push_back(Matrix::zeros(m.rows, m.cols));
    });
    return s;
}

void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state, ParamGroup group, double lr) {
    std::vector<Matrix*> ps;
    std::vector<const Matrix*> gs;
    walk_group(params, group, [&](Matrix& m) { ps.push_back(&m); });
    walk_group(grads, group, [&](const Matrix& m) { gs.push_back(&m); });
    if (ps.size() != state.m.size()) throw std::invalid_argument("adam_step: state does not match group");

    state.step += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < ps.size(); ++t) {
        Matrix& p = *ps[t];
        const Matrix& g = *gs[t];
        Matrix& m = state.m[t];
        Matrix& v = state.v[t];
        if (!p.same_shape(g)) throw std::invalid_argument("adam_step: gradient shape mismatch");
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * g.data[i];
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] += lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

} // namespace bravl
