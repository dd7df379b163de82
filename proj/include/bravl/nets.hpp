#ifndef BRAVL_NETS_HPP
#define BRAVL_NETS_HPP

#include <array>
#include <cstdint>
#include <functional>

#include "bravl/gaussian.hpp"
#include "bravl/graph.hpp"
#include "bravl/matrix.hpp"

namespace bravl {

enum class Activation { relu, identity };

// Two-hidden-layer MLP; hidden layers rectified, output linear.
struct MlpParams {
    std::vector<Matrix> weights; // each in x out
    std::vector<Matrix> biases;  // each 1 x out
    Activation activation = Activation::relu;

    std::size_t input_dim() const { return weights.front().rows; }
    std::size_t output_dim() const { return weights.back().cols; }
    std::size_t tensor_count() const { return weights.size() + biases.size(); }
};

std::size_t param_count(const MlpParams& p);

struct ModalityDims {
    std::array<std::size_t, 3> dim = {0, 0, 0}; // indexed by Modality

    std::size_t& operator[](Modality m) { return dim[static_cast<std::size_t>(m)]; }
    std::size_t operator[](Modality m) const { return dim[static_cast<std::size_t>(m)]; }
};

struct NetDims {
    ModalityDims feature;
    ModalityDims hidden;
    std::size_t latent = 32;
};

// Encoders E_m emit mean and log-variance (2 x latent outputs), decoders D_m
// emit feature means, auxiliary nets Q_m map decoder output back to a latent
// posterior and mirror the encoder topology.
struct ModelParams {
    std::array<MlpParams, 3> encoders;
    std::array<MlpParams, 3> decoders;
    std::array<MlpParams, 3> aux;
    std::size_t latent_dim = 0;

    MlpParams& encoder(Modality m) { return encoders[static_cast<std::size_t>(m)]; }
    const MlpParams& encoder(Modality m) const { return encoders[static_cast<std::size_t>(m)]; }
    MlpParams& decoder(Modality m) { return decoders[static_cast<std::size_t>(m)]; }
    const MlpParams& decoder(Modality m) const { return decoders[static_cast<std::size_t>(m)]; }
    MlpParams& aux_net(Modality m) { return aux[static_cast<std::size_t>(m)]; }
    const MlpParams& aux_net(Modality m) const { return aux[static_cast<std::size_t>(m)]; }
};

// weights uniform in +-sqrt(6/fan_in), biases zero; deterministic per seed
ModelParams init_params(const NetDims& dims, std::uint64_t seed);

// Gradient accumulators shaped like the parameters they differentiate.
using GradientSet = ModelParams;
GradientSet zeros_like(const ModelParams& p);
void zero_grads(GradientSet& g);

enum class ParamGroup { encoders_decoders, aux, all };

// Fixed traversal order: encoders b,v,t then decoders b,v,t then aux b,v,t;
// within an MLP, W0,b0,W1,b1,W2,b2.
void for_each_tensor(ModelParams& p, ParamGroup group, const std::function<void(Matrix&)>& fn);
void for_each_tensor(const ModelParams& p, ParamGroup group, const std::function<void(const Matrix&)>& fn);
void for_each_tensor_pair(ModelParams& a, ModelParams& b, ParamGroup group,
                          const std::function<void(Matrix&, Matrix&)>& fn);

// FNV-1a over the exact bytes of a parameter group; used to assert stage
// isolation.
std::uint64_t hash_tensors(const ModelParams& p, ParamGroup group);

// --- plain (no-graph) forward passes -------------------------------------

Matrix mlp_forward(const MlpParams& p, const Matrix& x);
DiagGaussian encode(const MlpParams& enc, const Matrix& x);
Matrix decode(const MlpParams& dec, const Matrix& z);
DiagGaussian aux_posterior(const MlpParams& aux, const Matrix& xhat);

// --- graph-bound forward passes -------------------------------------------

struct BoundMlp {
    std::vector<Graph::Var> weights;
    std::vector<Graph::Var> biases;
    Activation activation = Activation::relu;
};

// grads == nullptr binds the net as constants (frozen stage)
BoundMlp bind_mlp(Graph& g, const MlpParams& p, MlpParams* grads);
Graph::Var mlp_forward(Graph& g, const BoundMlp& net, Graph::Var x);

struct GaussianVars {
    Graph::Var mean;
    Graph::Var logvar;
};

GaussianVars encode_graph(Graph& g, const BoundMlp& enc, Graph::Var x, std::size_t latent_dim);
GaussianVars aux_graph(Graph& g, const BoundMlp& aux, Graph::Var xhat, std::size_t latent_dim);

// --- optimizer -------------------------------------------------------------

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

AdamState make_adam_state(const ModelParams& p, ParamGroup group);

// One ascent step (objectives are maximized) over the chosen group.
void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state, ParamGroup group, double lr);

} // namespace bravl

#endif
