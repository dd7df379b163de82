#ifndef BRAVL_OBJECTIVES_HPP
#define BRAVL_OBJECTIVES_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "bravl/gaussian.hpp"
#include "bravl/nets.hpp"

namespace bravl {

// One minibatch: feature blocks for the modalities it carries. Modality
// order is canonical (b, v, t) regardless of insertion order.
struct BatchView {
    std::array<std::optional<Matrix>, 3> features;

    void set(Modality m, Matrix x) { features[static_cast<std::size_t>(m)] = std::move(x); }
    bool has(Modality m) const { return features[static_cast<std::size_t>(m)].has_value(); }
    const Matrix& get(Modality m) const { return *features[static_cast<std::size_t>(m)]; }

    std::vector<Modality> present() const;
    std::size_t rows() const;
    void validate() const;
};

struct ObjectiveConfig {
    double lambda1 = 0.001; // intra-modality MI weight
    double lambda2 = 0.001; // inter-modality MI weight
    std::size_t cubo_k = 30;
    double beta = 1.0; // KL annealing weight, applies to the ELBO KL term only
    std::size_t negatives_per_type = 1;
    std::array<double, 3> recon_weights = {1.0, 1.0, 1.0};
    PosteriorType posterior = PosteriorType::mopoe;
    // average the reconstruction over every mixture component instead of
    // sampling one component per row
    bool per_subset_recon = false;

    void validate() const;
};

struct ObjectiveBreakdown {
    double elbo = 0.0;
    std::array<double, 3> recon = {0.0, 0.0, 0.0};
    double kl = 0.0;
    double intra = 0.0;
    double inter = 0.0;
    double inter_positive = 0.0;
    double inter_negative = 0.0;
    std::vector<double> inter_negative_types;
    double total = 0.0;
    double beta = 1.0;
};

// Which parameters receive gradients during an evaluation.
enum class GradStage {
    none,       // value only
    aux_only,   // stage 1: ascend the auxiliary posteriors, model frozen
    model_only, // stage 2: ascend encoders/decoders, auxiliaries frozen
    all,        // gradient checking
};

// unit-variance Gaussian log-likelihood, summed over dims, mean over batch
double recon_loglik(const Matrix& x, const Matrix& xhat);

// The six negative tuple types on trimodal batches (which modality blocks get
// shifted), two on bimodal, none on unimodal.
std::vector<std::vector<Modality>> negative_types(const std::vector<Modality>& present);

// Multimodal ELBO with the subset-mixture posterior: one component sampled
// uniformly per row, reparameterized once, decoded through every present
// modality.
double elbo(const BatchView& batch, const ModelParams& params, const ObjectiveConfig& cfg,
            std::uint64_t noise_seed, GradientSet* grads = nullptr, GradStage stage = GradStage::all);

// Sum over present modalities of E[log Q_m(z | xhat_m)] on the shared
// posterior sample; the latent entropy term is constant and omitted.
double intra_mi(const BatchView& batch, const ModelParams& params, const ObjectiveConfig& cfg,
                std::uint64_t noise_seed, GradientSet* grads = nullptr, GradStage stage = GradStage::all);

struct CuboResult {
    double cubo = 0.0;     // 0.5 * (logsumexp(2 w_k) - ln K), mean over batch
    double iw_elbo = 0.0;  // mean of the same importance weights w_k
};

// Importance weights w_k = log p(z_k) + sum_m log p(x_m|z_k) - log q(z_k|X)
// over K mixture-posterior draws, entirely in log space.
CuboResult cubo(const BatchView& batch, const ModelParams& params, const ObjectiveConfig& cfg,
                std::uint64_t noise_seed, GradientSet* grads = nullptr, GradStage stage = GradStage::all);

// Contrastive surrogate: pos_coef * elbo(positive) minus, per negative type,
// the logsumexp over that type's shifted tuples of their CUBO values.
double inter_mi(const BatchView& batch, const ModelParams& params, const ObjectiveConfig& cfg,
                std::uint64_t noise_seed, GradientSet* grads = nullptr, GradStage stage = GradStage::all);

// The posterior sample the ELBO and intra term share for a given seed;
// exposed so verification code can recompute those terms independently.
Matrix shared_posterior_sample(const BatchView& batch, const ModelParams& params, const ObjectiveConfig& cfg,
                               std::uint64_t noise_seed);

// L = elbo + lambda1 * intra + lambda2 * inter, sharing one posterior draw
// between the ELBO and the intra term, and one set of CUBO draws across all
// negative tuples.
ObjectiveBreakdown total_objective(const BatchView& batch, const ModelParams& params, const ObjectiveConfig& cfg,
                                   std::uint64_t noise_seed, GradientSet* grads = nullptr,
                                   GradStage stage = GradStage::all);

} // namespace bravl

#endif
