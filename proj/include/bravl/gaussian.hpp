#ifndef BRAVL_GAUSSIAN_HPP
#define BRAVL_GAUSSIAN_HPP

#include <vector>

#include "bravl/dataset.hpp"
#include "bravl/matrix.hpp"

namespace bravl {

// log-variance bounds; keeps PoE precisions from blowing up
constexpr double kLogVarMin = -10.0;
constexpr double kLogVarMax = 10.0;

double clamp_logvar(double lv);

// Diagonal Gaussian over a latent batch: mean and log-variance, one row per
// sample.
struct DiagGaussian {
    Matrix mean;
    Matrix logvar;

    std::size_t batch() const { return mean.rows; }
    std::size_t dim() const { return mean.cols; }

    static DiagGaussian standard(std::size_t batch, std::size_t dim);
};

enum class PosteriorType { poe, moe, mopoe };

PosteriorType posterior_type_from_name(const std::string& name);
const char* posterior_type_name(PosteriorType t);

struct SubsetPosterior {
    std::vector<Modality> subset;
    DiagGaussian gaussian;
};

// Uniformly weighted mixture over modality subsets (7 components for a
// trimodal batch, 3 bimodal, 1 unimodal).
struct JointPosterior {
    std::vector<SubsetPosterior> components;
};

// Canonical subset order: b, v, t, bv, bt, vt, bvt restricted to the present
// modalities.
std::vector<std::vector<Modality>> enumerate_subsets(const std::vector<Modality>& present);

// Precision-weighted product of experts.
DiagGaussian poe_combine(const std::vector<const DiagGaussian*>& experts);

JointPosterior mopoe_build(const std::vector<Modality>& present, const std::vector<const DiagGaussian*>& experts);
JointPosterior build_posterior(PosteriorType type, const std::vector<Modality>& present,
                               const std::vector<const DiagGaussian*>& experts);

// KL(q || N(0,I)) summed over dimensions, mean over the batch.
double kl_standard_normal(const DiagGaussian& g);

// Average of per-component KLs; an upper bound on the intractable mixture KL
// by convexity.
double kl_mixture_upper(const JointPosterior& j);

// mean + exp(logvar/2) * noise
Matrix reparam_sample(const DiagGaussian& g, const Matrix& noise);

// per-row log density, returned as an n x 1 column
Matrix log_prob(const DiagGaussian& g, const Matrix& z);
Matrix mixture_log_prob(const JointPosterior& j, const Matrix& z);

} // namespace bravl

#endif
