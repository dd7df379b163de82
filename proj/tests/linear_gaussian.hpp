#ifndef BRAVL_TESTS_LINEAR_GAUSSIAN_HPP
#define BRAVL_TESTS_LINEAR_GAUSSIAN_HPP

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

#include "bravl/objectives.hpp"
#include "bravl/rng.hpp"

namespace bravl::testing {

// Linear-Gaussian model with a tractable marginal: p(z) = N(0, I),
// x_m = A_m z + unit-variance noise with diagonal A_m. The exact joint
// posterior is a diagonal Gaussian whose parameters are linear in x, so it
// installs exactly into identity-activation encoders as a product of
// per-modality experts (expert precision a_mj^2 + 1/M). With that posterior
// every importance weight equals log p(X) and the bound sandwich collapses.
struct LinearGaussianToy {
    ModelParams params;
    BatchView batch;
    ObjectiveConfig cfg;
    double log_marginal = 0.0; // mean over batch rows
    std::vector<Modality> modalities;
};

inline MlpParams linear_mlp(const Matrix& combined_weight, const Matrix& bias) {
    // identity-activation stack that composes to x * W + b
    MlpParams p;
    p.activation = Activation::identity;
    const std::size_t in = combined_weight.rows;
    p.weights = {Matrix::identity(in), Matrix::identity(in), combined_weight};
    p.biases = {Matrix(1, in), Matrix(1, in), bias};
    return p;
}

inline LinearGaussianToy make_linear_gaussian(std::uint64_t seed, std::size_t latent, std::size_t n_modalities,
                                              std::size_t rows, std::size_t cubo_k, double mean_perturb = 0.0) {
    Rng rng(seed);
    LinearGaussianToy toy;
    toy.modalities.assign(kAllModalities.begin(), kAllModalities.begin() + n_modalities);

    std::vector<std::vector<double>> a(n_modalities, std::vector<double>(latent));
    for (auto& row : a)
        for (double& v : row) v = 0.5 + rng.uniform(); // keep precisions moderate

    // observations
    Matrix zs(rows, latent);
    for (double& v : zs.data) v = rng.normal();
    std::vector<Matrix> xs;
    for (std::size_t m = 0; m < n_modalities; ++m) {
        Matrix x(rows, latent);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < latent; ++j)
                x.at(r, j) = a[m][j] * zs.at(r, j) + rng.normal();
        xs.push_back(std::move(x));
    }

    // encoders: expert mean diag(a/lambda) x, logvar -log(lambda)
    const double prior_share = 1.0 / static_cast<double>(n_modalities);
    NetDims dims;
    dims.latent = latent;
    for (Modality m : kAllModalities) {
        dims.feature[m] = latent;
        dims.hidden[m] = latent;
    }
    toy.params = init_params(dims, seed);
    toy.params.latent_dim = latent;
    for (std::size_t m = 0; m < n_modalities; ++m) {
        Matrix w(latent, 2 * latent);
        Matrix b(1, 2 * latent);
        for (std::size_t j = 0; j < latent; ++j) {
            const double lambda = a[m][j] * a[m][j] + prior_share;
            w.at(j, j) = a[m][j] / lambda;
            b.at(0, latent + j) = -std::log(lambda);
            b.at(0, j) = mean_perturb;
        }
        toy.params.encoders[static_cast<std::size_t>(toy.modalities[m])] = linear_mlp(w, b);

        Matrix dw(latent, latent);
        for (std::size_t j = 0; j < latent; ++j) dw.at(j, j) = a[m][j];
        toy.params.decoders[static_cast<std::size_t>(toy.modalities[m])] = linear_mlp(dw, Matrix(1, latent));
        toy.batch.set(toy.modalities[m], xs[m]);
    }

    toy.cfg.posterior = PosteriorType::poe;
    toy.cfg.lambda1 = 0.0;
    toy.cfg.lambda2 = 0.0;
    toy.cfg.beta = 1.0;
    toy.cfg.cubo_k = cubo_k;

    // independent oracle: X row ~ N(0, A A^T + I) with A the stacked diagonal
    // maps; evaluate the joint density directly
    const std::size_t total_dim = n_modalities * latent;
    Eigen::MatrixXd stacked = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(total_dim),
                                                    static_cast<Eigen::Index>(latent));
    for (std::size_t m = 0; m < n_modalities; ++m)
        for (std::size_t j = 0; j < latent; ++j)
            stacked(static_cast<Eigen::Index>(m * latent + j), static_cast<Eigen::Index>(j)) = a[m][j];
    const Eigen::MatrixXd cov = stacked * stacked.transpose() +
                                Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(total_dim),
                                                          static_cast<Eigen::Index>(total_dim));
    const Eigen::LLT<Eigen::MatrixXd> chol(cov);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < chol.matrixL().rows(); ++i)
        log_det += 2.0 * std::log(chol.matrixL()(i, i));

    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        Eigen::VectorXd x(static_cast<Eigen::Index>(total_dim));
        for (std::size_t m = 0; m < n_modalities; ++m)
            for (std::size_t j = 0; j < latent; ++j)
                x(static_cast<Eigen::Index>(m * latent + j)) = xs[m].at(r, j);
        const double quad = x.dot(chol.solve(x));
        acc += -0.5 * (quad + log_det + static_cast<double>(total_dim) * std::log(2.0 * std::numbers::pi));
    }
    toy.log_marginal = acc / static_cast<double>(rows);
    return toy;
}

} // namespace bravl::testing

#endif
