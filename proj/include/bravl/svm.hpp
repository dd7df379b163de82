#ifndef BRAVL_SVM_HPP
#define BRAVL_SVM_HPP

#include <cstdint>
#include <vector>

#include "bravl/dataset.hpp"
#include "bravl/matrix.hpp"

namespace bravl {

struct SvmConfig {
    double gamma = 1e-2; // RBF width; paper-scale runs use 1e-5
    double c = 1.0;
    double tolerance = 1e-3;
    std::size_t max_iterations = 20000;

    void validate() const;
};

// One-vs-rest RBF SVMs fit by sequential minimal optimization with
// maximal-violating-pair selection. Deterministic given input order.
struct SvmModel {
    Matrix training;                    // all training latents, row-major
    std::vector<std::uint32_t> classes; // ascending
    Matrix coefficients;                // class x row signed dual coefficients
    std::vector<double> bias;
    SvmConfig config;
};

SvmModel svm_fit(const Matrix& latents, const LabelVector& labels, const SvmConfig& cfg);

// one-vs-rest decision value per class for a single latent row
std::vector<double> svm_decision_values(const SvmModel& model, const double* x, std::size_t dim);

// classes ranked by decision value, descending; ties broken toward the lower
// class index
std::vector<std::uint32_t> svm_predict_topk(const SvmModel& model, const double* x, std::size_t dim,
                                            std::size_t k);

} // namespace bravl

#endif
