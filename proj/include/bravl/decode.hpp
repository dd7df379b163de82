#ifndef BRAVL_DECODE_HPP
#define BRAVL_DECODE_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "bravl/nets.hpp"
#include "bravl/objectives.hpp"
#include "bravl/preprocess.hpp"
#include "bravl/svm.hpp"

namespace bravl {

// Mean of the PoE of the subset's encoder posteriors; deterministic, no
// sampling at decode time. One latent row per feature row.
Matrix embed(const ModelParams& params, const BatchView& features, const std::vector<Modality>& subset);

struct LatentTrainingSet {
    Matrix latents;
    LabelVector labels;
};

// Latents the classifier trains on. For the {v,t} subset the default is the
// union of the {v}, {t} and {v,t} subset means (three latents per novel
// sample); strict_subset restricts to the exact subset.
LatentTrainingSet classifier_latents(const ModelParams& params, const Matrix& visual, const Matrix& textual,
                                     const LabelVector& labels, const std::vector<Modality>& subset,
                                     bool strict_subset = false);

struct DecodeReport {
    std::string modality_subset;
    std::size_t n_test = 0;
    std::vector<std::size_t> k_list;
    std::vector<double> topk_accuracy;
    std::vector<std::uint32_t> classes;
    std::vector<double> per_class_accuracy; // top-1
    std::vector<double> per_class_gain;     // empty without a baseline
    std::vector<std::vector<std::size_t>> confusion;

    double top_k(std::size_t k) const;
};

// Embeds every test brain row through {b}, ranks classes with the SVM, and
// aggregates top-k, per-class and confusion statistics. A baseline report
// yields per-class accuracy gains.
DecodeReport evaluate_decoding(const ModelParams& params, const SvmModel& svm, const Matrix& test_brain,
                               const LabelVector& labels, const std::vector<std::size_t>& k_list,
                               const DecodeReport* baseline = nullptr);

// z = embed({v,t}), then the brain decoder mean.
Matrix cross_modal_generate(const ModelParams& params, const Matrix& visual, const Matrix& textual);

// Mean over brain dimensions of the per-column Pearson correlation between
// real and synthetic responses; zero-variance columns contribute 0.
double pearson_match(const Matrix& real, const Matrix& synthetic);

// Per-voxel contribution weights: |W_PCA * (sum of the encoder first-layer
// weight columns)|.
std::vector<double> voxel_contribution(const PcaModel& pca, const MlpParams& brain_encoder);

Matrix cosine_similarity_matrix(const Matrix& embeddings);

struct CosineSummary {
    double mean = 0.0;
    double stddev = 0.0;
};

CosineSummary offdiagonal_summary(const Matrix& similarity);

void write_decode_report(const DecodeReport& report, const std::filesystem::path& overall_csv,
                         const std::filesystem::path& per_class_csv);
DecodeReport read_decode_report(const std::filesystem::path& overall_csv,
                                const std::filesystem::path& per_class_csv);

} // namespace bravl

#endif
