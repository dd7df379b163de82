#ifndef BRAVL_PREPROCESS_HPP
#define BRAVL_PREPROCESS_HPP

#include <filesystem>
#include <vector>

#include "bravl/dataset.hpp"
#include "bravl/matrix.hpp"

namespace bravl {

struct StabilityReport {
    // mean pairwise Pearson across trials, per voxel; 0 when undefined
    std::vector<double> scores;
    std::vector<std::size_t> selected;
    double ratio = 1.0;
};

// score[v] = mean over all trial pairs of the Pearson correlation between the
// two trials' across-stimuli response vectors at voxel v. Rows must be
// grouped stimulus-major: consecutive blocks of `repeats` rows are the trials
// of one stimulus.
StabilityReport stability_scores(const Matrix& brain, std::size_t repeats);

// Top ceil(ratio * |ROI|) voxels per ROI, ties broken toward the lower voxel
// index; union returned ascending.
std::vector<std::size_t> select_stable(const StabilityReport& report, const RoiMap& roi, double ratio);

struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev; // population (1/N) convention

    std::size_t dim() const { return mean.size(); }
};

NormStats fit_norm(const Matrix& train);
Matrix apply_norm(const NormStats& stats, const Matrix& x);

struct PcaModel {
    Matrix mean;       // 1 x l
    Matrix components; // l x k, orthonormal columns
    std::vector<double> explained_variance_ratio;
    double target_variance = 0.99;

    std::size_t input_dim() const { return components.rows; }
    std::size_t output_dim() const { return components.cols; }
};

// SVD of the centered training matrix; k = smallest component count whose
// cumulative explained-variance ratio reaches the target. Component signs are
// fixed (largest-magnitude coordinate positive) so fits are reproducible.
PcaModel fit_pca(const Matrix& train, double target_variance);
Matrix apply_pca(const PcaModel& model, const Matrix& x);
Matrix inverse_pca(const PcaModel& model, const Matrix& y);

// normalize + PCA, fit on seen-class training rows only
struct ModalityPipeline {
    NormStats norm;
    PcaModel pca;

    Matrix apply(const Matrix& x) const { return apply_pca(pca, apply_norm(norm, x)); }
};

ModalityPipeline fit_modality_pipeline(const Matrix& seen_train, double pca_target);

// Brain side adds per-ROI stability selection in front. Datasets with a
// single training trial per stimulus skip selection entirely.
struct BrainPipeline {
    bool stability_used = false;
    StabilityReport report;
    ModalityPipeline rest;

    Matrix apply(const Matrix& x) const;
};

BrainPipeline fit_brain_pipeline(const Matrix& seen_train, std::size_t repeats, const RoiMap& roi,
                                 double stability_ratio, double pca_target);

struct PreprocModels {
    BrainPipeline brain;
    ModalityPipeline visual;
    ModalityPipeline textual;
    double stability_ratio = 0.15;
    double pca_target = 0.99;
};

// Fits all pipelines on the seen split and maps every block of the dataset
// through them (novel/test/extra apply the seen-fit models unchanged).
PreprocModels fit_preproc(const TrimodalDataset& ds, double stability_ratio, double pca_target);
TrimodalDataset apply_preproc(const PreprocModels& models, const TrimodalDataset& ds);

void save_preproc(const PreprocModels& models, const std::filesystem::path& dir);
PreprocModels load_preproc(const std::filesystem::path& dir);

} // namespace bravl

#endif
