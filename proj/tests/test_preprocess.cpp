#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bravl/dataset.hpp"
#include "bravl/preprocess.hpp"
#include "bravl/rng.hpp"

using namespace bravl;
namespace fs = std::filesystem;

namespace {

RoiMap single_roi(std::size_t n) {
    RoiMap roi;
    roi.roi_of_voxel.assign(n, "all");
    return roi;
}

} // namespace

TEST_CASE("stability: identical trials score 1") {
    Matrix brain(6, 2); // 3 stimuli x 2 trials
    Rng rng(1);
    for (std::size_t s = 0; s < 3; ++s) {
        const double a = rng.normal(), b = rng.normal();
        for (std::size_t r = 0; r < 2; ++r) {
            brain.at(s * 2 + r, 0) = a;
            brain.at(s * 2 + r, 1) = b;
        }
    }
    const StabilityReport rep = stability_scores(brain, 2);
    CHECK(rep.scores[0] == doctest::Approx(1.0));
    CHECK(rep.scores[1] == doctest::Approx(1.0));
}

TEST_CASE("stability: sign-flipped trial scores -1") {
    Matrix brain(6, 1);
    const double vals[3] = {0.5, -1.0, 2.0};
    for (std::size_t s = 0; s < 3; ++s) {
        brain.at(s * 2 + 0, 0) = vals[s];
        brain.at(s * 2 + 1, 0) = -vals[s];
    }
    const StabilityReport rep = stability_scores(brain, 2);
    CHECK(rep.scores[0] == doctest::Approx(-1.0));
}

TEST_CASE("stability: hand-computed Pearson case") {
    // voxel over 3 stimuli: trial1 = (1,2,3), trial2 = (1,2,4)
    Matrix brain(6, 1);
    const double t1[3] = {1, 2, 3}, t2[3] = {1, 2, 4};
    for (std::size_t s = 0; s < 3; ++s) {
        brain.at(s * 2 + 0, 0) = t1[s];
        brain.at(s * 2 + 1, 0) = t2[s];
    }
    const StabilityReport rep = stability_scores(brain, 2);
    CHECK(rep.scores[0] == doctest::Approx(0.98198).epsilon(1e-4));
}

TEST_CASE("stability: constant voxel gets the 0 sentinel") {
    Matrix brain(6, 1, {3, 3, 3, 3, 3, 3});
    const StabilityReport rep = stability_scores(brain, 2);
    CHECK(rep.scores[0] == 0.0);
}

TEST_CASE("stability: input errors") {
    Matrix brain(6, 1);
    CHECK_THROWS(stability_scores(brain, 1));
    CHECK_THROWS(stability_scores(brain, 4)); // 6 % 4 != 0
}

TEST_CASE("selection budgets are per ROI") {
    StabilityReport rep;
    rep.scores = {0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05,
                  0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05};
    RoiMap roi;
    for (int i = 0; i < 10; ++i) roi.roi_of_voxel.push_back("a");
    for (int i = 0; i < 10; ++i) roi.roi_of_voxel.push_back("b");

    const auto selected = select_stable(rep, roi, 0.15);
    CHECK(selected == std::vector<std::size_t>{0, 1, 10, 11}); // ceil(1.5) = 2 per ROI

    const auto all = select_stable(rep, roi, 1.0);
    CHECK(all.size() == 20);
}

TEST_CASE("selection tie-break picks the lower voxel index") {
    StabilityReport rep;
    rep.scores = {0.9, 0.9, 0.1};
    RoiMap roi = single_roi(3);
    const auto selected = select_stable(rep, roi, 0.34); // ceil(1.02) = 2
    CHECK(selected == std::vector<std::size_t>{0, 1});
}

TEST_CASE("removing one ROI leaves other selections unchanged") {
    Rng rng(5);
    StabilityReport rep;
    for (int i = 0; i < 24; ++i) rep.scores.push_back(rng.uniform());
    RoiMap both;
    for (int i = 0; i < 12; ++i) both.roi_of_voxel.push_back("a");
    for (int i = 0; i < 12; ++i) both.roi_of_voxel.push_back("b");
    const auto full = select_stable(rep, both, 0.4);

    StabilityReport only_a;
    only_a.scores.assign(rep.scores.begin(), rep.scores.begin() + 12);
    const auto sel_a = select_stable(only_a, single_roi(12), 0.4);

    std::vector<std::size_t> full_a;
    for (std::size_t v : full)
        if (v < 12) full_a.push_back(v);
    CHECK(full_a == sel_a);
}

TEST_CASE("selection input errors") {
    StabilityReport rep;
    rep.scores = {0.5, 0.5};
    CHECK_THROWS(select_stable(rep, single_roi(2), 0.0));
    CHECK_THROWS(select_stable(rep, single_roi(3), 0.5)); // map size mismatch
}

TEST_CASE("normalization hand case and degenerate column") {
    Matrix train(3, 2, {2, 7, 4, 7, 6, 7});
    const NormStats stats = fit_norm(train);
    CHECK(stats.mean[0] == doctest::Approx(4.0));
    CHECK(stats.stddev[0] == doctest::Approx(std::sqrt(8.0 / 3.0)));

    const Matrix normed = apply_norm(stats, train);
    CHECK(normed.at(0, 0) == doctest::Approx(-1.224744871).epsilon(1e-6));
    CHECK(normed.at(1, 0) == doctest::Approx(0.0));
    CHECK(normed.at(2, 0) == doctest::Approx(1.224744871).epsilon(1e-6));
    // constant column: std floored, output zero
    CHECK(normed.at(0, 1) == 0.0);
    CHECK(normed.at(2, 1) == 0.0);

    Matrix one_row(1, 2);
    CHECK_THROWS(fit_norm(one_row));
}

TEST_CASE("normalized training data has zero mean unit variance") {
    Rng rng(8);
    const Matrix train = rng.normal_matrix(50, 4, 3.0);
    const NormStats stats = fit_norm(train);
    const Matrix normed = apply_norm(stats, train);
    const NormStats check = fit_norm(normed);
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(check.mean[c] == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(check.stddev[c] == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("pca component count follows the variance target") {
    // sample covariance diag(9, 1): ratios 0.9 / 0.1
    Matrix train(4, 2, {3, 0, -3, 0, 0, 1, 0, -1});
    const PcaModel k1 = fit_pca(train, 0.89);
    CHECK(k1.output_dim() == 1);
    const PcaModel k2 = fit_pca(train, 0.95);
    CHECK(k2.output_dim() == 2);
    CHECK(k1.explained_variance_ratio[0] == doctest::Approx(0.9));
}

TEST_CASE("pca on rank-1 data keeps one component for any target") {
    Matrix train(5, 3);
    const double base[3] = {1.0, -2.0, 0.5};
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 3; ++c) train.at(r, c) = static_cast<double>(r) * base[c];
    CHECK(fit_pca(train, 0.5).output_dim() == 1);
    CHECK(fit_pca(train, 1.0).output_dim() == 1);
}

TEST_CASE("pca full-rank reconstruction at target 1") {
    Rng rng(13);
    const Matrix train = rng.normal_matrix(20, 5);
    const PcaModel model = fit_pca(train, 1.0);
    const Matrix recon = inverse_pca(model, apply_pca(model, train));
    CHECK(max_abs_diff(recon, train) < 1e-5);
}

TEST_CASE("pca components are orthonormal and the fit is deterministic") {
    Rng rng(14);
    const Matrix train = rng.normal_matrix(30, 6);
    const PcaModel a = fit_pca(train, 0.99);
    const PcaModel b = fit_pca(train, 0.99);
    CHECK(a.components.data == b.components.data);

    const Matrix gram = matmul(transpose(a.components), a.components);
    for (std::size_t i = 0; i < gram.rows; ++i)
        for (std::size_t j = 0; j < gram.cols; ++j)
            CHECK(gram.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-6));

    // sign convention: largest-magnitude coordinate positive
    for (std::size_t j = 0; j < a.components.cols; ++j) {
        double best = 0.0;
        for (std::size_t i = 0; i < a.components.rows; ++i)
            if (std::abs(a.components.at(i, j)) > std::abs(best)) best = a.components.at(i, j);
        CHECK(best > 0.0);
    }
}

TEST_CASE("pca projection preserves at least the target variance") {
    Rng rng(15);
    for (int rep = 0; rep < 5; ++rep) {
        const Matrix train = rng.normal_matrix(40, 8);
        const PcaModel model = fit_pca(train, 0.9);
        const Matrix proj = apply_pca(model, train);
        double total = 0.0, kept = 0.0;
        const NormStats all = fit_norm(train);
        for (double s : all.stddev) total += s * s;
        const NormStats post = fit_norm(proj);
        for (double s : post.stddev) kept += s * s;
        CHECK(kept / total >= 0.9 - 1e-9);
    }
    CHECK_THROWS(fit_pca(Matrix(4, 3), 0.99)); // all-zero training matrix
}

TEST_CASE("appending test rows changes the fitted stats") {
    Rng rng(16);
    const Matrix train = rng.normal_matrix(25, 4);
    const Matrix test = rng.normal_matrix(10, 4, 2.5);
    const NormStats train_only = fit_norm(train);
    const Matrix both = vstack({&train, &test});
    const NormStats with_test = fit_norm(both);
    double delta = 0.0;
    for (std::size_t c = 0; c < 4; ++c)
        delta += std::abs(train_only.mean[c] - with_test.mean[c]) +
                 std::abs(train_only.stddev[c] - with_test.stddev[c]);
    CHECK(delta > 1e-6);

    const PcaModel pca_train = fit_pca(train, 0.99);
    const PcaModel pca_both = fit_pca(both, 0.99);
    CHECK(max_abs_diff(pca_train.mean, pca_both.mean) > 1e-9);
}

TEST_CASE("brain pipeline skips stability selection with a single trial") {
    Rng rng(17);
    const Matrix brain = rng.normal_matrix(20, 6);
    const BrainPipeline p = fit_brain_pipeline(brain, 1, single_roi(6), 0.15, 0.99);
    CHECK_FALSE(p.stability_used);
    CHECK(p.apply(brain).rows == 20);
}

TEST_CASE("full preprocessing pipeline and persistence") {
    SynthConfig cfg;
    cfg.n_seen_classes = 6;
    cfg.n_novel_classes = 3;
    cfg.samples_per_class = 5;
    cfg.seed = 2;
    const TrimodalDataset ds = synth_generate(cfg);
    const PreprocModels models = fit_preproc(ds, 0.5, 0.99);
    const TrimodalDataset out = apply_preproc(models, ds);

    CHECK(out.seen.brain.rows == ds.seen.brain.rows);
    CHECK(out.seen.brain.cols == models.brain.rest.pca.output_dim());
    CHECK(out.test->brain.cols == out.seen.brain.cols);
    CHECK(out.novel.visual.cols == models.visual.pca.output_dim());

    const fs::path dir = fs::temp_directory_path() / "bravl_test_preproc";
    fs::remove_all(dir);
    save_preproc(models, dir);
    const PreprocModels loaded = load_preproc(dir);
    const TrimodalDataset out2 = apply_preproc(loaded, ds);
    CHECK(out2.seen.brain.data == out.seen.brain.data);
    CHECK(out2.novel.textual.data == out.novel.textual.data);
    CHECK(loaded.brain.report.selected == models.brain.report.selected);
}

TEST_CASE("stability selection finds the signal dimensions") {
    SynthConfig cfg;
    cfg.n_seen_classes = 8;
    cfg.n_novel_classes = 2;
    cfg.samples_per_class = 10;
    cfg.repeats_per_stimulus = 3;
    cfg.seed = 21;
    const TrimodalDataset ds = synth_generate(cfg);
    const std::vector<bool> noise_dim = synth_noise_dims(cfg);

    const StabilityReport rep = stability_scores(ds.seen.brain, 3);
    const auto selected = select_stable(rep, *ds.roi_map, 0.5);
    std::size_t signal = 0;
    for (std::size_t v : selected)
        if (!noise_dim[v]) ++signal;
    CHECK(static_cast<double>(signal) / static_cast<double>(selected.size()) >= 0.9);
}
