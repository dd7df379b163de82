#include "bravl/preprocess.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bravl/io.hpp"

namespace bravl {

StabilityReport stability_scores(const Matrix& brain, std::size_t repeats) {
    if (repeats < 2) throw std::invalid_argument("stability_scores: needs at least 2 trials per stimulus");
    if (brain.rows % repeats != 0) throw std::invalid_argument("stability_scores: rows not divisible by repeats");
    const std::size_t n_stimuli = brain.rows / repeats;

    StabilityReport report;
    report.scores.assign(brain.cols, 0.0);

    std::vector<double> ta(n_stimuli), tb(n_stimuli);
    const std::size_t n_pairs = repeats * (repeats - 1) / 2;
    for (std::size_t v = 0; v < brain.cols; ++v) {
        double acc = 0.0;
        for (std::size_t r1 = 0; r1 < repeats; ++r1) {
            for (std::size_t r2 = r1 + 1; r2 < repeats; ++r2) {
                for (std::size_t s = 0; s < n_stimuli; ++s) {
                    ta[s] = brain.at(s * repeats + r1, v);
                    tb[s] = brain.at(s * repeats + r2, v);
                }
                acc += pearson(ta.data(), tb.data(), n_stimuli, 0.0);
            }
        }
        report.scores[v] = acc / static_cast<double>(n_pairs);
    }
    return report;
}

std::vector<std::size_t> select_stable(const StabilityReport& report, const RoiMap& roi, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("select_stable: ratio must lie in (0,1]");
    if (roi.size() != report.scores.size())
        throw std::invalid_argument("select_stable: every voxel needs an ROI assignment");

    std::vector<std::size_t> selected;
    for (const std::string& name : roi.roi_names()) {
        std::vector<std::size_t> voxels = roi.voxels_of(name);
        if (voxels.empty()) throw std::invalid_argument("select_stable: empty ROI " + name);
        std::stable_sort(voxels.begin(), voxels.end(), [&](std::size_t a, std::size_t b) {
            if (report.scores[a] != report.scores[b]) return report.scores[a] > report.scores[b];
            return a < b;
        });
        const auto keep = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(voxels.size())));
        selected.insert(selected.end(), voxels.begin(), voxels.begin() + keep);
    }
    std::sort(selected.begin(), selected.end());
    return selected;
}

NormStats fit_norm(const Matrix& train) {
    if (train.rows < 2) throw std::invalid_argument("fit_norm: needs at least 2 rows");
    NormStats stats;
    stats.mean.assign(train.cols, 0.0);
    stats.stddev.assign(train.cols, 0.0);
    const double n = static_cast<double>(train.rows);
    for (std::size_t r = 0; r < train.rows; ++r)
        for (std::size_t c = 0; c < train.cols; ++c) stats.mean[c] += train.at(r, c);
    for (double& m : stats.mean) m /= n;
    for (std::size_t r = 0; r < train.rows; ++r)
        for (std::size_t c = 0; c < train.cols; ++c) {
            const double d = train.at(r, c) - stats.mean[c];
            stats.stddev[c] += d * d;
        }
    for (double& s : stats.stddev) s = std::sqrt(s / n);
    return stats;
}

Matrix apply_norm(const NormStats& stats, const Matrix& x) {
    if (x.cols != stats.dim()) throw std::invalid_argument("apply_norm: dimension mismatch");
    Matrix out(x.rows, x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) {
        const double denom = std::max(stats.stddev[c], 1e-8);
        for (std::size_t r = 0; r < x.rows; ++r) out.at(r, c) = (x.at(r, c) - stats.mean[c]) / denom;
    }
    return out;
}

PcaModel fit_pca(const Matrix& train, double target_variance) {
    if (train.rows < 2) throw std::invalid_argument("fit_pca: needs at least 2 rows");
    if (!(target_variance > 0.0 && target_variance <= 1.0))
        throw std::invalid_argument("fit_pca: target must lie in (0,1]");

    const std::size_t n = train.rows, l = train.cols;
    PcaModel model;
    model.target_variance = target_variance;
    model.mean = Matrix(1, l);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < l; ++c) model.mean.at(0, c) += train.at(r, c);
    for (double& m : model.mean.data) m /= static_cast<double>(n);

    Eigen::MatrixXd centered(n, l);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < l; ++c) centered(r, c) = train.at(r, c) - model.mean.at(0, c);

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    const Eigen::MatrixXd V = svd.matrixV();

    const std::size_t max_k = std::min(n - 1, l);
    double total = 0.0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) total += sv(i) * sv(i);
    if (total <= 0.0) throw std::invalid_argument("fit_pca: training matrix has no variance");

    std::vector<double> ratios;
    for (Eigen::Index i = 0; i < sv.size() && ratios.size() < max_k; ++i) ratios.push_back(sv(i) * sv(i) / total);

    std::size_t k = ratios.size();
    double cum = 0.0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        cum += ratios[i];
        if (cum >= target_variance - 1e-12) {
            k = i + 1;
            break;
        }
    }

    model.components = Matrix(l, k);
    for (std::size_t j = 0; j < k; ++j) {
        // sign convention: largest-magnitude coordinate positive
        Eigen::Index arg = 0;
        V.col(static_cast<Eigen::Index>(j)).cwiseAbs().maxCoeff(&arg);
        const double sign = V(arg, static_cast<Eigen::Index>(j)) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < l; ++i)
            model.components.at(i, j) = sign * V(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    model.explained_variance_ratio.assign(ratios.begin(), ratios.begin() + k);
    return model;
}

Matrix apply_pca(const PcaModel& model, const Matrix& x) {
    if (x.cols != model.input_dim()) throw std::invalid_argument("apply_pca: dimension mismatch");
    Matrix centered(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) centered.at(r, c) = x.at(r, c) - model.mean.at(0, c);
    return matmul(centered, model.components);
}

Matrix inverse_pca(const PcaModel& model, const Matrix& y) {
    if (y.cols != model.output_dim()) throw std::invalid_argument("inverse_pca: dimension mismatch");
    Matrix x = matmul(y, transpose(model.components));
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) x.at(r, c) += model.mean.at(0, c);
    return x;
}

ModalityPipeline fit_modality_pipeline(const Matrix& seen_train, double pca_target) {
    ModalityPipeline p;
    p.norm = fit_norm(seen_train);
    p.pca = fit_pca(apply_norm(p.norm, seen_train), pca_target);
    return p;
}

Matrix BrainPipeline::apply(const Matrix& x) const {
    if (stability_used) return rest.apply(take_cols(x, report.selected));
    return rest.apply(x);
}

BrainPipeline fit_brain_pipeline(const Matrix& seen_train, std::size_t repeats, const RoiMap& roi,
                                 double stability_ratio, double pca_target) {
    BrainPipeline p;
    if (repeats >= 2) {
        p.stability_used = true;
        p.report = stability_scores(seen_train, repeats);
        p.report.ratio = stability_ratio;
        p.report.selected = select_stable(p.report, roi, stability_ratio);
        p.rest = fit_modality_pipeline(take_cols(seen_train, p.report.selected), pca_target);
    } else {
        p.stability_used = false;
        p.rest = fit_modality_pipeline(seen_train, pca_target);
    }
    return p;
}

PreprocModels fit_preproc(const TrimodalDataset& ds, double stability_ratio, double pca_target) {
    PreprocModels models;
    models.stability_ratio = stability_ratio;
    models.pca_target = pca_target;

    RoiMap roi;
    if (ds.roi_map) {
        roi = *ds.roi_map;
    } else {
        roi.roi_of_voxel.assign(ds.seen.brain.cols, "all");
    }
    models.brain = fit_brain_pipeline(ds.seen.brain, ds.repeats_per_stimulus, roi, stability_ratio, pca_target);
    models.visual = fit_modality_pipeline(ds.seen.visual, pca_target);
    models.textual = fit_modality_pipeline(ds.seen.textual, pca_target);
    return models;
}

TrimodalDataset apply_preproc(const PreprocModels& models, const TrimodalDataset& ds) {
    TrimodalDataset out;
    out.split = ds.split;
    out.repeats_per_stimulus = ds.repeats_per_stimulus;
    out.seen.brain = models.brain.apply(ds.seen.brain);
    out.seen.visual = models.visual.apply(ds.seen.visual);
    out.seen.textual = models.textual.apply(ds.seen.textual);
    out.seen.labels = ds.seen.labels;
    out.novel.visual = models.visual.apply(ds.novel.visual);
    out.novel.textual = models.textual.apply(ds.novel.textual);
    out.novel.labels = ds.novel.labels;
    if (ds.test) {
        TestSplit test;
        test.brain = models.brain.apply(ds.test->brain);
        test.labels = ds.test->labels;
        out.test = std::move(test);
    }
    for (const ExtraPool& p : ds.extra) {
        ExtraPool q;
        if (p.visual) q.visual = models.visual.apply(*p.visual);
        if (p.textual) q.textual = models.textual.apply(*p.textual);
        out.extra.push_back(std::move(q));
    }
    out.validate();
    return out;
}

namespace {

Matrix norm_to_matrix(const NormStats& stats) {
    Matrix m(2, stats.dim());
    for (std::size_t c = 0; c < stats.dim(); ++c) {
        m.at(0, c) = stats.mean[c];
        m.at(1, c) = stats.stddev[c];
    }
    return m;
}

NormStats norm_from_matrix(const Matrix& m) {
    NormStats stats;
    stats.mean.assign(m.row_ptr(0), m.row_ptr(0) + m.cols);
    stats.stddev.assign(m.row_ptr(1), m.row_ptr(1) + m.cols);
    return stats;
}

void save_modality(const ModalityPipeline& p, const std::filesystem::path& dir, const std::string& base) {
    write_matrix_f64(dir / (base + "_norm.bvlm"), norm_to_matrix(p.norm));
    write_matrix_f64(dir / (base + "_pca_mean.bvlm"), p.pca.mean);
    write_matrix_f64(dir / (base + "_pca_components.bvlm"), p.pca.components);
    write_matrix_f64(dir / (base + "_pca_ratios.bvlm"), Matrix::row_vector(p.pca.explained_variance_ratio));
}

ModalityPipeline load_modality(const std::filesystem::path& dir, const std::string& base, double target) {
    ModalityPipeline p;
    p.norm = norm_from_matrix(read_matrix(dir / (base + "_norm.bvlm")));
    p.pca.mean = read_matrix(dir / (base + "_pca_mean.bvlm"));
    p.pca.components = read_matrix(dir / (base + "_pca_components.bvlm"));
    const Matrix ratios = read_matrix(dir / (base + "_pca_ratios.bvlm"));
    p.pca.explained_variance_ratio.assign(ratios.data.begin(), ratios.data.end());
    p.pca.target_variance = target;
    return p;
}

} // namespace

void save_preproc(const PreprocModels& models, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    Manifest man;
    man.set("format", "bravl-preproc");
    man.set("stability_ratio", std::to_string(models.stability_ratio));
    man.set("pca_target", std::to_string(models.pca_target));
    man.set("brain.stability_used", models.brain.stability_used ? "1" : "0");
    if (models.brain.stability_used) {
        write_matrix_f64(dir / "brain_stability_scores.bvlm", Matrix::row_vector(models.brain.report.scores));
        std::vector<double> sel(models.brain.report.selected.begin(), models.brain.report.selected.end());
        write_matrix_f64(dir / "brain_selected.bvlm", Matrix::row_vector(sel));
    }
    save_modality(models.brain.rest, dir, "brain");
    save_modality(models.visual, dir, "visual");
    save_modality(models.textual, dir, "textual");
    man.save(dir / "manifest.txt");
}

PreprocModels load_preproc(const std::filesystem::path& dir) {
    const Manifest man = Manifest::load(dir / "manifest.txt");
    if (man.get_or("format", "") != "bravl-preproc")
        throw std::runtime_error("not a preprocessing model directory: " + dir.string());
    PreprocModels models;
    models.stability_ratio = man.get_double("stability_ratio");
    models.pca_target = man.get_double("pca_target");
    models.brain.stability_used = man.get("brain.stability_used") == "1";
    if (models.brain.stability_used) {
        const Matrix scores = read_matrix(dir / "brain_stability_scores.bvlm");
        models.brain.report.scores.assign(scores.data.begin(), scores.data.end());
        const Matrix sel = read_matrix(dir / "brain_selected.bvlm");
        models.brain.report.selected.clear();
        for (double v : sel.data) models.brain.report.selected.push_back(static_cast<std::size_t>(v));
        models.brain.report.ratio = models.stability_ratio;
    }
    models.brain.rest = load_modality(dir, "brain", models.pca_target);
    models.visual = load_modality(dir, "visual", models.pca_target);
    models.textual = load_modality(dir, "textual", models.pca_target);
    return models;
}

} // namespace bravl
