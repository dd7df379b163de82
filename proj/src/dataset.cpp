#include "bravl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "bravl/rng.hpp"

namespace bravl {

const char* modality_name(Modality m) {
    switch (m) {
    case Modality::brain: return "brain";
    case Modality::visual: return "visual";
    case Modality::textual: return "textual";
    }
    return "?";
}

Modality modality_from_name(const std::string& name) {
    if (name == "brain") return Modality::brain;
    if (name == "visual") return Modality::visual;
    if (name == "textual") return Modality::textual;
    throw std::invalid_argument("unknown modality: " + name);
}

void LabelVector::validate() const {
    for (std::uint32_t e : entries)
        if (e >= n_classes) throw std::runtime_error("label out of range");
}

void ClassSplit::validate() const {
    if (seen_classes.empty() || novel_classes.empty())
        throw std::runtime_error("class split: both seen and novel sets must be nonempty");
    std::set<std::uint32_t> seen(seen_classes.begin(), seen_classes.end());
    for (std::uint32_t c : novel_classes)
        if (seen.count(c)) throw std::runtime_error("class split: seen and novel classes overlap");
}

std::vector<std::string> RoiMap::roi_names() const {
    std::vector<std::string> names;
    for (const auto& r : roi_of_voxel)
        if (std::find(names.begin(), names.end(), r) == names.end()) names.push_back(r);
    return names;
}

std::vector<std::size_t> RoiMap::voxels_of(const std::string& roi) const {
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < roi_of_voxel.size(); ++v)
        if (roi_of_voxel[v] == roi) out.push_back(v);
    return out;
}

std::size_t ExtraPool::row_count() const {
    if (visual) return visual->rows;
    if (textual) return textual->rows;
    return 0;
}

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw std::runtime_error(std::string("dataset invariant violated: ") + what);
}

void check_labels_in(const LabelVector& labels, const std::vector<std::uint32_t>& allowed, const char* what) {
    std::set<std::uint32_t> ok(allowed.begin(), allowed.end());
    for (std::uint32_t e : labels.entries)
        if (!ok.count(e)) throw std::runtime_error(std::string("label outside its class set: ") + what);
}

} // namespace

void TrimodalDataset::validate() const {
    split.validate();

    require(seen.brain.rows >= 1 && seen.brain.cols >= 1, "seen brain matrix empty");
    require(seen.visual.rows >= 1 && seen.visual.cols >= 1, "seen visual matrix empty");
    require(seen.textual.rows >= 1 && seen.textual.cols >= 1, "seen textual matrix empty");
    require(seen.brain.rows == seen.visual.rows && seen.brain.rows == seen.textual.rows,
            "seen modalities must share row count");
    require(seen.labels.size() == seen.brain.rows, "seen labels must align with rows");

    require(novel.visual.rows == novel.textual.rows, "novel visual/textual must share row count");
    require(novel.labels.size() == novel.visual.rows, "novel labels must align with rows");
    require(novel.visual.cols == seen.visual.cols, "novel visual dimension differs from seen");
    require(novel.textual.cols == seen.textual.cols, "novel textual dimension differs from seen");

    seen.labels.validate();
    novel.labels.validate();
    check_labels_in(seen.labels, split.seen_classes, "seen");
    check_labels_in(novel.labels, split.novel_classes, "novel");

    require(repeats_per_stimulus >= 1, "repeats_per_stimulus must be positive");
    require(seen.brain.rows % repeats_per_stimulus == 0, "seen rows not divisible by repeats");

    require(seen.brain.all_finite() && seen.visual.all_finite() && seen.textual.all_finite(),
            "seen features must be finite");
    require(novel.visual.all_finite() && novel.textual.all_finite(), "novel features must be finite");

    if (test) {
        require(test->brain.cols == seen.brain.cols, "test brain dimension differs from seen");
        require(test->labels.size() == test->brain.rows, "test labels must align with rows");
        test->labels.validate();
        check_labels_in(test->labels, split.novel_classes, "test");
        require(test->brain.all_finite(), "test features must be finite");
    }
    for (const ExtraPool& p : extra) {
        require(p.visual || p.textual, "extra pool must carry at least one modality");
        if (p.visual) {
            require(p.visual->cols == seen.visual.cols, "extra visual dimension differs from seen");
            require(p.visual->all_finite(), "extra features must be finite");
        }
        if (p.textual) {
            require(p.textual->cols == seen.textual.cols, "extra textual dimension differs from seen");
            require(p.textual->all_finite(), "extra features must be finite");
        }
        if (p.visual && p.textual)
            require(p.visual->rows == p.textual->rows, "extra bimodal pool rows must align");
        require(p.row_count() >= 1, "extra pool empty");
    }
    if (roi_map) require(roi_map->size() == seen.brain.cols, "ROI map must cover every voxel");
}

void SynthConfig::validate() const {
    auto positive = [](std::size_t v, const char* what) {
        if (v == 0) throw std::runtime_error(std::string("synth config: ") + what + " must be positive");
    };
    positive(n_seen_classes, "n_seen_classes");
    positive(n_novel_classes, "n_novel_classes");
    positive(samples_per_class, "samples_per_class");
    positive(latent_true_dim, "latent_true_dim");
    positive(dim_brain, "dim_brain");
    positive(dim_visual, "dim_visual");
    positive(dim_textual, "dim_textual");
    positive(repeats_per_stimulus, "repeats_per_stimulus");
    if (noise_brain < 0 || noise_visual < 0 || noise_textual < 0)
        throw std::runtime_error("synth config: noise scales must be nonnegative");
    if (class_spread < 0) throw std::runtime_error("synth config: class_spread must be nonnegative");
    if (brain_noise_dim_fraction < 0 || brain_noise_dim_fraction >= 1)
        throw std::runtime_error("synth config: brain_noise_dim_fraction must lie in [0,1)");
}

std::vector<bool> synth_noise_dims(const SynthConfig& cfg) {
    const std::size_t d = cfg.dim_brain;
    const auto count = static_cast<std::size_t>(std::llround(cfg.brain_noise_dim_fraction * static_cast<double>(d)));
    std::vector<bool> noise(d, false);
    // spread the noise dimensions evenly over the index range
    for (std::size_t j = 0; j < d; ++j)
        if ((j + 1) * count / d != j * count / d) noise[j] = true;
    return noise;
}

namespace {

// storage is float32; quantize at generation time so save/load is bitwise
void quantize_f32(Matrix& m) {
    for (double& v : m.data) v = static_cast<double>(static_cast<float>(v));
}

struct ModalityMap {
    Matrix proj; // latent x d
    Matrix bias; // 1 x d

    Matrix observe(const std::vector<double>& z) const {
        Matrix x(1, proj.cols);
        for (std::size_t k = 0; k < proj.cols; ++k) {
            double u = bias.at(0, k);
            for (std::size_t j = 0; j < proj.rows; ++j) u += z[j] * proj.at(j, k);
            x.at(0, k) = std::tanh(u);
        }
        return x;
    }
};

ModalityMap draw_map(Rng& rng, std::size_t latent, std::size_t d) {
    ModalityMap m;
    m.proj = rng.normal_matrix(latent, d, 1.0 / std::sqrt(static_cast<double>(latent)));
    m.bias = rng.normal_matrix(1, d, 0.1);
    return m;
}

} // namespace

TrimodalDataset synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    const std::size_t L = cfg.latent_true_dim;
    ModalityMap map_b = draw_map(rng, L, cfg.dim_brain);
    ModalityMap map_v = draw_map(rng, L, cfg.dim_visual);
    ModalityMap map_t = draw_map(rng, L, cfg.dim_textual);

    const std::vector<bool> noise_dim = synth_noise_dims(cfg);
    for (std::size_t k = 0; k < cfg.dim_brain; ++k) {
        if (!noise_dim[k]) continue;
        for (std::size_t j = 0; j < L; ++j) map_b.proj.at(j, k) = 0.0;
        map_b.bias.at(0, k) = 0.0;
    }

    const std::size_t n_classes = cfg.n_seen_classes + cfg.n_novel_classes;
    Matrix centers = rng.normal_matrix(n_classes, L);

    const std::size_t seen_stimuli = cfg.n_seen_classes * cfg.samples_per_class;
    const std::size_t novel_stimuli = cfg.n_novel_classes * cfg.samples_per_class;
    const std::size_t R = cfg.repeats_per_stimulus;

    TrimodalDataset ds;
    ds.repeats_per_stimulus = R;
    ds.seen.brain = Matrix(seen_stimuli * R, cfg.dim_brain);
    ds.seen.visual = Matrix(seen_stimuli * R, cfg.dim_visual);
    ds.seen.textual = Matrix(seen_stimuli * R, cfg.dim_textual);
    ds.seen.labels.n_classes = static_cast<std::uint32_t>(n_classes);
    ds.novel.visual = Matrix(novel_stimuli, cfg.dim_visual);
    ds.novel.textual = Matrix(novel_stimuli, cfg.dim_textual);
    ds.novel.labels.n_classes = static_cast<std::uint32_t>(n_classes);
    TestSplit test;
    test.brain = Matrix(novel_stimuli * R, cfg.dim_brain);
    test.labels.n_classes = static_cast<std::uint32_t>(n_classes);

    std::vector<double> z(L);
    auto draw_stimulus_latent = [&](std::size_t cls) {
        for (std::size_t j = 0; j < L; ++j) z[j] = centers.at(cls, j) + cfg.class_spread * rng.normal();
    };
    auto add_noise_row = [&](Matrix& dst, std::size_t row, const Matrix& clean, double scale) {
        for (std::size_t k = 0; k < dst.cols; ++k) dst.at(row, k) = clean.at(0, k) + scale * rng.normal();
    };

    std::size_t row = 0;
    for (std::size_t c = 0; c < cfg.n_seen_classes; ++c) {
        for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
            draw_stimulus_latent(c);
            const Matrix xv = map_v.observe(z);
            const Matrix xt = map_t.observe(z);
            const Matrix xb = map_b.observe(z);
            for (std::size_t r = 0; r < R; ++r) {
                add_noise_row(ds.seen.brain, row, xb, cfg.noise_brain);
                add_noise_row(ds.seen.visual, row, xv, cfg.noise_visual);
                add_noise_row(ds.seen.textual, row, xt, cfg.noise_textual);
                ds.seen.labels.entries.push_back(static_cast<std::uint32_t>(c));
                ++row;
            }
        }
    }

    std::size_t nrow = 0, trow = 0;
    for (std::size_t c = 0; c < cfg.n_novel_classes; ++c) {
        const std::uint32_t cls = static_cast<std::uint32_t>(cfg.n_seen_classes + c);
        for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
            draw_stimulus_latent(cls);
            const Matrix xv = map_v.observe(z);
            const Matrix xt = map_t.observe(z);
            const Matrix xb = map_b.observe(z);
            add_noise_row(ds.novel.visual, nrow, xv, cfg.noise_visual);
            add_noise_row(ds.novel.textual, nrow, xt, cfg.noise_textual);
            ds.novel.labels.entries.push_back(cls);
            ++nrow;
            for (std::size_t r = 0; r < R; ++r) {
                add_noise_row(test.brain, trow, xb, cfg.noise_brain);
                test.labels.entries.push_back(cls);
                ++trow;
            }
        }
    }
    ds.test = std::move(test);

    auto draw_extra_latent = [&] {
        for (std::size_t j = 0; j < L; ++j) z[j] = rng.normal() + cfg.class_spread * rng.normal();
    };
    if (cfg.n_extra_bimodal > 0) {
        ExtraPool p;
        p.visual = Matrix(cfg.n_extra_bimodal, cfg.dim_visual);
        p.textual = Matrix(cfg.n_extra_bimodal, cfg.dim_textual);
        for (std::size_t i = 0; i < cfg.n_extra_bimodal; ++i) {
            draw_extra_latent();
            add_noise_row(*p.visual, i, map_v.observe(z), cfg.noise_visual);
            add_noise_row(*p.textual, i, map_t.observe(z), cfg.noise_textual);
        }
        ds.extra.push_back(std::move(p));
    }
    if (cfg.n_extra_visual_only > 0) {
        ExtraPool p;
        p.visual = Matrix(cfg.n_extra_visual_only, cfg.dim_visual);
        for (std::size_t i = 0; i < cfg.n_extra_visual_only; ++i) {
            draw_extra_latent();
            add_noise_row(*p.visual, i, map_v.observe(z), cfg.noise_visual);
        }
        ds.extra.push_back(std::move(p));
    }
    if (cfg.n_extra_textual_only > 0) {
        ExtraPool p;
        p.textual = Matrix(cfg.n_extra_textual_only, cfg.dim_textual);
        for (std::size_t i = 0; i < cfg.n_extra_textual_only; ++i) {
            draw_extra_latent();
            add_noise_row(*p.textual, i, map_t.observe(z), cfg.noise_textual);
        }
        ds.extra.push_back(std::move(p));
    }

    for (std::uint32_t c = 0; c < cfg.n_seen_classes; ++c) ds.split.seen_classes.push_back(c);
    for (std::uint32_t c = 0; c < cfg.n_novel_classes; ++c)
        ds.split.novel_classes.push_back(static_cast<std::uint32_t>(cfg.n_seen_classes) + c);

    RoiMap roi;
    roi.roi_of_voxel.resize(cfg.dim_brain);
    const std::size_t n_rois = std::min<std::size_t>(3, cfg.dim_brain);
    for (std::size_t v = 0; v < cfg.dim_brain; ++v) {
        const std::size_t r = std::min(n_rois - 1, v * n_rois / cfg.dim_brain);
        roi.roi_of_voxel[v] = "region" + std::to_string(r);
    }
    ds.roi_map = std::move(roi);

    quantize_f32(ds.seen.brain);
    quantize_f32(ds.seen.visual);
    quantize_f32(ds.seen.textual);
    quantize_f32(ds.novel.visual);
    quantize_f32(ds.novel.textual);
    quantize_f32(ds.test->brain);
    for (ExtraPool& p : ds.extra) {
        if (p.visual) quantize_f32(*p.visual);
        if (p.textual) quantize_f32(*p.textual);
    }

    ds.validate();
    return ds;
}

} // namespace bravl
