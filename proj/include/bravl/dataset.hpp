#ifndef BRAVL_DATASET_HPP
#define BRAVL_DATASET_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bravl/matrix.hpp"

namespace bravl {

enum class Modality : int { brain = 0, visual = 1, textual = 2 };

constexpr std::array<Modality, 3> kAllModalities = {Modality::brain, Modality::visual, Modality::textual};

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);

struct LabelVector {
    std::vector<std::uint32_t> entries;
    std::uint32_t n_classes = 0;

    std::size_t size() const { return entries.size(); }
    void validate() const; // every entry < n_classes
};

struct ClassSplit {
    std::vector<std::uint32_t> seen_classes;
    std::vector<std::uint32_t> novel_classes;

    void validate() const; // disjoint, both nonempty
};

// voxel index -> ROI name; selection budgets are per ROI
struct RoiMap {
    std::vector<std::string> roi_of_voxel;

    std::size_t size() const { return roi_of_voxel.size(); }
    std::vector<std::string> roi_names() const;
    std::vector<std::size_t> voxels_of(const std::string& roi) const;
};

struct SeenSplit {
    Matrix brain;
    Matrix visual;
    Matrix textual;
    LabelVector labels;
};

struct NovelSplit {
    Matrix visual;
    Matrix textual;
    LabelVector labels;
};

// Brain recordings of novel-class stimuli. Held out of every training pool;
// only the decoding evaluation may read it.
struct TestSplit {
    Matrix brain;
    LabelVector labels;
};

// Unlabeled auxiliary pool: visual and/or textual features (both present =
// bimodal pairs, one present = unimodal pool).
struct ExtraPool {
    std::optional<Matrix> visual;
    std::optional<Matrix> textual;

    std::size_t row_count() const;
};

struct TrimodalDataset {
    SeenSplit seen;
    NovelSplit novel;
    std::optional<TestSplit> test;
    std::vector<ExtraPool> extra;
    ClassSplit split;
    std::size_t repeats_per_stimulus = 1;
    std::optional<RoiMap> roi_map;

    void validate() const;
};

struct SynthConfig {
    std::size_t n_seen_classes = 40;
    std::size_t n_novel_classes = 10;
    std::size_t samples_per_class = 20;
    std::size_t latent_true_dim = 8;
    std::size_t dim_brain = 60;
    std::size_t dim_visual = 50;
    std::size_t dim_textual = 30;
    std::size_t repeats_per_stimulus = 3;
    double noise_brain = 0.4;
    double noise_visual = 0.1;
    double noise_textual = 0.1;
    // within-class spread of the shared latent; class centers are unit normal
    double class_spread = 0.25;
    // fraction of brain dimensions carrying no stimulus signal at all
    double brain_noise_dim_fraction = 0.2;
    std::size_t n_extra_bimodal = 0;
    std::size_t n_extra_visual_only = 0;
    std::size_t n_extra_textual_only = 0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Which brain dimensions the generator fills with pure noise (evenly spread
// across the index range, deterministic in the config alone).
std::vector<bool> synth_noise_dims(const SynthConfig& cfg);

// Draws a dataset with a shared ground-truth latent across modalities:
// per class a latent center, per stimulus z* = center + jitter, and each
// modality observes tanh(A_m z* + b_m) + noise. Brain rows are
// repeats_per_stimulus noisy trials per stimulus (consecutive rows), visual
// and textual rows are replicated to stay row-aligned. Novel-class brain
// trials land in the test split. Pure function of the config.
TrimodalDataset synth_generate(const SynthConfig& cfg);

} // namespace bravl

#endif
