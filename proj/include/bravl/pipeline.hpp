#ifndef BRAVL_PIPELINE_HPP
#define BRAVL_PIPELINE_HPP

#include <string>
#include <vector>

#include "bravl/decode.hpp"
#include "bravl/train.hpp"

namespace bravl {

// Fits the one-vs-rest classifier on the novel-split latents for the given
// modality subset and scores the held-out brain trials. The dataset must be
// preprocessed and carry a test split.
DecodeReport decode_with_subset(const ModelParams& params, const TrimodalDataset& processed,
                                const std::vector<Modality>& subset, bool strict_subset, const SvmConfig& svm_cfg,
                                const std::vector<std::size_t>& k_list = {1, 5},
                                const DecodeReport* baseline = nullptr);

std::vector<Modality> parse_modalities(const std::string& spec);
std::string modalities_label(const std::vector<Modality>& subset);

enum class AblationVariant { full, no_intra, no_inter, elbo_only };

AblationVariant ablation_variant_from_name(const std::string& name);
const char* ablation_variant_name(AblationVariant v);
void apply_variant(TrainConfig& cfg, AblationVariant v);

struct AblationRow {
    std::string variant;
    std::string posterior;
    std::uint64_t seed = 0;
    double top1 = 0.0;
    double top5 = 0.0;
};

// One synth -> preprocess -> train -> decode pass per (variant, posterior,
// seed) triple; the seed drives both the generated data and the training
// stream.
std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& variants,
                                      const std::vector<PosteriorType>& posteriors, std::size_t n_seeds,
                                      const SynthConfig& synth_base, const TrainConfig& train_base,
                                      double stability_ratio, double pca_target, const SvmConfig& svm_cfg);

// rows followed by per-(variant, posterior) mean rows; header included
std::string ablation_csv(const std::vector<AblationRow>& rows);

} // namespace bravl

#endif
