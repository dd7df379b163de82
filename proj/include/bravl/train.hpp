#ifndef BRAVL_TRAIN_HPP
#define BRAVL_TRAIN_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "bravl/dataset.hpp"
#include "bravl/nets.hpp"
#include "bravl/objectives.hpp"
#include "bravl/rng.hpp"

namespace bravl {

struct TrainConfig {
    std::size_t latent_dim = 32;
    std::size_t hidden_brain = 64;
    std::size_t hidden_visual = 64;
    std::size_t hidden_textual = 64;
    double lr = 1e-3;   // desk-scale; full-scale runs use 1e-4
    std::size_t batch_size = 128;
    std::size_t epochs = 40; // desk-scale; full-scale runs use 100
    double lambda1 = 0.001;
    double lambda2 = 0.001;
    std::size_t cubo_k = 30;
    double anneal_rate = 0.01; // KL weight growth per epoch, capped at 1
    PosteriorType posterior_type = PosteriorType::mopoe;
    std::size_t negatives_per_type = 1;
    std::uint64_t seed = 0;
    bool intra_off = false;
    bool inter_off = false;
    std::size_t checkpoint_every = 0; // epochs between checkpoints; 0 = final only

    void validate() const;
    double beta_at(std::size_t epoch) const;
    ObjectiveConfig objective_config(std::size_t epoch) const;
};

// flat key=value file, keys exactly the TrainConfig field names
TrainConfig parse_train_config(const std::filesystem::path& path);
std::string train_config_text(const TrainConfig& cfg);
std::uint64_t train_config_hash(const TrainConfig& cfg);

struct Checkpoint {
    ModelParams params;
    AdamState opt_model; // encoders + decoders
    AdamState opt_aux;
    std::size_t epochs_done = 0;
    std::uint64_t steps_done = 0;
    std::string rng_state;
    std::uint64_t config_hash = 0;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Interleaves seen/novel/extra pools with per-batch source probability
// proportional to pool size; the epoch ends when the seen pool is exhausted.
// Seen batches are trimodal, novel batches bimodal {v,t}, extra batches
// bimodal or unimodal as available.
std::vector<BatchView> schedule_batches(const TrimodalDataset& ds, const TrainConfig& cfg, Rng& rng);

// Stage 1 ascends the auxiliary posteriors on the intra term with the model
// frozen (skipped when the intra weight is zero); stage 2 ascends encoders
// and decoders on the full objective with the auxiliaries frozen.
void train_stage1(const BatchView& batch, ModelParams& params, AdamState& opt_aux, GradientSet& scratch,
                  const TrainConfig& cfg, std::size_t epoch, Rng& rng);
ObjectiveBreakdown train_stage2(const BatchView& batch, ModelParams& params, AdamState& opt_model,
                                GradientSet& scratch, const TrainConfig& cfg, std::size_t epoch, Rng& rng);
ObjectiveBreakdown train_step(const BatchView& batch, ModelParams& params, AdamState& opt_model,
                              AdamState& opt_aux, GradientSet& scratch, const TrainConfig& cfg,
                              std::size_t epoch, Rng& rng);

constexpr const char* kTrainLogHeader = "step,epoch,beta,elbo,recon_b,recon_v,recon_t,kl,intra,inter,total";

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<std::string> log_lines; // CSV rows, header excluded
};

// Full loop over epochs. When out_dir is nonempty, writes log.csv plus the
// final (and periodic) checkpoints there. Resuming from a checkpoint
// reproduces the uninterrupted run bit-exactly.
TrainResult train_run(const TrimodalDataset& ds, const TrainConfig& cfg, const std::filesystem::path& out_dir = {},
                      const Checkpoint* resume = nullptr);

} // namespace bravl

#endif
