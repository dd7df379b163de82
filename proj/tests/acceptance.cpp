// End-to-end acceptance suite. Each criterion prints one pass/fail line;
// the process exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "bravl/decode.hpp"
#include "bravl/io.hpp"
#include "bravl/pipeline.hpp"
#include "bravl/preprocess.hpp"
#include "bravl/train.hpp"
#include "fd_check.hpp"
#include "linear_gaussian.hpp"

using namespace bravl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool ok, const std::string& detail) {
    std::printf("criterion %d (%s): %s  [%s]\n", index, name.c_str(), ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path work_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("bravl_acceptance_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// ---------------------------------------------------------------------------
// 1. analytic gradients of every objective match central finite differences
//    on random tiny configurations
void criterion_gradients() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string worst_case = "-";
    Rng meta(20240001);

    for (int config = 0; config < 20; ++config) {
        NetDims dims;
        for (Modality m : kAllModalities) {
            dims.feature[m] = 2 + meta.uniform_index(5); // 2..6
            dims.hidden[m] = 3;
        }
        dims.latent = 2 + meta.uniform_index(3); // 2..4

        ModelParams params = init_params(dims, 100 + static_cast<std::uint64_t>(config));
        bravl::testing::jitter_biases(params, 900 + static_cast<std::uint64_t>(config));
        Rng data_rng(200 + static_cast<std::uint64_t>(config));
        BatchView batch;
        for (Modality m : kAllModalities) batch.set(m, data_rng.normal_matrix(3, dims.feature[m]));

        ObjectiveConfig cfg;
        cfg.lambda1 = 0.01;
        cfg.lambda2 = 0.01;
        cfg.cubo_k = 2;
        cfg.beta = 0.8;
        const std::uint64_t seed = 300 + static_cast<std::uint64_t>(config);

        GradientSet grads = zeros_like(params);
        auto check = [&](const char* tag, ParamGroup group, auto&& value_fn, auto&& grad_fn) {
            zero_grads(grads);
            grad_fn();
            const double err = bravl::testing::fd_max_rel_error(params, group, grads, value_fn);
            if (err > worst) {
                worst = err;
                worst_case = std::string(tag) + "@config" + std::to_string(config);
            }
        };
        check("elbo", ParamGroup::encoders_decoders,
              [&] { return elbo(batch, params, cfg, seed, nullptr, GradStage::none); },
              [&] { elbo(batch, params, cfg, seed, &grads, GradStage::all); });
        check("intra", ParamGroup::all,
              [&] { return intra_mi(batch, params, cfg, seed, nullptr, GradStage::none); },
              [&] { intra_mi(batch, params, cfg, seed, &grads, GradStage::all); });
        check("inter", ParamGroup::encoders_decoders,
              [&] { return inter_mi(batch, params, cfg, seed, nullptr, GradStage::none); },
              [&] { inter_mi(batch, params, cfg, seed, &grads, GradStage::all); });
        check("total", ParamGroup::all,
              [&] { return total_objective(batch, params, cfg, seed, nullptr, GradStage::none).total; },
              [&] { total_objective(batch, params, cfg, seed, &grads, GradStage::all); });
    }
    const double elapsed = seconds_since(t0);
    char detail[160];
    std::snprintf(detail, sizeof detail, "max rel err %.2e (%s), 20 configs x 4 objectives, %.1f s", worst,
                  worst_case.c_str(), elapsed);
    report(1, "gradient integrity", worst < 1e-3 && elapsed < 30.0, detail);
}

// ---------------------------------------------------------------------------
// 2. closed-form PoE vs grid-normalized pointwise density product
void criterion_poe_oracle() {
    double worst_l1 = 0.0;
    Rng rng(20240002);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n_experts = 2 + rng.uniform_index(3);
        std::vector<DiagGaussian> experts;
        for (std::size_t e = 0; e < n_experts; ++e) {
            DiagGaussian g{Matrix(1, 1), Matrix(1, 1)};
            g.mean.at(0, 0) = 2.0 * rng.normal();
            g.logvar.at(0, 0) = std::max(-2.0, std::min(2.0, rng.normal()));
            experts.push_back(std::move(g));
        }
        std::vector<const DiagGaussian*> ptrs;
        for (const auto& e : experts) ptrs.push_back(&e);
        const DiagGaussian combined = poe_combine(ptrs);
        const double cm = combined.mean.at(0, 0);
        const double cv = std::exp(combined.logvar.at(0, 0));

        auto density = [](double x, double mean, double var) {
            return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
        };
        const double lo = -16.0, hi = 16.0;
        const int steps = 20000;
        const double dx = (hi - lo) / steps;
        std::vector<double> product(static_cast<std::size_t>(steps));
        double mass = 0.0;
        for (int i = 0; i < steps; ++i) {
            const double x = lo + (i + 0.5) * dx;
            double p = 1.0;
            for (const auto& e : experts) p *= density(x, e.mean.at(0, 0), std::exp(e.logvar.at(0, 0)));
            product[static_cast<std::size_t>(i)] = p;
            mass += p * dx;
        }
        double l1 = 0.0;
        for (int i = 0; i < steps; ++i) {
            const double x = lo + (i + 0.5) * dx;
            l1 += std::abs(product[static_cast<std::size_t>(i)] / mass - density(x, cm, cv)) * dx;
        }
        worst_l1 = std::max(worst_l1, l1);
    }
    char detail[96];
    std::snprintf(detail, sizeof detail, "worst L1 %.2e over 100 seeded cases", worst_l1);
    report(2, "product-of-experts oracle", worst_l1 < 1e-3, detail);
}

// ---------------------------------------------------------------------------
// 3. the bound sandwich collapses on a linear-Gaussian model with the exact
//    posterior, and is strict with a perturbed one
void criterion_sandwich() {
    using bravl::testing::make_linear_gaussian;

    const auto exact2 = make_linear_gaussian(20240003, 2, 2, 3, 30);
    const auto exact3 = make_linear_gaussian(20240004, 3, 3, 2, 30);
    double worst_gap = 0.0;
    for (const auto* toy : {&exact2, &exact3}) {
        const CuboResult r = cubo(toy->batch, toy->params, toy->cfg, 777, nullptr, GradStage::none);
        worst_gap = std::max(worst_gap, std::abs(r.cubo - toy->log_marginal));
        worst_gap = std::max(worst_gap, std::abs(r.iw_elbo - toy->log_marginal));
    }

    const auto perturbed = make_linear_gaussian(20240005, 2, 2, 4, 30, 0.45);
    int holds = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const CuboResult r = cubo(perturbed.batch, perturbed.params, perturbed.cfg,
                                  5000 + static_cast<std::uint64_t>(trial), nullptr, GradStage::none);
        if (r.iw_elbo < perturbed.log_marginal && perturbed.log_marginal < r.cubo) ++holds;
    }
    char detail[128];
    std::snprintf(detail, sizeof detail, "exact gap %.2e (tol 1e-6); strict sandwich %d/1000 (need 990)",
                  worst_gap, holds);
    report(3, "bound sandwich exactness", worst_gap < 1e-6 && holds >= 990, detail);
}

// ---------------------------------------------------------------------------
// 4. averaged-component KL dominates the quadrature mixture KL
void criterion_mixture_kl() {
    Rng rng(20240006);
    double min_margin = 1e300;
    auto density = [](double x, double mean, double var) {
        return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
    };
    for (int trial = 0; trial < 100; ++trial) {
        auto comp = [&] {
            DiagGaussian g{Matrix(1, 1), Matrix(1, 1)};
            g.mean.at(0, 0) = 2.0 * rng.normal();
            g.logvar.at(0, 0) = std::max(-2.0, std::min(2.0, rng.normal()));
            return g;
        };
        JointPosterior mix;
        mix.components.push_back({{Modality::brain}, comp()});
        mix.components.push_back({{Modality::visual}, comp()});
        const double bound = kl_mixture_upper(mix);

        const DiagGaussian& a = mix.components[0].gaussian;
        const DiagGaussian& b = mix.components[1].gaussian;
        double quad = 0.0;
        const int steps = 30000;
        const double lo = -30, hi = 30, dx = (hi - lo) / steps;
        for (int i = 0; i < steps; ++i) {
            const double x = lo + (i + 0.5) * dx;
            const double m = 0.5 * density(x, a.mean.at(0, 0), std::exp(a.logvar.at(0, 0))) +
                             0.5 * density(x, b.mean.at(0, 0), std::exp(b.logvar.at(0, 0)));
            if (m > 1e-300) quad += m * std::log(m / density(x, 0, 1)) * dx;
        }
        min_margin = std::min(min_margin, bound - quad);
    }
    char detail[96];
    std::snprintf(detail, sizeof detail, "min margin %.3e over 100 cases (need >= 0)", min_margin);
    report(4, "mixture-KL upper bound", min_margin >= 0.0, detail);
}

// ---------------------------------------------------------------------------
// 5. zero-shot decoding quality and modality ordering on synthetic defaults,
//    running the default pipeline end to end
void criterion_decoding(const fs::path& dir) {
    const auto t0 = Clock::now();

    SynthConfig synth_cfg; // defaults: 40 seen x 20, 10 novel x 20
    synth_cfg.seed = 0;
    const TrimodalDataset raw = synth_generate(synth_cfg);
    save_dataset(raw, dir / "raw");
    const TrimodalDataset loaded = load_dataset(dir / "raw");

    const PreprocModels models = fit_preproc(loaded, 0.15, 0.99); // default pipeline settings
    const TrimodalDataset processed = apply_preproc(models, loaded);

    TrainConfig cfg; // desk-scale defaults
    const TrainResult trained = train_run(processed, cfg, dir / "run");

    SvmConfig svm_cfg; // desk-scale gamma 1e-2
    const DecodeReport vt = decode_with_subset(trained.checkpoint.params, processed,
                                               {Modality::visual, Modality::textual}, false, svm_cfg);
    const DecodeReport v =
        decode_with_subset(trained.checkpoint.params, processed, {Modality::visual}, false, svm_cfg);
    const DecodeReport t =
        decode_with_subset(trained.checkpoint.params, processed, {Modality::textual}, false, svm_cfg);
    write_decode_report(vt, dir / "overall_vt.csv", dir / "per_class_vt.csv");

    const double elapsed = seconds_since(t0);
    const bool ok = vt.top_k(1) >= 0.5 && vt.top_k(5) >= 0.8 && vt.top_k(1) >= v.top_k(1) &&
                    vt.top_k(1) >= t.top_k(1) && elapsed < 300.0;
    char detail[200];
    std::snprintf(detail, sizeof detail,
                  "V&T top-1 %.3f (need >= 0.5), top-5 %.3f (need >= 0.8); V top-1 %.3f, T top-1 %.3f; "
                  "%.0f s (budget 300)",
                  vt.top_k(1), vt.top_k(5), v.top_k(1), t.top_k(1), elapsed);
    report(5, "zero-shot decoding", ok, detail);
}

// ---------------------------------------------------------------------------
// 6. ablation direction: full objective beats elbo-only, MoPoE beats PoE
void criterion_ablation(const fs::path& dir) {
    const auto t0 = Clock::now();
    SynthConfig synth_cfg; // data defaults, seed varies per run
    TrainConfig train_cfg;
    train_cfg.epochs = 12; // reduced budget; the criterion compares means, not absolute accuracy

    SvmConfig svm_cfg;
    std::vector<AblationRow> rows =
        run_ablation({AblationVariant::full, AblationVariant::elbo_only}, {PosteriorType::mopoe}, 5,
                     synth_cfg, train_cfg, 0.15, 0.99, svm_cfg);
    const std::vector<AblationRow> poe_rows =
        run_ablation({AblationVariant::full}, {PosteriorType::poe}, 5, synth_cfg, train_cfg, 0.15, 0.99,
                     svm_cfg);
    rows.insert(rows.end(), poe_rows.begin(), poe_rows.end());

    std::map<std::string, std::pair<double, int>> means;
    for (const AblationRow& r : rows) {
        auto& slot = means[r.variant + "/" + r.posterior];
        slot.first += r.top1;
        slot.second += 1;
    }
    const double full_mopoe = means["full/mopoe"].first / means["full/mopoe"].second;
    const double elbo_mopoe = means["elbo-only/mopoe"].first / means["elbo-only/mopoe"].second;
    const double full_poe = means["full/poe"].first / means["full/poe"].second;

    std::ofstream os(dir / "ablation.csv", std::ios::trunc);
    os << ablation_csv(rows);

    const double elapsed = seconds_since(t0);
    const bool ok = full_mopoe >= elbo_mopoe && full_mopoe >= full_poe;
    char detail[200];
    std::snprintf(detail, sizeof detail,
                  "mean top-1: full/mopoe %.3f >= elbo-only/mopoe %.3f and >= full/poe %.3f; 5 seeds, %.0f s",
                  full_mopoe, elbo_mopoe, full_poe, elapsed);
    report(6, "ablation direction", ok, detail);
}

// ---------------------------------------------------------------------------
// 7. stability selection finds signal dimensions; PCA meets its variance
//    target by construction
void criterion_preprocessing() {
    SynthConfig cfg; // 20% pure-noise brain dimensions, 3 repeats
    cfg.seed = 0;
    const TrimodalDataset ds = synth_generate(cfg);
    const std::vector<bool> noise_dim = synth_noise_dims(cfg);

    const StabilityReport rep = stability_scores(ds.seen.brain, cfg.repeats_per_stimulus);
    const auto selected = select_stable(rep, *ds.roi_map, 0.5);
    std::size_t signal = 0;
    for (std::size_t vx : selected)
        if (!noise_dim[vx]) ++signal;
    const double signal_fraction = static_cast<double>(signal) / static_cast<double>(selected.size());

    double min_retained = 1.0;
    for (const Matrix* x : {&ds.seen.brain, &ds.seen.visual, &ds.seen.textual}) {
        const NormStats norm = fit_norm(*x);
        const PcaModel pca = fit_pca(apply_norm(norm, *x), 0.99);
        double cum = 0.0;
        for (double r : pca.explained_variance_ratio) cum += r;
        min_retained = std::min(min_retained, cum);
    }
    char detail[160];
    std::snprintf(detail, sizeof detail,
                  "signal fraction among selected %.3f (need >= 0.9); min retained variance %.5f (need >= 0.99)",
                  signal_fraction, min_retained);
    report(7, "preprocessing", signal_fraction >= 0.9 && min_retained >= 0.99, detail);
}

// ---------------------------------------------------------------------------
// 8. stage 1 never touches the model, stage 2 never touches the auxiliaries,
//    over a full epoch
void criterion_stage_isolation() {
    SynthConfig synth_cfg;
    synth_cfg.seed = 3;
    const TrimodalDataset raw = synth_generate(synth_cfg);
    const PreprocModels models = fit_preproc(raw, 0.15, 0.99);
    const TrimodalDataset ds = apply_preproc(models, raw);

    TrainConfig cfg;
    const NetDims dims{{ds.seen.brain.cols, ds.seen.visual.cols, ds.seen.textual.cols},
                       {cfg.hidden_brain, cfg.hidden_visual, cfg.hidden_textual},
                       cfg.latent_dim};
    ModelParams params = init_params(dims, cfg.seed);
    AdamState opt_model = make_adam_state(params, ParamGroup::encoders_decoders);
    AdamState opt_aux = make_adam_state(params, ParamGroup::aux);
    GradientSet scratch = zeros_like(params);
    Rng rng(cfg.seed + 0x9E3779B97F4A7C15ull);

    std::size_t stage1_violations = 0, stage2_violations = 0, steps = 0;
    const std::vector<BatchView> batches = schedule_batches(ds, cfg, rng);
    for (const BatchView& batch : batches) {
        const std::uint64_t model_before = hash_tensors(params, ParamGroup::encoders_decoders);
        train_stage1(batch, params, opt_aux, scratch, cfg, 0, rng);
        if (hash_tensors(params, ParamGroup::encoders_decoders) != model_before) ++stage1_violations;

        const std::uint64_t aux_before = hash_tensors(params, ParamGroup::aux);
        train_stage2(batch, params, opt_model, scratch, cfg, 0, rng);
        if (hash_tensors(params, ParamGroup::aux) != aux_before) ++stage2_violations;
        ++steps;
    }
    char detail[128];
    std::snprintf(detail, sizeof detail, "%zu steps; stage-1 model mutations %zu, stage-2 aux mutations %zu",
                  steps, stage1_violations, stage2_violations);
    report(8, "stage isolation", stage1_violations == 0 && stage2_violations == 0, detail);
}

// ---------------------------------------------------------------------------
// 9. two full pipeline runs produce byte-identical outputs
std::map<std::string, std::string> read_tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::ifstream is(entry.path(), std::ios::binary);
        out[fs::relative(entry.path(), dir).string()] =
            std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    }
    return out;
}

void criterion_determinism(const fs::path& dir) {
    auto run_pipeline = [&](const fs::path& out) {
        SynthConfig synth_cfg;
        synth_cfg.n_seen_classes = 8;
        synth_cfg.n_novel_classes = 4;
        synth_cfg.samples_per_class = 6;
        synth_cfg.dim_brain = 24;
        synth_cfg.dim_visual = 18;
        synth_cfg.dim_textual = 12;
        synth_cfg.latent_true_dim = 4;
        synth_cfg.seed = 11;
        const TrimodalDataset raw = synth_generate(synth_cfg);
        save_dataset(raw, out / "raw");

        const TrimodalDataset loaded = load_dataset(out / "raw");
        const PreprocModels models = fit_preproc(loaded, 0.5, 0.99);
        const TrimodalDataset processed = apply_preproc(models, loaded);
        save_dataset(processed, out / "proc");
        save_preproc(models, out / "proc" / "models");

        TrainConfig cfg;
        cfg.latent_dim = 4;
        cfg.hidden_brain = cfg.hidden_visual = cfg.hidden_textual = 12;
        cfg.epochs = 4;
        cfg.batch_size = 32;
        cfg.seed = 5;
        const TrainResult trained = train_run(load_dataset(out / "proc"), cfg, out / "run");

        SvmConfig svm_cfg;
        const DecodeReport report = decode_with_subset(trained.checkpoint.params, processed,
                                                       {Modality::visual, Modality::textual}, false, svm_cfg);
        write_decode_report(report, out / "overall.csv", out / "per_class.csv");
    };
    run_pipeline(dir / "a");
    run_pipeline(dir / "b");
    const auto a = read_tree(dir / "a");
    const auto b = read_tree(dir / "b");
    std::size_t mismatched = 0;
    std::string first_diff = "-";
    for (const auto& [name, bytes] : a) {
        const auto it = b.find(name);
        if (it == b.end() || it->second != bytes) {
            ++mismatched;
            if (first_diff == "-") first_diff = name;
        }
    }
    const bool ok = mismatched == 0 && a.size() == b.size() && !a.empty();
    char detail[160];
    std::snprintf(detail, sizeof detail, "%zu files compared, %zu mismatched (first: %s)", a.size(),
                  mismatched, first_diff.c_str());
    report(9, "pipeline determinism", ok, detail);
}

} // namespace

int main() {
    const fs::path dir = work_dir("suite");
    criterion_gradients();
    criterion_poe_oracle();
    criterion_sandwich();
    criterion_mixture_kl();
    criterion_decoding(dir);
    criterion_ablation(dir);
    criterion_preprocessing();
    criterion_stage_isolation();
    criterion_determinism(dir);
    if (g_failures == 0) {
        std::printf("all acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d acceptance criteria failed\n", g_failures);
    return 1;
}
