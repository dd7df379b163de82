#include "bravl/pipeline.hpp"

#include <atomic>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "bravl/preprocess.hpp"

namespace bravl {

DecodeReport decode_with_subset(const ModelParams& params, const TrimodalDataset& processed,
                                const std::vector<Modality>& subset, bool strict_subset, const SvmConfig& svm_cfg,
                                const std::vector<std::size_t>& k_list, const DecodeReport* baseline) {
    if (!processed.test) throw std::invalid_argument("decode: dataset carries no test split");
    const LatentTrainingSet training = classifier_latents(params, processed.novel.visual,
                                                          processed.novel.textual, processed.novel.labels,
                                                          subset, strict_subset);
    const SvmModel svm = svm_fit(training.latents, training.labels, svm_cfg);
    DecodeReport report =
        evaluate_decoding(params, svm, processed.test->brain, processed.test->labels, k_list, baseline);
    report.modality_subset = modalities_label(subset);
    return report;
}

std::vector<Modality> parse_modalities(const std::string& spec) {
    std::vector<Modality> out;
    std::istringstream is(spec);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (tok == "b" || tok == "brain") out.push_back(Modality::brain);
        else if (tok == "v" || tok == "visual") out.push_back(Modality::visual);
        else if (tok == "t" || tok == "textual") out.push_back(Modality::textual);
        else throw std::invalid_argument("unknown modality: " + tok);
    }
    if (out.empty()) throw std::invalid_argument("empty modality list");
    return out;
}

std::string modalities_label(const std::vector<Modality>& subset) {
    std::string label;
    for (Modality m : subset) {
        if (!label.empty()) label += ",";
        label += modality_name(m)[0];
    }
    return label;
}

AblationVariant ablation_variant_from_name(const std::string& name) {
    if (name == "full") return AblationVariant::full;
    if (name == "no-intra") return AblationVariant::no_intra;
    if (name == "no-inter") return AblationVariant::no_inter;
    if (name == "elbo-only") return AblationVariant::elbo_only;
    throw std::invalid_argument("unknown ablation variant: " + name);
}

const char* ablation_variant_name(AblationVariant v) {
    switch (v) {
    case AblationVariant::full: return "full";
    case AblationVariant::no_intra: return "no-intra";
    case AblationVariant::no_inter: return "no-inter";
    case AblationVariant::elbo_only: return "elbo-only";
    }
    return "?";
}

void apply_variant(TrainConfig& cfg, AblationVariant v) {
    cfg.intra_off = v == AblationVariant::no_intra || v == AblationVariant::elbo_only;
    cfg.inter_off = v == AblationVariant::no_inter || v == AblationVariant::elbo_only;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& variants,
                                      const std::vector<PosteriorType>& posteriors, std::size_t n_seeds,
                                      const SynthConfig& synth_base, const TrainConfig& train_base,
                                      double stability_ratio, double pca_target, const SvmConfig& svm_cfg) {
    struct Job {
        AblationVariant variant;
        PosteriorType posterior;
        std::size_t seed;
    };
    std::vector<Job> jobs;
    for (const AblationVariant variant : variants)
        for (const PosteriorType posterior : posteriors)
            for (std::size_t s = 0; s < n_seeds; ++s) jobs.push_back({variant, posterior, s});

    std::vector<AblationRow> rows(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= jobs.size()) return;
            const Job& job = jobs[j];
            SynthConfig synth_cfg = synth_base;
            synth_cfg.seed = job.seed;
            const TrimodalDataset raw = synth_generate(synth_cfg);
            const PreprocModels models = fit_preproc(raw, stability_ratio, pca_target);
            const TrimodalDataset processed = apply_preproc(models, raw);

            TrainConfig cfg = train_base;
            cfg.seed = job.seed;
            cfg.posterior_type = job.posterior;
            apply_variant(cfg, job.variant);
            const TrainResult trained = train_run(processed, cfg);

            const DecodeReport report = decode_with_subset(
                trained.checkpoint.params, processed, {Modality::visual, Modality::textual}, false, svm_cfg);
            rows[j] = {ablation_variant_name(job.variant), posterior_type_name(job.posterior), job.seed,
                       report.top_k(1), report.top_k(5)};
        }
    };

    // each run is an independent deterministic pipeline; output slots are
    // fixed up front so the row order never depends on scheduling
    const std::size_t n_workers =
        std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), jobs.size());
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < n_workers; ++t) threads.emplace_back(worker);
        for (std::thread& t : threads) t.join();
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << "variant,posterior,seed,top1,top5\n";
    std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const AblationRow& r : rows) {
        os << r.variant << "," << r.posterior << "," << r.seed << "," << r.top1 << "," << r.top5 << "\n";
        groups[{r.variant, r.posterior}].first.push_back(r.top1);
        groups[{r.variant, r.posterior}].second.push_back(r.top5);
    }
    for (const auto& [key, accs] : groups) {
        double t1 = 0, t5 = 0;
        for (double v : accs.first) t1 += v;
        for (double v : accs.second) t5 += v;
        os << key.first << "," << key.second << ",mean," << t1 / static_cast<double>(accs.first.size()) << ","
           << t5 / static_cast<double>(accs.second.size()) << "\n";
    }
    return os.str();
}

} // namespace bravl
