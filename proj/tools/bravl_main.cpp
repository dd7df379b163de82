#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "bravl/io.hpp"
#include "bravl/pipeline.hpp"
#include "bravl/preprocess.hpp"
#include "bravl/train.hpp"

namespace fs = std::filesystem;
using namespace bravl;

namespace {

constexpr const char* kVersion = "0.1.0";

// every run leaves a reproducibility record next to its outputs
void write_run_info(const fs::path& dir, const std::string& command, const std::string& config_text) {
    std::ofstream os(dir / "run_info.txt", std::ios::trunc);
    os << "tool=bravl " << kVersion << "\n";
    os << "command=" << command << "\n";
    os << config_text;
}

struct SynthOptions {
    SynthConfig cfg;
    std::string out;
};

void add_synth(CLI::App& app, SynthOptions& opt) {
    CLI::App* cmd = app.add_subcommand("synth", "Generate a seeded synthetic trimodal dataset");
    cmd->add_option("--out", opt.out, "Output dataset directory")->required();
    cmd->add_option("--seed", opt.cfg.seed, "Generator seed")->capture_default_str();
    cmd->add_option("--seen-classes", opt.cfg.n_seen_classes, "Seen class count")->capture_default_str();
    cmd->add_option("--novel-classes", opt.cfg.n_novel_classes, "Novel class count")->capture_default_str();
    cmd->add_option("--samples-per-class", opt.cfg.samples_per_class, "Stimuli per class")
        ->capture_default_str();
    cmd->add_option("--latent-true-dim", opt.cfg.latent_true_dim, "Ground-truth latent dimension")
        ->capture_default_str();
    cmd->add_option("--dim-brain", opt.cfg.dim_brain, "Brain feature dimension")->capture_default_str();
    cmd->add_option("--dim-visual", opt.cfg.dim_visual, "Visual feature dimension")->capture_default_str();
    cmd->add_option("--dim-textual", opt.cfg.dim_textual, "Textual feature dimension")->capture_default_str();
    cmd->add_option("--repeats", opt.cfg.repeats_per_stimulus, "Brain trials per stimulus")
        ->capture_default_str();
    cmd->add_option("--noise-brain", opt.cfg.noise_brain, "Brain noise scale")->capture_default_str();
    cmd->add_option("--noise-visual", opt.cfg.noise_visual, "Visual noise scale")->capture_default_str();
    cmd->add_option("--noise-textual", opt.cfg.noise_textual, "Textual noise scale")->capture_default_str();
    cmd->add_option("--class-spread", opt.cfg.class_spread, "Within-class latent spread")
        ->capture_default_str();
    cmd->add_option("--noise-dim-fraction", opt.cfg.brain_noise_dim_fraction,
                    "Fraction of brain dimensions carrying no signal")
        ->capture_default_str();
    cmd->add_option("--extra-bimodal", opt.cfg.n_extra_bimodal, "Extra visual-textual pairs")
        ->capture_default_str();
    cmd->add_option("--extra-visual", opt.cfg.n_extra_visual_only, "Extra visual-only samples")
        ->capture_default_str();
    cmd->add_option("--extra-textual", opt.cfg.n_extra_textual_only, "Extra textual-only samples")
        ->capture_default_str();
    cmd->callback([&opt] {
        const TrimodalDataset ds = synth_generate(opt.cfg);
        save_dataset(ds, opt.out);
        std::ostringstream cfg_text;
        cfg_text << "seed=" << opt.cfg.seed << "\nseen_classes=" << opt.cfg.n_seen_classes
                 << "\nnovel_classes=" << opt.cfg.n_novel_classes
                 << "\nsamples_per_class=" << opt.cfg.samples_per_class
                 << "\nrepeats=" << opt.cfg.repeats_per_stimulus << "\n";
        write_run_info(opt.out, "synth", cfg_text.str());
        std::cout << "wrote dataset to " << opt.out << "\n";
    });
}

struct PreprocessOptions {
    std::string data;
    std::string out;
    double stability_ratio = 0.15;
    double pca_variance = 0.99;
};

void add_preprocess(CLI::App& app, PreprocessOptions& opt) {
    CLI::App* cmd = app.add_subcommand(
        "preprocess", "Voxel stability selection, seen-train normalization and PCA for every modality");
    cmd->add_option("--data", opt.data, "Raw dataset directory")->required();
    cmd->add_option("--out", opt.out, "Processed dataset directory")->required();
    cmd->add_option("--stability-ratio", opt.stability_ratio, "Top fraction of voxels kept per ROI")
        ->capture_default_str();
    cmd->add_option("--pca-variance", opt.pca_variance, "Retained variance target")->capture_default_str();
    cmd->callback([&opt] {
        const TrimodalDataset raw = load_dataset(opt.data);
        const PreprocModels models = fit_preproc(raw, opt.stability_ratio, opt.pca_variance);
        const TrimodalDataset processed = apply_preproc(models, raw);
        save_dataset(processed, opt.out);
        save_preproc(models, fs::path(opt.out) / "models");
        std::ostringstream cfg_text;
        cfg_text << "data=" << opt.data << "\nstability_ratio=" << opt.stability_ratio
                 << "\npca_variance=" << opt.pca_variance << "\n";
        write_run_info(opt.out, "preprocess", cfg_text.str());
        std::cout << "brain dims " << raw.seen.brain.cols << " -> " << processed.seen.brain.cols
                  << ", visual " << raw.seen.visual.cols << " -> " << processed.seen.visual.cols
                  << ", textual " << raw.seen.textual.cols << " -> " << processed.seen.textual.cols << "\n";
    });
}

struct TrainOptions {
    TrainConfig cfg;
    std::string data;
    std::string out;
    std::string config_path;
    std::string resume;
    std::string posterior = "mopoe";
    bool paper_scale = false;
};

void add_train_flags(CLI::App* cmd, TrainOptions& opt) {
    cmd->add_option("--config", opt.config_path, "key=value config file (TrainConfig field names)");
    cmd->add_option("--latent-dim", opt.cfg.latent_dim, "Latent dimension")->capture_default_str();
    cmd->add_option("--hidden-brain", opt.cfg.hidden_brain, "Brain MLP width")->capture_default_str();
    cmd->add_option("--hidden-visual", opt.cfg.hidden_visual, "Visual MLP width")->capture_default_str();
    cmd->add_option("--hidden-textual", opt.cfg.hidden_textual, "Textual MLP width")->capture_default_str();
    cmd->add_option("--lr", opt.cfg.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--batch-size", opt.cfg.batch_size, "Minibatch size (512 at paper scale)")
        ->capture_default_str();
    cmd->add_option("--epochs", opt.cfg.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--lambda1", opt.cfg.lambda1, "Intra-modality MI weight")->capture_default_str();
    cmd->add_option("--lambda2", opt.cfg.lambda2, "Inter-modality MI weight")->capture_default_str();
    cmd->add_option("--cubo-k", opt.cfg.cubo_k, "CUBO sample count")->capture_default_str();
    cmd->add_option("--anneal-rate", opt.cfg.anneal_rate, "KL weight growth per epoch")
        ->capture_default_str();
    cmd->add_option("--posterior", opt.posterior, "poe|moe|mopoe")->capture_default_str();
    cmd->add_option("--negatives-per-type", opt.cfg.negatives_per_type, "Contrastive negatives per type")
        ->capture_default_str();
    cmd->add_option("--seed", opt.cfg.seed, "Training seed")->capture_default_str();
    cmd->add_flag("--intra-off", opt.cfg.intra_off, "Drop the intra-modality MI term");
    cmd->add_flag("--inter-off", opt.cfg.inter_off, "Drop the inter-modality MI term");
    cmd->add_option("--checkpoint-every", opt.cfg.checkpoint_every, "Epochs between checkpoints (0 = final only)")
        ->capture_default_str();
    cmd->add_flag("--paper-scale", opt.paper_scale,
                  "Use the full-scale defaults (hidden 512/2048/512, batch 512, 100 epochs, lr 1e-4)");
}

// explicit flags beat the config file, which beats --paper-scale defaults
void resolve_train_config(CLI::App* cmd, TrainOptions& opt) {
    TrainConfig resolved;
    if (opt.paper_scale) {
        resolved.hidden_brain = 512;
        resolved.hidden_visual = 2048;
        resolved.hidden_textual = 512;
        resolved.batch_size = 512;
        resolved.epochs = 100;
        resolved.lr = 1e-4;
    }
    if (!opt.config_path.empty()) resolved = parse_train_config(opt.config_path);
    auto touched = [&](const std::string& flag) { return cmd->count(flag) > 0; };
    if (!touched("--latent-dim")) opt.cfg.latent_dim = resolved.latent_dim;
    if (!touched("--hidden-brain")) opt.cfg.hidden_brain = resolved.hidden_brain;
    if (!touched("--hidden-visual")) opt.cfg.hidden_visual = resolved.hidden_visual;
    if (!touched("--hidden-textual")) opt.cfg.hidden_textual = resolved.hidden_textual;
    if (!touched("--lr")) opt.cfg.lr = resolved.lr;
    if (!touched("--batch-size")) opt.cfg.batch_size = resolved.batch_size;
    if (!touched("--epochs")) opt.cfg.epochs = resolved.epochs;
    if (!touched("--lambda1")) opt.cfg.lambda1 = resolved.lambda1;
    if (!touched("--lambda2")) opt.cfg.lambda2 = resolved.lambda2;
    if (!touched("--cubo-k")) opt.cfg.cubo_k = resolved.cubo_k;
    if (!touched("--anneal-rate")) opt.cfg.anneal_rate = resolved.anneal_rate;
    if (!touched("--posterior")) opt.cfg.posterior_type = resolved.posterior_type;
    else opt.cfg.posterior_type = posterior_type_from_name(opt.posterior);
    if (!touched("--negatives-per-type")) opt.cfg.negatives_per_type = resolved.negatives_per_type;
    if (!touched("--seed")) opt.cfg.seed = resolved.seed;
    if (!touched("--intra-off")) opt.cfg.intra_off = resolved.intra_off;
    if (!touched("--inter-off")) opt.cfg.inter_off = resolved.inter_off;
    if (!touched("--checkpoint-every")) opt.cfg.checkpoint_every = resolved.checkpoint_every;
}

void add_train(CLI::App& app, TrainOptions& opt) {
    CLI::App* cmd = app.add_subcommand("train", "Two-stage training on a preprocessed dataset");
    cmd->add_option("--data", opt.data, "Preprocessed dataset directory")->required();
    cmd->add_option("--out", opt.out, "Run directory (log.csv, checkpoints)")->required();
    cmd->add_option("--resume", opt.resume, "Checkpoint directory to resume from");
    add_train_flags(cmd, opt);
    cmd->callback([&opt, cmd] {
        resolve_train_config(cmd, opt);
        opt.cfg.validate();
        const TrimodalDataset ds = load_dataset(opt.data);
        fs::create_directories(opt.out);
        write_run_info(opt.out, "train", train_config_text(opt.cfg));
        if (!opt.resume.empty()) {
            const Checkpoint ck = load_checkpoint(opt.resume);
            train_run(ds, opt.cfg, opt.out, &ck);
        } else {
            train_run(ds, opt.cfg, opt.out);
        }
        std::cout << "checkpoint written to " << (fs::path(opt.out) / "checkpoint").string() << "\n";
    });
}

struct DecodeOptions {
    std::string data;
    std::string model;
    std::string out;
    std::string modalities = "v,t";
    std::string baseline;
    bool strict_subset = false;
    double gamma = 1e-2;
    double svm_c = 1.0;
    bool paper_scale = false;
    bool export_latents = false;
};

void add_decode(CLI::App& app, DecodeOptions& opt) {
    CLI::App* cmd = app.add_subcommand("decode", "Zero-shot brain decoding through the latent classifier");
    cmd->add_option("--data", opt.data, "Preprocessed dataset directory")->required();
    cmd->add_option("--model", opt.model, "Checkpoint directory")->required();
    cmd->add_option("--out", opt.out, "Report directory")->required();
    cmd->add_option("--modalities", opt.modalities, "Classifier training subset: v, t or v,t")
        ->capture_default_str();
    cmd->add_flag("--strict-subset", opt.strict_subset,
                  "Train only on the exact subset latents (skip the per-subset union)");
    cmd->add_option("--gamma", opt.gamma, "RBF gamma (1e-5 at paper scale)")->capture_default_str();
    cmd->add_option("--svm-c", opt.svm_c, "SVM C")->capture_default_str();
    cmd->add_option("--baseline", opt.baseline,
                    "per_class.csv of a comparison run; adds per-class accuracy gains");
    cmd->add_flag("--paper-scale", opt.paper_scale, "Use the full-scale SVM gamma default (1e-5)");
    cmd->add_flag("--export-latents", opt.export_latents,
                  "Also write test brain latents and classifier latents as matrix containers");
    cmd->callback([&opt, cmd] {
        const TrimodalDataset ds = load_dataset(opt.data);
        const Checkpoint ck = load_checkpoint(opt.model);
        SvmConfig svm_cfg;
        svm_cfg.gamma = (opt.paper_scale && cmd->count("--gamma") == 0) ? 1e-5 : opt.gamma;
        svm_cfg.c = opt.svm_c;
        const std::vector<Modality> subset = parse_modalities(opt.modalities);

        DecodeReport baseline;
        const DecodeReport* baseline_ptr = nullptr;
        if (!opt.baseline.empty()) {
            const fs::path base(opt.baseline);
            baseline = read_decode_report(base.parent_path() / "overall.csv", base);
            baseline_ptr = &baseline;
        }
        const DecodeReport report =
            decode_with_subset(ck.params, ds, subset, opt.strict_subset, svm_cfg, {1, 5}, baseline_ptr);

        fs::create_directories(opt.out);
        write_decode_report(report, fs::path(opt.out) / "overall.csv", fs::path(opt.out) / "per_class.csv");
        if (opt.export_latents) {
            BatchView brain_features;
            brain_features.set(Modality::brain, ds.test->brain);
            write_matrix_f32(fs::path(opt.out) / "test_brain_latents.bvlm",
                             embed(ck.params, brain_features, {Modality::brain}));
            const LatentTrainingSet training = classifier_latents(
                ck.params, ds.novel.visual, ds.novel.textual, ds.novel.labels, subset, opt.strict_subset);
            write_matrix_f32(fs::path(opt.out) / "classifier_latents.bvlm", training.latents);
            write_labels(fs::path(opt.out) / "classifier_labels.bvll", training.labels);
        }
        std::ostringstream cfg_text;
        cfg_text << "data=" << opt.data << "\nmodel=" << opt.model << "\nmodalities=" << opt.modalities
                 << "\nstrict_subset=" << opt.strict_subset << "\ngamma=" << svm_cfg.gamma
                 << "\nsvm_c=" << svm_cfg.c << "\n";
        write_run_info(opt.out, "decode", cfg_text.str());
        std::cout << "subset " << report.modality_subset << ": top-1 " << report.top_k(1) << ", top-5 "
                  << report.top_k(5) << " over " << report.n_test << " test trials\n";
    });
}

struct AnalyzeOptions {
    std::string data;
    std::string model;
    std::string preproc;
    std::string input;
    std::string out;
};

void add_analyze(CLI::App& app, AnalyzeOptions& opt) {
    CLI::App* cmd = app.add_subcommand("analyze", "Model analyses emitted as CSV");
    cmd->require_subcommand(1);

    CLI::App* vw = cmd->add_subcommand("voxel-weights", "Per-voxel contribution weights");
    vw->add_option("--preproc", opt.preproc, "Preprocessing models directory")->required();
    vw->add_option("--model", opt.model, "Checkpoint directory")->required();
    vw->add_option("--out", opt.out, "Output CSV")->required();
    vw->callback([&opt] {
        const PreprocModels models = load_preproc(opt.preproc);
        const Checkpoint ck = load_checkpoint(opt.model);
        const std::vector<double> w =
            voxel_contribution(models.brain.rest.pca, ck.params.encoder(Modality::brain));
        std::ofstream os(opt.out, std::ios::trunc);
        os.precision(10);
        os << "voxel,weight\n";
        // indices refer to the selected-voxel order when stability ran
        for (std::size_t i = 0; i < w.size(); ++i) {
            const std::size_t voxel =
                models.brain.stability_used ? models.brain.report.selected[i] : i;
            os << voxel << "," << w[i] << "\n";
        }
        std::cout << "wrote " << w.size() << " voxel weights to " << opt.out << "\n";
    });

    CLI::App* cg = cmd->add_subcommand("crossgen", "Synthesize brain activity from visual+textual features");
    cg->add_option("--data", opt.data, "Preprocessed dataset directory")->required();
    cg->add_option("--model", opt.model, "Checkpoint directory")->required();
    cg->add_option("--out", opt.out, "Output directory")->required();
    cg->callback([&opt] {
        const TrimodalDataset ds = load_dataset(opt.data);
        if (!ds.test) throw std::runtime_error("crossgen: dataset carries no test split");
        const Checkpoint ck = load_checkpoint(opt.model);
        // one novel stimulus per novel row; replicate over its test trials
        const std::size_t repeats = ds.repeats_per_stimulus;
        const Matrix per_stimulus = cross_modal_generate(ck.params, ds.novel.visual, ds.novel.textual);
        Matrix synthetic(ds.test->brain.rows, per_stimulus.cols);
        for (std::size_t r = 0; r < synthetic.rows; ++r) {
            const std::size_t stimulus = r / repeats;
            std::copy(per_stimulus.row_ptr(stimulus), per_stimulus.row_ptr(stimulus) + per_stimulus.cols,
                      synthetic.row_ptr(r));
        }
        const double r = pearson_match(ds.test->brain, synthetic);
        fs::create_directories(opt.out);
        write_matrix_f32(fs::path(opt.out) / "synthetic_brain.bvlm", synthetic);
        std::ofstream os(fs::path(opt.out) / "crossgen.csv", std::ios::trunc);
        os.precision(10);
        os << "metric,value\nmean_pearson_r," << r << "\nn_test," << synthetic.rows << "\n";
        std::cout << "mean Pearson r between real and synthetic brain responses: " << r << "\n";
    });

    CLI::App* cs = cmd->add_subcommand("cosine", "Cosine similarity matrix of a stored feature matrix");
    cs->add_option("--input", opt.input, "Matrix container (.bvlm)")->required();
    cs->add_option("--out", opt.out, "Output CSV (matrix plus mean/std summary)")->required();
    cs->callback([&opt] {
        const Matrix embeddings = read_matrix(opt.input);
        const Matrix sim = cosine_similarity_matrix(embeddings);
        const CosineSummary summary = offdiagonal_summary(sim);
        std::ofstream os(opt.out, std::ios::trunc);
        os.precision(10);
        os << "offdiag_mean," << summary.mean << "\noffdiag_std," << summary.stddev << "\n";
        for (std::size_t i = 0; i < sim.rows; ++i) {
            for (std::size_t j = 0; j < sim.cols; ++j) os << (j ? "," : "") << sim.at(i, j);
            os << "\n";
        }
        std::cout << "cosine similarity: mean " << summary.mean << " std " << summary.stddev << "\n";
    });
}

struct AblateOptions {
    std::string out;
    std::string variants = "full,no-intra,no-inter,elbo-only";
    std::string posteriors = "mopoe";
    std::size_t seeds = 5;
    double stability_ratio = 0.15;
    double pca_variance = 0.99;
    double gamma = 1e-2;
    TrainOptions train;
    SynthConfig synth;
};

void add_ablate(CLI::App& app, AblateOptions& opt) {
    CLI::App* cmd = app.add_subcommand(
        "ablate", "Objective/posterior ablation sweep on synthetic data, one full pipeline per seed");
    cmd->add_option("--out", opt.out, "Output comparison CSV")->required();
    cmd->add_option("--variants", opt.variants, "Comma list of full,no-intra,no-inter,elbo-only")
        ->capture_default_str();
    cmd->add_option("--posteriors", opt.posteriors, "Comma list of poe,moe,mopoe")->capture_default_str();
    cmd->add_option("--seeds", opt.seeds, "Number of seeds (0..n-1)")->capture_default_str();
    cmd->add_option("--stability-ratio", opt.stability_ratio, "Preprocessing stability ratio")
        ->capture_default_str();
    cmd->add_option("--pca-variance", opt.pca_variance, "Preprocessing variance target")
        ->capture_default_str();
    cmd->add_option("--gamma", opt.gamma, "Classifier RBF gamma")->capture_default_str();
    cmd->add_option("--seen-classes", opt.synth.n_seen_classes, "Seen class count")->capture_default_str();
    cmd->add_option("--novel-classes", opt.synth.n_novel_classes, "Novel class count")->capture_default_str();
    cmd->add_option("--samples-per-class", opt.synth.samples_per_class, "Stimuli per class")
        ->capture_default_str();
    cmd->add_option("--latent-true-dim", opt.synth.latent_true_dim, "Ground-truth latent dimension")
        ->capture_default_str();
    cmd->add_option("--dim-brain", opt.synth.dim_brain, "Brain feature dimension")->capture_default_str();
    cmd->add_option("--dim-visual", opt.synth.dim_visual, "Visual feature dimension")->capture_default_str();
    cmd->add_option("--dim-textual", opt.synth.dim_textual, "Textual feature dimension")
        ->capture_default_str();
    cmd->add_option("--repeats", opt.synth.repeats_per_stimulus, "Brain trials per stimulus")
        ->capture_default_str();
    add_train_flags(cmd, opt.train);
    cmd->callback([&opt, cmd] {
        resolve_train_config(cmd, opt.train);
        std::vector<AblationVariant> variants;
        {
            std::istringstream is(opt.variants);
            std::string tok;
            while (std::getline(is, tok, ',')) variants.push_back(ablation_variant_from_name(tok));
        }
        std::vector<PosteriorType> posteriors;
        {
            std::istringstream is(opt.posteriors);
            std::string tok;
            while (std::getline(is, tok, ',')) posteriors.push_back(posterior_type_from_name(tok));
        }
        SvmConfig svm_cfg;
        svm_cfg.gamma = opt.gamma;
        const std::vector<AblationRow> rows = run_ablation(
            variants, posteriors, opt.seeds, opt.synth, opt.train.cfg, opt.stability_ratio,
            opt.pca_variance, svm_cfg);
        std::ofstream os(opt.out, std::ios::trunc);
        os << ablation_csv(rows);
        std::cout << "wrote " << rows.size() << " result rows (plus means) to " << opt.out << "\n";
    });
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trimodal brain-visual-textual generative model: synthesis, preprocessing, training, "
                 "zero-shot decoding and analyses"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    SynthOptions synth_opt;
    PreprocessOptions preprocess_opt;
    TrainOptions train_opt;
    DecodeOptions decode_opt;
    AnalyzeOptions analyze_opt;
    AblateOptions ablate_opt;

    add_synth(app, synth_opt);
    add_preprocess(app, preprocess_opt);
    add_train(app, train_opt);
    add_decode(app, decode_opt);
    add_analyze(app, analyze_opt);
    add_ablate(app, ablate_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
