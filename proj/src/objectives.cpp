#include "bravl/objectives.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bravl/rng.hpp"

namespace bravl {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

std::vector<Modality> BatchView::present() const {
    std::vector<Modality> out;
    for (Modality m : kAllModalities)
        if (has(m)) out.push_back(m);
    return out;
}

std::size_t BatchView::rows() const {
    for (Modality m : kAllModalities)
        if (has(m)) return get(m).rows;
    return 0;
}

void BatchView::validate() const {
    const std::vector<Modality> mods = present();
    if (mods.empty()) throw std::invalid_argument("batch: at least one modality required");
    const std::size_t n = get(mods.front()).rows;
    if (n == 0) throw std::invalid_argument("batch: empty");
    for (Modality m : mods) {
        if (get(m).rows != n) throw std::invalid_argument("batch: modality row counts differ");
        if (!get(m).all_finite()) throw std::invalid_argument("batch: non-finite features");
    }
}

void ObjectiveConfig::validate() const {
    if (lambda1 < 0 || lambda2 < 0) throw std::invalid_argument("objective: lambda weights must be nonnegative");
    if (cubo_k < 2) throw std::invalid_argument("objective: cubo_k must be at least 2");
    if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("objective: beta must lie in (0,1]");
    if (negatives_per_type < 1) throw std::invalid_argument("objective: negatives_per_type must be positive");
}

double recon_loglik(const Matrix& x, const Matrix& xhat) {
    if (!x.same_shape(xhat)) throw std::invalid_argument("recon_loglik: shape mismatch");
    const double d = static_cast<double>(x.cols);
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = x.data[i] - xhat.data[i];
        total += e * e;
    }
    return (-0.5 * total) / static_cast<double>(x.rows) - 0.5 * d * kLog2Pi;
}

std::vector<std::vector<Modality>> negative_types(const std::vector<Modality>& present) {
    using M = Modality;
    if (present.size() == 3)
        return {{M::textual}, {M::brain, M::visual}, {M::visual, M::textual},
                {M::brain},   {M::visual},           {M::brain, M::textual}};
    if (present.size() == 2) return {{present[1]}, {present[0]}};
    return {};
}

namespace {

std::size_t component_count(PosteriorType t, std::size_t n_present) {
    switch (t) {
    case PosteriorType::poe: return 1;
    case PosteriorType::moe: return n_present;
    case PosteriorType::mopoe: return (std::size_t{1} << n_present) - 1;
    }
    return 1;
}

struct NoiseBundle {
    std::vector<std::size_t> elbo_choice;
    Matrix elbo_eps;
    std::vector<std::vector<std::size_t>> cubo_choice;
    Matrix cubo_eps; // (K*N) x L, draw-major blocks
};

NoiseBundle draw_noise(std::uint64_t seed, std::size_t n, std::size_t latent, std::size_t n_comp, std::size_t k,
                       bool want_elbo, bool want_cubo) {
    Rng rng(seed);
    NoiseBundle noise;
    if (want_elbo) {
        noise.elbo_choice.resize(n);
        for (std::size_t i = 0; i < n; ++i) noise.elbo_choice[i] = rng.uniform_index(n_comp);
        noise.elbo_eps = rng.normal_matrix(n, latent);
    }
    if (want_cubo) {
        noise.cubo_eps = Matrix(k * n, latent);
        noise.cubo_choice.resize(k);
        for (std::size_t d = 0; d < k; ++d) {
            noise.cubo_choice[d].resize(n);
            for (std::size_t i = 0; i < n; ++i) noise.cubo_choice[d][i] = rng.uniform_index(n_comp);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < latent; ++c) noise.cubo_eps.at(d * n + i, c) = rng.normal();
        }
    }
    return noise;
}

// binds each net once per graph, with or without gradient sinks per stage
struct Binder {
    Graph& g;
    const ModelParams& params;
    GradientSet* grads;
    GradStage stage;
    std::array<std::optional<BoundMlp>, 3> enc, dec, aux;

    Binder(Graph& graph, const ModelParams& p, GradientSet* gr, GradStage st)
        : g(graph), params(p), grads(gr), stage(st) {}

    bool model_grad() const {
        return grads && (stage == GradStage::model_only || stage == GradStage::all);
    }
    bool aux_grad() const { return grads && (stage == GradStage::aux_only || stage == GradStage::all); }

    const BoundMlp& encoder(Modality m) {
        auto& slot = enc[static_cast<std::size_t>(m)];
        if (!slot)
            slot = bind_mlp(g, params.encoder(m), model_grad() ? &grads->encoder(m) : nullptr);
        return *slot;
    }
    const BoundMlp& decoder(Modality m) {
        auto& slot = dec[static_cast<std::size_t>(m)];
        if (!slot)
            slot = bind_mlp(g, params.decoder(m), model_grad() ? &grads->decoder(m) : nullptr);
        return *slot;
    }
    const BoundMlp& aux_net(Modality m) {
        auto& slot = aux[static_cast<std::size_t>(m)];
        if (!slot) slot = bind_mlp(g, params.aux_net(m), aux_grad() ? &grads->aux_net(m) : nullptr);
        return *slot;
    }
};

GaussianVars poe_combine_graph(Graph& g, const std::vector<GaussianVars>& members) {
    if (members.size() == 1) return members.front();
    std::vector<Graph::Var> precisions;
    for (const GaussianVars& m : members) precisions.push_back(g.exp_op(g.scale(m.logvar, -1.0)));
    Graph::Var sum_prec = precisions[0];
    for (std::size_t i = 1; i < precisions.size(); ++i) sum_prec = g.add(sum_prec, precisions[i]);
    const Graph::Var neg_log = g.scale(g.log_op(sum_prec), -1.0);
    Graph::Var weighted = g.mul(precisions[0], members[0].mean);
    for (std::size_t i = 1; i < members.size(); ++i)
        weighted = g.add(weighted, g.mul(precisions[i], members[i].mean));
    GaussianVars out;
    out.mean = g.mul(weighted, g.exp_op(neg_log));
    out.logvar = g.clamp(neg_log, kLogVarMin, kLogVarMax);
    return out;
}

std::vector<GaussianVars> build_components(Graph& g, PosteriorType type, const std::vector<Modality>& present,
                                           const std::vector<GaussianVars>& experts) {
    std::vector<GaussianVars> comps;
    if (type == PosteriorType::poe) {
        comps.push_back(poe_combine_graph(g, experts));
        return comps;
    }
    if (type == PosteriorType::moe) {
        for (const GaussianVars& e : experts) comps.push_back(e);
        return comps;
    }
    for (const auto& subset : enumerate_subsets(present)) {
        std::vector<GaussianVars> members;
        for (Modality m : subset) {
            const auto it = std::find(present.begin(), present.end(), m);
            members.push_back(experts[static_cast<std::size_t>(it - present.begin())]);
        }
        comps.push_back(poe_combine_graph(g, members));
    }
    return comps;
}

Graph::Var sample_mixture(Graph& g, const std::vector<GaussianVars>& comps,
                          std::vector<std::size_t> choice, Graph::Var eps) {
    if (comps.size() == 1 && g.value(eps).rows == g.value(comps[0].mean).rows)
        return g.reparam(comps[0].mean, comps[0].logvar, eps);
    std::vector<Graph::Var> means, logvars;
    for (const GaussianVars& c : comps) {
        means.push_back(c.mean);
        logvars.push_back(c.logvar);
    }
    return g.mixture_sample(means, logvars, std::move(choice), eps);
}

Graph::Var recon_term(Graph& g, const Matrix& x, Graph::Var xhat, double weight) {
    const Graph::Var xc = g.input(x);
    const double d = static_cast<double>(x.cols);
    Graph::Var r = g.mean_rows(g.scale(g.sqerr_rowsum(xc, xhat), -0.5));
    r = g.add_scalar(r, -0.5 * d * kLog2Pi);
    if (weight != 1.0) r = g.scale(r, weight);
    return r;
}

struct MainVars {
    std::vector<GaussianVars> comps;
    Graph::Var z = -1;
    std::array<Graph::Var, 3> xhat = {-1, -1, -1};
    std::array<Graph::Var, 3> recon = {-1, -1, -1};
    Graph::Var kl = -1;
    Graph::Var elbo = -1;
    Graph::Var intra = -1;
};

std::vector<GaussianVars> encode_experts(Graph& g, Binder& bind, const BatchView& batch) {
    std::vector<GaussianVars> experts;
    for (Modality m : batch.present())
        experts.push_back(encode_graph(g, bind.encoder(m), g.input(batch.get(m)), bind.params.latent_dim));
    return experts;
}

// the elbo/intra part: experts -> components -> one mixture draw -> decode
MainVars build_main(Graph& g, Binder& bind, const BatchView& batch, const ObjectiveConfig& cfg,
                    const NoiseBundle& noise, bool want_intra, const std::vector<GaussianVars>& experts) {
    const std::vector<Modality> present = batch.present();
    const std::size_t latent = bind.params.latent_dim;

    MainVars out;
    out.comps = build_components(g, cfg.posterior, present, experts);

    const Graph::Var eps = g.input(noise.elbo_eps);
    out.z = sample_mixture(g, out.comps, noise.elbo_choice, eps);

    for (Modality m : present) {
        const Graph::Var xhat = mlp_forward(g, bind.decoder(m), out.z);
        out.xhat[static_cast<std::size_t>(m)] = xhat;
    }

    // reconstruction: sampled-component path by default, per-subset average
    // behind the config switch
    for (Modality m : present) {
        const std::size_t mi = static_cast<std::size_t>(m);
        const double w = cfg.recon_weights[mi];
        if (!cfg.per_subset_recon) {
            out.recon[mi] = recon_term(g, batch.get(m), out.xhat[mi], w);
        } else {
            Graph::Var acc = -1;
            for (const GaussianVars& comp : out.comps) {
                const Graph::Var zc = g.reparam(comp.mean, comp.logvar, eps);
                const Graph::Var term = recon_term(g, batch.get(m), mlp_forward(g, bind.decoder(m), zc), w);
                acc = acc < 0 ? term : g.add(acc, term);
            }
            out.recon[mi] = g.scale(acc, 1.0 / static_cast<double>(out.comps.size()));
        }
    }

    Graph::Var kl_sum = -1;
    for (const GaussianVars& comp : out.comps) {
        const Graph::Var term = g.mean_rows(g.kl_std_rowsum(comp.mean, comp.logvar));
        kl_sum = kl_sum < 0 ? term : g.add(kl_sum, term);
    }
    out.kl = g.scale(kl_sum, 1.0 / static_cast<double>(out.comps.size()));

    Graph::Var recon_sum = -1;
    for (Modality m : present) {
        const Graph::Var r = out.recon[static_cast<std::size_t>(m)];
        recon_sum = recon_sum < 0 ? r : g.add(recon_sum, r);
    }
    out.elbo = g.add(recon_sum, g.scale(out.kl, -cfg.beta));

    if (want_intra) {
        Graph::Var acc = -1;
        for (Modality m : present) {
            const GaussianVars q = aux_graph(g, bind.aux_net(m), out.xhat[static_cast<std::size_t>(m)], latent);
            const Graph::Var term = g.mean_rows(g.gauss_logprob(out.z, q.mean, q.logvar));
            acc = acc < 0 ? term : g.add(acc, term);
        }
        out.intra = acc;
    }
    return out;
}

struct CuboVars {
    Graph::Var cubo = -1;
    Graph::Var iw_elbo = -1;
};

// nodes shared by every CUBO tuple in one graph
struct CuboContext {
    Graph::Var eps = -1;
    Graph::Var prior_mean = -1;
    Graph::Var prior_logvar = -1;
    std::vector<std::size_t> flat_choice;

    void ensure(Graph& g, const NoiseBundle& noise, std::size_t n, std::size_t latent, std::size_t k) {
        if (eps >= 0) return;
        eps = g.input(noise.cubo_eps);
        prior_mean = g.input(Matrix::zeros(k * n, latent));
        prior_logvar = g.input(Matrix::zeros(k * n, latent));
        flat_choice.resize(k * n);
        for (std::size_t d = 0; d < k; ++d)
            for (std::size_t i = 0; i < n; ++i) flat_choice[d * n + i] = noise.cubo_choice[d][i];
    }
};

// one CUBO tuple: empty shift set = the positive tuple, otherwise the named
// modality blocks are cyclically shifted by `shift` rows
struct TupleSpec {
    std::vector<Modality> shifted;
    std::size_t shift = 0;

    bool shifts(Modality m) const {
        return std::find(shifted.begin(), shifted.end(), m) != shifted.end();
    }
};

// Builds every tuple's importance weights against ONE stacked decoder pass:
// the per-tuple posteriors differ, but the K draws of all tuples go through
// each decoder as a single
// (tuples * K * n)-row forward, which is where the arithmetic lives.
std::vector<CuboVars> build_cubo_batch(Graph& g, Binder& bind, const BatchView& batch,
                                       const ObjectiveConfig& cfg, const NoiseBundle& noise, CuboContext& ctx,
                                       const std::vector<GaussianVars>& experts,
                                       const std::vector<TupleSpec>& specs) {
    const std::vector<Modality> present = batch.present();
    const std::size_t latent = bind.params.latent_dim;
    const std::size_t n = batch.rows();
    const std::size_t K = cfg.cubo_k;
    const std::size_t block = K * n;
    ctx.ensure(g, noise, n, latent, K);

    std::vector<Graph::Var> zs;
    std::vector<Graph::Var> ws;
    for (const TupleSpec& spec : specs) {
        std::vector<GaussianVars> tuple_experts;
        for (std::size_t i = 0; i < present.size(); ++i) {
            GaussianVars e = experts[i];
            if (spec.shifts(present[i]))
                e = GaussianVars{g.shift_rows(e.mean, spec.shift), g.shift_rows(e.logvar, spec.shift)};
            tuple_experts.push_back(e);
        }
        const std::vector<GaussianVars> comps = build_components(g, cfg.posterior, present, tuple_experts);
        std::vector<Graph::Var> comp_means, comp_logvars;
        for (const GaussianVars& c : comps) {
            comp_means.push_back(c.mean);
            comp_logvars.push_back(c.logvar);
        }
        const Graph::Var z = g.mixture_sample(comp_means, comp_logvars, ctx.flat_choice, ctx.eps);
        const Graph::Var log_q = g.mixture_logprob(z, comp_means, comp_logvars);
        zs.push_back(z);
        ws.push_back(g.sub(g.gauss_logprob(z, ctx.prior_mean, ctx.prior_logvar), log_q));
    }

    const Graph::Var stacked = specs.size() == 1 ? zs[0] : g.concat_rows(zs);
    for (Modality m : present) {
        const Matrix& x = batch.get(m);
        const Graph::Var xhat_all = mlp_forward(g, bind.decoder(m), stacked);
        const double dm = static_cast<double>(x.cols);
        for (std::size_t t = 0; t < specs.size(); ++t) {
            const Graph::Var xhat =
                specs.size() == 1 ? xhat_all : g.slice_rows(xhat_all, t * block, (t + 1) * block);
            const std::size_t shift = specs[t].shifts(m) ? specs[t].shift : 0;
            const Graph::Var ll =
                g.add_scalar(g.scale(g.sqerr_rowsum_shifted(xhat, x, shift), -0.5), -0.5 * dm * kLog2Pi);
            ws[t] = g.add(ws[t], ll);
        }
    }

    std::vector<CuboVars> out;
    for (std::size_t t = 0; t < specs.size(); ++t) {
        CuboVars vars;
        vars.iw_elbo = g.mean_rows(ws[t]);
        const Graph::Var per_row = g.add_scalar(g.logsumexp_cols(g.blocks_to_cols(g.scale(ws[t], 2.0), K)),
                                                -std::log(static_cast<double>(K)));
        vars.cubo = g.mean_rows(g.scale(per_row, 0.5));
        out.push_back(vars);
    }
    return out;
}

// per negative type, the logsumexp couples that type's shifted tuples
std::vector<Graph::Var> negative_type_vars(Graph& g, Binder& bind, const BatchView& batch,
                                           const ObjectiveConfig& cfg, const NoiseBundle& noise,
                                           CuboContext& ctx, const std::vector<GaussianVars>& experts,
                                           const std::vector<std::vector<Modality>>& types,
                                           std::size_t shifts) {
    std::vector<TupleSpec> specs;
    for (const auto& type : types)
        for (std::size_t s = 1; s <= shifts; ++s) specs.push_back({type, s});
    const std::vector<CuboVars> tuples = build_cubo_batch(g, bind, batch, cfg, noise, ctx, experts, specs);

    std::vector<Graph::Var> out;
    for (std::size_t t = 0; t < types.size(); ++t) {
        std::vector<Graph::Var> cubos;
        for (std::size_t s = 0; s < shifts; ++s) cubos.push_back(tuples[t * shifts + s].cubo);
        out.push_back(cubos.size() == 1 ? cubos[0] : g.logsumexp_cols(g.concat_cols(cubos)));
    }
    return out;
}

struct InterPlan {
    std::vector<std::vector<Modality>> types;
    double positive_coefficient = 0.0;
    std::size_t shifts = 0;
};

InterPlan plan_inter(const BatchView& batch, const ObjectiveConfig& cfg) {
    InterPlan plan;
    const std::vector<Modality> present = batch.present();
    plan.types = negative_types(present);
    plan.positive_coefficient = present.size() == 3 ? 3.0 : (present.size() == 2 ? 1.0 : 0.0);
    if (!plan.types.empty()) {
        if (batch.rows() < 2) throw std::invalid_argument("inter_mi: needs batch size >= 2");
        plan.shifts = std::min(cfg.negatives_per_type, batch.rows() - 1);
    }
    return plan;
}

} // namespace

double elbo(const BatchView& batch, const ModelParams& params, const ObjectiveConfig& cfg,
            std::uint64_t noise_seed, GradientSet* grads, GradStage stage) {
    batch.validate();
    cfg.validate();
    const std::size_t C = component_count(cfg.posterior, batch.present().size());
    const NoiseBundle noise =
        draw_noise(noise_seed, batch.rows(), params.latent_dim, C, cfg.cubo_k, true, false);
    Graph g;
    Binder bind(g, params, grads, stage);
    MainVars main = build_main(g, bind, batch, cfg, noise, false, encode_experts(g, bind, batch));
    if (grads) g.backward(main.elbo);
    return g.scalar(main.elbo);
}

double intra_mi(const BatchView& batch, const ModelParams& params, const ObjectiveConfig& cfg,
                std::uint64_t noise_seed, GradientSet* grads, GradStage stage) {
    batch.validate();
    cfg.validate();
    const std::size_t C = component_count(cfg.posterior, batch.present().size());
    const NoiseBundle noise =
        draw_noise(noise_seed, batch.rows(), params.latent_dim, C, cfg.cubo_k, true, false);
    Graph g;
    Binder bind(g, params, grads, stage);
    MainVars main = build_main(g, bind, batch, cfg, noise, true, encode_experts(g, bind, batch));
    if (grads) g.backward(main.intra);
    return g.scalar(main.intra);
}

CuboResult cubo(const BatchView& batch, const ModelParams& params, const ObjectiveConfig& cfg,
                std::uint64_t noise_seed, GradientSet* grads, GradStage stage) {
    batch.validate();
    cfg.validate();
    const std::size_t C = component_count(cfg.posterior, batch.present().size());
    const NoiseBundle noise =
        draw_noise(noise_seed, batch.rows(), params.latent_dim, C, cfg.cubo_k, false, true);
    Graph g;
    Binder bind(g, params, grads, stage);
    CuboContext ctx;
    const std::vector<CuboVars> vars =
        build_cubo_batch(g, bind, batch, cfg, noise, ctx, encode_experts(g, bind, batch), {TupleSpec{}});
    if (grads) g.backward(vars[0].cubo);
    return CuboResult{g.scalar(vars[0].cubo), g.scalar(vars[0].iw_elbo)};
}

double inter_mi(const BatchView& batch, const ModelParams& params, const ObjectiveConfig& cfg,
                std::uint64_t noise_seed, GradientSet* grads, GradStage stage) {
    batch.validate();
    cfg.validate();
    const InterPlan plan = plan_inter(batch, cfg);
    if (plan.types.empty()) return 0.0;

    const std::size_t C = component_count(cfg.posterior, batch.present().size());
    const NoiseBundle noise =
        draw_noise(noise_seed, batch.rows(), params.latent_dim, C, cfg.cubo_k, true, true);

    Graph g;
    Binder bind(g, params, grads, stage);
    const std::vector<GaussianVars> experts = encode_experts(g, bind, batch);
    MainVars main = build_main(g, bind, batch, cfg, noise, false, experts);
    Graph::Var root = g.scale(main.elbo, plan.positive_coefficient);
    CuboContext ctx;
    for (const Graph::Var neg :
         negative_type_vars(g, bind, batch, cfg, noise, ctx, experts, plan.types, plan.shifts))
        root = g.sub(root, neg);
    if (grads) g.backward(root);
    return g.scalar(root);
}

Matrix shared_posterior_sample(const BatchView& batch, const ModelParams& params, const ObjectiveConfig& cfg,
                               std::uint64_t noise_seed) {
    batch.validate();
    cfg.validate();
    const std::size_t C = component_count(cfg.posterior, batch.present().size());
    const NoiseBundle noise =
        draw_noise(noise_seed, batch.rows(), params.latent_dim, C, cfg.cubo_k, true, false);
    Graph g;
    Binder bind(g, params, nullptr, GradStage::none);
    MainVars main = build_main(g, bind, batch, cfg, noise, false, encode_experts(g, bind, batch));
    return g.value(main.z);
}

ObjectiveBreakdown total_objective(const BatchView& batch, const ModelParams& params, const ObjectiveConfig& cfg,
                                   std::uint64_t noise_seed, GradientSet* grads, GradStage stage) {
    batch.validate();
    cfg.validate();
    const std::vector<Modality> present = batch.present();
    const std::size_t C = component_count(cfg.posterior, present.size());

    const bool want_intra = cfg.lambda1 != 0.0 || stage == GradStage::aux_only;
    const bool want_inter = cfg.lambda2 != 0.0 && present.size() >= 2 && batch.rows() >= 2 &&
                            stage != GradStage::aux_only;
    const InterPlan plan = want_inter ? plan_inter(batch, cfg) : InterPlan{};

    const NoiseBundle noise = draw_noise(noise_seed, batch.rows(), params.latent_dim, C, cfg.cubo_k, true,
                                         want_inter && !plan.types.empty());

    ObjectiveBreakdown out;
    out.beta = cfg.beta;

    Graph g;
    Binder bind(g, params, grads, stage);
    const std::vector<GaussianVars> experts = encode_experts(g, bind, batch);
    MainVars main = build_main(g, bind, batch, cfg, noise, want_intra, experts);

    out.elbo = g.scalar(main.elbo);
    out.kl = g.scalar(main.kl);
    for (Modality m : present) out.recon[static_cast<std::size_t>(m)] = g.scalar(main.recon[static_cast<std::size_t>(m)]);
    if (want_intra) out.intra = g.scalar(main.intra);

    std::vector<Graph::Var> negative_vars;
    if (want_inter) {
        CuboContext ctx;
        negative_vars = negative_type_vars(g, bind, batch, cfg, noise, ctx, experts, plan.types, plan.shifts);
        for (const Graph::Var neg : negative_vars) {
            const double v = g.scalar(neg);
            out.inter_negative_types.push_back(v);
            out.inter_negative += v;
        }
        out.inter_positive = plan.positive_coefficient * out.elbo;
        out.inter = out.inter_positive - out.inter_negative;
    }

    if (grads) {
        if (stage == GradStage::aux_only) {
            g.backward(main.intra);
        } else {
            Graph::Var root = g.scale(main.elbo, 1.0 + cfg.lambda2 * plan.positive_coefficient);
            if (want_intra) root = g.add(root, g.scale(main.intra, cfg.lambda1));
            for (const Graph::Var neg : negative_vars) root = g.sub(root, g.scale(neg, cfg.lambda2));
            g.backward(root);
        }
    }

    out.total = out.elbo + cfg.lambda1 * out.intra + cfg.lambda2 * out.inter;
    return out;
}

} // namespace bravl
