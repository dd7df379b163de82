#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bravl/gaussian.hpp"
#include "bravl/objectives.hpp"
#include "bravl/rng.hpp"
#include "fd_check.hpp"
#include "linear_gaussian.hpp"

using namespace bravl;
using bravl::testing::fd_max_rel_error;
using bravl::testing::make_linear_gaussian;

namespace {

NetDims tiny_dims(std::size_t latent = 2) {
    NetDims d;
    d.feature[Modality::brain] = 4;
    d.feature[Modality::visual] = 3;
    d.feature[Modality::textual] = 2;
    d.hidden[Modality::brain] = 3;
    d.hidden[Modality::visual] = 3;
    d.hidden[Modality::textual] = 3;
    d.latent = latent;
    return d;
}

BatchView tiny_batch(const NetDims& dims, std::size_t rows, std::uint64_t seed,
                     std::vector<Modality> mods = {Modality::brain, Modality::visual, Modality::textual}) {
    Rng rng(seed);
    BatchView batch;
    for (Modality m : mods) batch.set(m, rng.normal_matrix(rows, dims.feature[m]));
    return batch;
}

ObjectiveConfig tiny_cfg() {
    ObjectiveConfig cfg;
    cfg.lambda1 = 0.01;
    cfg.lambda2 = 0.01;
    cfg.cubo_k = 3;
    cfg.beta = 0.7;
    return cfg;
}

} // namespace

TEST_CASE("recon_loglik hand values") {
    Matrix x(1, 1, {0.4});
    CHECK(recon_loglik(x, x) == doctest::Approx(-0.9189385332).epsilon(1e-9));

    Matrix a(1, 2, {1.0, 2.0});
    Matrix b(1, 2, {0.0, 1.0});
    CHECK(recon_loglik(a, b) == doctest::Approx(-1.0 - std::log(2 * std::numbers::pi)).epsilon(1e-9));

    // batch mean
    Matrix c(2, 2, {1, 2, 3, 4});
    Matrix d(2, 2, {1, 2, 3, 3});
    CHECK(recon_loglik(c, d) == doctest::Approx(-0.25 - std::log(2 * std::numbers::pi)).epsilon(1e-9));

    // random case against the diagonal-Gaussian density with unit variance
    Rng rng(1);
    Matrix x3 = rng.normal_matrix(1, 3);
    Matrix m3 = rng.normal_matrix(1, 3);
    DiagGaussian unit{m3, Matrix(1, 3)};
    CHECK(recon_loglik(x3, m3) == doctest::Approx(log_prob(unit, x3).at(0, 0)).epsilon(1e-12));
}

TEST_CASE("negative tuple type lists") {
    using M = Modality;
    const auto tri = negative_types({M::brain, M::visual, M::textual});
    REQUIRE(tri.size() == 6);
    CHECK(tri[0] == std::vector<M>{M::textual});
    CHECK(tri[1] == std::vector<M>{M::brain, M::visual});
    CHECK(tri[2] == std::vector<M>{M::visual, M::textual});
    CHECK(tri[3] == std::vector<M>{M::brain});
    CHECK(tri[4] == std::vector<M>{M::visual});
    CHECK(tri[5] == std::vector<M>{M::brain, M::textual});
    CHECK(negative_types({M::visual, M::textual}).size() == 2);
    CHECK(negative_types({M::visual}).empty());
}

TEST_CASE("total objective identities") {
    const NetDims dims = tiny_dims();
    const ModelParams params = init_params(dims, 5);
    const BatchView batch = tiny_batch(dims, 4, 6);

    SUBCASE("lambda zero reduces to the elbo") {
        ObjectiveConfig cfg = tiny_cfg();
        cfg.lambda1 = 0.0;
        cfg.lambda2 = 0.0;
        const ObjectiveBreakdown b = total_objective(batch, params, cfg, 77);
        const double e = elbo(batch, params, cfg, 77, nullptr, GradStage::none);
        CHECK(b.total == doctest::Approx(e).epsilon(1e-15));
        CHECK(b.inter == 0.0);
    }

    SUBCASE("weighted total recombines the shared-draw components") {
        ObjectiveConfig cfg = tiny_cfg();
        cfg.lambda1 = 0.001;
        cfg.lambda2 = 0.001;
        const ObjectiveBreakdown b = total_objective(batch, params, cfg, 91);
        const double e = elbo(batch, params, cfg, 91, nullptr, GradStage::none);
        const double i = intra_mi(batch, params, cfg, 91, nullptr, GradStage::none);
        const double x = inter_mi(batch, params, cfg, 91, nullptr, GradStage::none);
        CHECK(b.total == doctest::Approx(e + 0.001 * i + 0.001 * x).epsilon(1e-12));
        CHECK(b.total ==
              doctest::Approx(b.elbo + cfg.lambda1 * b.intra + cfg.lambda2 * b.inter).epsilon(1e-12));
    }

    SUBCASE("breakdown recon/kl recombine into the elbo") {
        ObjectiveConfig cfg = tiny_cfg();
        const ObjectiveBreakdown b = total_objective(batch, params, cfg, 13);
        const double recon_sum = b.recon[0] + b.recon[1] + b.recon[2];
        CHECK(b.elbo == doctest::Approx(recon_sum - cfg.beta * b.kl).epsilon(1e-12));
    }
}

TEST_CASE("perfect-reconstruction limit: elbo is the zero-error likelihood") {
    // zero nets: posterior = prior (KL 0) and decoders emit 0; feed zero data
    // so reconstruction error vanishes
    const NetDims dims = tiny_dims();
    ModelParams params = init_params(dims, 99);
    for_each_tensor(params, ParamGroup::all, [](Matrix& m) { std::fill(m.data.begin(), m.data.end(), 0.0); });
    BatchView batch;
    for (Modality m : kAllModalities) batch.set(m, Matrix(4, dims.feature[m]));

    ObjectiveConfig cfg = tiny_cfg();
    cfg.posterior = PosteriorType::moe; // every component equals the prior
    const ObjectiveBreakdown b = total_objective(batch, params, cfg, 55);
    CHECK(b.kl == doctest::Approx(0.0));
    double expected = 0.0;
    for (Modality m : kAllModalities)
        expected += -0.5 * static_cast<double>(dims.feature[m]) * std::log(2 * std::numbers::pi);
    CHECK(b.elbo == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("zero MI weights leave the gradient equal to the elbo-only gradient") {
    const NetDims dims = tiny_dims();
    ModelParams params = init_params(dims, 41);
    bravl::testing::jitter_biases(params, 941);
    const BatchView batch = tiny_batch(dims, 3, 42);
    ObjectiveConfig cfg = tiny_cfg();
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;

    GradientSet total_grads = zeros_like(params);
    total_objective(batch, params, cfg, 7, &total_grads, GradStage::model_only);
    GradientSet elbo_grads = zeros_like(params);
    elbo(batch, params, cfg, 7, &elbo_grads, GradStage::model_only);

    double worst = 0.0;
    for_each_tensor_pair(total_grads, elbo_grads, ParamGroup::encoders_decoders,
                         [&](Matrix& a, Matrix& b) { worst = std::max(worst, max_abs_diff(a, b)); });
    CHECK(worst == 0.0);
}

TEST_CASE("stage-1 ascent on a frozen model improves the intra bound") {
    const NetDims dims = tiny_dims();
    ModelParams params = init_params(dims, 61);
    const BatchView batch = tiny_batch(dims, 16, 62);
    ObjectiveConfig cfg = tiny_cfg();

    const double before = intra_mi(batch, params, cfg, 71, nullptr, GradStage::none);
    GradientSet grads = zeros_like(params);
    AdamState opt = make_adam_state(params, ParamGroup::aux);
    for (int step = 0; step < 200; ++step) {
        zero_grads(grads);
        intra_mi(batch, params, cfg, 71, &grads, GradStage::aux_only);
        adam_step(params, grads, opt, ParamGroup::aux, 1e-2);
    }
    const double after = intra_mi(batch, params, cfg, 71, nullptr, GradStage::none);
    CHECK(after > before);
}

TEST_CASE("elbo is invariant to modality insertion order") {
    const NetDims dims = tiny_dims();
    const ModelParams params = init_params(dims, 7);
    Rng rng(8);
    const Matrix xb = rng.normal_matrix(3, 4);
    const Matrix xv = rng.normal_matrix(3, 3);
    const Matrix xt = rng.normal_matrix(3, 2);

    BatchView fwd;
    fwd.set(Modality::brain, xb);
    fwd.set(Modality::visual, xv);
    fwd.set(Modality::textual, xt);
    BatchView rev;
    rev.set(Modality::textual, xt);
    rev.set(Modality::brain, xb);
    rev.set(Modality::visual, xv);

    const ObjectiveConfig cfg = tiny_cfg();
    CHECK(elbo(fwd, params, cfg, 3, nullptr, GradStage::none) ==
          elbo(rev, params, cfg, 3, nullptr, GradStage::none));
}

TEST_CASE("unimodal batch: elbo reduces to the single-expert bound, inter is zero") {
    const NetDims dims = tiny_dims();
    const ModelParams params = init_params(dims, 9);
    const BatchView batch = tiny_batch(dims, 4, 10, {Modality::visual});

    ObjectiveConfig cfg = tiny_cfg();
    const double mopoe_val = elbo(batch, params, cfg, 4, nullptr, GradStage::none);
    cfg.posterior = PosteriorType::poe; // single modality: same single component
    const double poe_val = elbo(batch, params, cfg, 4, nullptr, GradStage::none);
    CHECK(mopoe_val == doctest::Approx(poe_val).epsilon(1e-15));
}

TEST_CASE("unimodal inter term is defined as zero") {
    const NetDims dims = tiny_dims();
    const ModelParams params = init_params(dims, 9);
    const BatchView batch = tiny_batch(dims, 4, 10, {Modality::visual});
    const ObjectiveConfig cfg = tiny_cfg();
    CHECK(inter_mi(batch, params, cfg, 4, nullptr, GradStage::none) == 0.0);
}

TEST_CASE("inter errors on a single-row batch") {
    const NetDims dims = tiny_dims();
    const ModelParams params = init_params(dims, 9);
    const BatchView batch = tiny_batch(dims, 1, 10);
    CHECK_THROWS(inter_mi(batch, params, tiny_cfg(), 4, nullptr, GradStage::none));
}

TEST_CASE("intra matches an independent recomputation on the shared sample") {
    const NetDims dims = tiny_dims();
    const ModelParams params = init_params(dims, 11);
    const BatchView batch = tiny_batch(dims, 5, 12);
    const ObjectiveConfig cfg = tiny_cfg();

    const Matrix z = shared_posterior_sample(batch, params, cfg, 21);
    double expected = 0.0;
    for (Modality m : batch.present()) {
        const Matrix xhat = decode(params.decoder(m), z);
        const DiagGaussian q = aux_posterior(params.aux_net(m), xhat);
        const Matrix lp = log_prob(q, z);
        double mean = 0.0;
        for (double v : lp.data) mean += v;
        expected += mean / static_cast<double>(lp.rows);
    }
    CHECK(intra_mi(batch, params, cfg, 21, nullptr, GradStage::none) ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("intra with unit auxiliary posteriors equals the standard-normal density of z") {
    const NetDims dims = tiny_dims(1);
    ModelParams params = init_params(dims, 13);
    // zero aux nets emit N(0, I) regardless of input
    for (auto& net : params.aux)
        for (Matrix& m : net.weights) std::fill(m.data.begin(), m.data.end(), 0.0);

    const BatchView batch = tiny_batch(dims, 4, 14);
    const ObjectiveConfig cfg = tiny_cfg();
    const Matrix z = shared_posterior_sample(batch, params, cfg, 33);
    double expected = 0.0;
    for (double v : z.data) expected += -0.5 * (v * v + std::log(2 * std::numbers::pi));
    expected = 3.0 * expected / static_cast<double>(z.rows); // one term per modality
    CHECK(intra_mi(batch, params, cfg, 33, nullptr, GradStage::none) ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("gradients match finite differences on tiny configurations") {
    const NetDims dims = tiny_dims();
    ModelParams params = init_params(dims, 15);
    bravl::testing::jitter_biases(params, 915);
    const BatchView batch = tiny_batch(dims, 3, 16);
    ObjectiveConfig cfg = tiny_cfg();

    GradientSet grads = zeros_like(params);

    SUBCASE("elbo") {
        zero_grads(grads);
        elbo(batch, params, cfg, 5, &grads, GradStage::all);
        const double worst = fd_max_rel_error(params, ParamGroup::encoders_decoders, grads, [&] {
            return elbo(batch, params, cfg, 5, nullptr, GradStage::none);
        });
        CHECK(worst < 1e-3);
    }
    SUBCASE("intra") {
        zero_grads(grads);
        intra_mi(batch, params, cfg, 6, &grads, GradStage::all);
        const double worst = fd_max_rel_error(params, ParamGroup::all, grads, [&] {
            return intra_mi(batch, params, cfg, 6, nullptr, GradStage::none);
        });
        CHECK(worst < 1e-3);
    }
    SUBCASE("cubo") {
        zero_grads(grads);
        cubo(batch, params, cfg, 7, &grads, GradStage::all);
        const double worst = fd_max_rel_error(params, ParamGroup::encoders_decoders, grads, [&] {
            return cubo(batch, params, cfg, 7, nullptr, GradStage::none).cubo;
        });
        CHECK(worst < 1e-3);
    }
    SUBCASE("inter") {
        zero_grads(grads);
        inter_mi(batch, params, cfg, 8, &grads, GradStage::all);
        const double worst = fd_max_rel_error(params, ParamGroup::encoders_decoders, grads, [&] {
            return inter_mi(batch, params, cfg, 8, nullptr, GradStage::none);
        });
        CHECK(worst < 1e-3);
    }
    SUBCASE("total") {
        zero_grads(grads);
        total_objective(batch, params, cfg, 9, &grads, GradStage::all);
        const double worst = fd_max_rel_error(params, ParamGroup::all, grads, [&] {
            return total_objective(batch, params, cfg, 9, nullptr, GradStage::none).total;
        });
        CHECK(worst < 1e-3);
    }
    SUBCASE("total on a bimodal batch") {
        const BatchView bimodal = tiny_batch(dims, 3, 17, {Modality::visual, Modality::textual});
        zero_grads(grads);
        total_objective(bimodal, params, cfg, 10, &grads, GradStage::all);
        const double worst = fd_max_rel_error(params, ParamGroup::all, grads, [&] {
            return total_objective(bimodal, params, cfg, 10, nullptr, GradStage::none).total;
        });
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("stage-restricted gradients leave the frozen group untouched") {
    const NetDims dims = tiny_dims();
    ModelParams params = init_params(dims, 18);
    const BatchView batch = tiny_batch(dims, 3, 19);
    const ObjectiveConfig cfg = tiny_cfg();
    GradientSet grads = zeros_like(params);

    total_objective(batch, params, cfg, 11, &grads, GradStage::aux_only);
    double model_mass = 0.0, aux_mass = 0.0;
    for_each_tensor(static_cast<const ModelParams&>(grads), ParamGroup::encoders_decoders,
                    [&](const Matrix& m) {
                        for (double v : m.data) model_mass += std::abs(v);
                    });
    for_each_tensor(static_cast<const ModelParams&>(grads), ParamGroup::aux, [&](const Matrix& m) {
        for (double v : m.data) aux_mass += std::abs(v);
    });
    CHECK(model_mass == 0.0);
    CHECK(aux_mass > 0.0);

    zero_grads(grads);
    total_objective(batch, params, cfg, 11, &grads, GradStage::model_only);
    model_mass = aux_mass = 0.0;
    for_each_tensor(static_cast<const ModelParams&>(grads), ParamGroup::encoders_decoders,
                    [&](const Matrix& m) {
                        for (double v : m.data) model_mass += std::abs(v);
                    });
    for_each_tensor(static_cast<const ModelParams&>(grads), ParamGroup::aux, [&](const Matrix& m) {
        for (double v : m.data) aux_mass += std::abs(v);
    });
    CHECK(model_mass > 0.0);
    CHECK(aux_mass == 0.0);
}

TEST_CASE("duplicate-row batch makes every negative tuple equal the positive") {
    const NetDims dims = tiny_dims();
    ModelParams params = init_params(dims, 20);
    bravl::testing::jitter_biases(params, 920);
    Rng rng(21);
    BatchView batch;
    for (Modality m : kAllModalities) {
        Matrix row = rng.normal_matrix(1, dims.feature[m]);
        Matrix two(2, row.cols);
        std::copy(row.data.begin(), row.data.end(), two.row_ptr(0));
        std::copy(row.data.begin(), row.data.end(), two.row_ptr(1));
        batch.set(m, two);
    }
    ObjectiveConfig cfg = tiny_cfg();
    const ObjectiveBreakdown b = total_objective(batch, params, cfg, 12);
    REQUIRE(b.inter_negative_types.size() == 6);
    for (double v : b.inter_negative_types)
        CHECK(v == doctest::Approx(b.inter_negative_types[0]).epsilon(1e-12));

    // gradients still match finite differences in this degenerate case
    ModelParams mutable_params = params;
    GradientSet grads = zeros_like(params);
    inter_mi(batch, mutable_params, cfg, 12, &grads, GradStage::all);
    const double worst = fd_max_rel_error(mutable_params, ParamGroup::encoders_decoders, grads, [&] {
        return inter_mi(batch, mutable_params, cfg, 12, nullptr, GradStage::none);
    });
    CHECK(worst < 1e-3);
}

TEST_CASE("trimodal inter evaluates six negative tuples, bimodal two") {
    const NetDims dims = tiny_dims();
    const ModelParams params = init_params(dims, 22);
    const ObjectiveConfig cfg = tiny_cfg();

    const BatchView tri = tiny_batch(dims, 4, 23);
    CHECK(total_objective(tri, params, cfg, 13).inter_negative_types.size() == 6);

    const BatchView bi = tiny_batch(dims, 4, 24, {Modality::visual, Modality::textual});
    CHECK(total_objective(bi, params, cfg, 14).inter_negative_types.size() == 2);
}

TEST_CASE("linear-Gaussian model with the exact posterior collapses the sandwich") {
    const auto toy = make_linear_gaussian(31, 2, 2, 3, 5);
    const CuboResult r = cubo(toy.batch, toy.params, toy.cfg, 99, nullptr, GradStage::none);
    CHECK(r.cubo == doctest::Approx(toy.log_marginal).epsilon(1e-9));
    CHECK(r.iw_elbo == doctest::Approx(toy.log_marginal).epsilon(1e-9));

    const auto toy3 = make_linear_gaussian(32, 3, 3, 2, 4);
    const CuboResult r3 = cubo(toy3.batch, toy3.params, toy3.cfg, 100, nullptr, GradStage::none);
    CHECK(r3.cubo == doctest::Approx(toy3.log_marginal).epsilon(1e-9));
    CHECK(r3.iw_elbo == doctest::Approx(toy3.log_marginal).epsilon(1e-9));
}

TEST_CASE("perturbed posterior restores a strict sandwich") {
    const auto toy = make_linear_gaussian(33, 2, 2, 4, 30, 0.45);
    int holds = 0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
        const CuboResult r =
            cubo(toy.batch, toy.params, toy.cfg, 1000 + static_cast<std::uint64_t>(t), nullptr, GradStage::none);
        if (r.iw_elbo < toy.log_marginal && toy.log_marginal < r.cubo) ++holds;
    }
    CHECK(holds >= trials * 99 / 100);
}

TEST_CASE("negatives_per_type shifts are capped by the batch") {
    const NetDims dims = tiny_dims();
    const ModelParams params = init_params(dims, 25);
    const BatchView batch = tiny_batch(dims, 3, 26);
    ObjectiveConfig cfg = tiny_cfg();
    cfg.negatives_per_type = 10; // only 2 distinct shifts exist for 3 rows
    const ObjectiveBreakdown b = total_objective(batch, params, cfg, 15);
    CHECK(b.inter_negative_types.size() == 6);
    CHECK(std::isfinite(b.inter));
}

TEST_CASE("per-subset reconstruction switch changes only the recon path") {
    const NetDims dims = tiny_dims();
    ModelParams params = init_params(dims, 27);
    bravl::testing::jitter_biases(params, 929);
    const BatchView batch = tiny_batch(dims, 4, 28);
    ObjectiveConfig cfg = tiny_cfg();
    cfg.lambda1 = cfg.lambda2 = 0.0;

    const double sampled = elbo(batch, params, cfg, 16, nullptr, GradStage::none);
    cfg.per_subset_recon = true;
    const double averaged = elbo(batch, params, cfg, 16, nullptr, GradStage::none);
    CHECK(sampled != averaged);
    CHECK(std::isfinite(averaged));

    ModelParams mutable_params = params;
    GradientSet grads = zeros_like(params);
    elbo(batch, mutable_params, cfg, 16, &grads, GradStage::all);
    const double worst = fd_max_rel_error(mutable_params, ParamGroup::encoders_decoders, grads, [&] {
        return elbo(batch, mutable_params, cfg, 16, nullptr, GradStage::none);
    });
    CHECK(worst < 1e-3);
}

TEST_CASE("posterior families evaluate under every objective") {
    const NetDims dims = tiny_dims();
    const ModelParams params = init_params(dims, 29);
    const BatchView batch = tiny_batch(dims, 3, 30);
    for (PosteriorType type : {PosteriorType::poe, PosteriorType::moe, PosteriorType::mopoe}) {
        ObjectiveConfig cfg = tiny_cfg();
        cfg.posterior = type;
        const ObjectiveBreakdown b = total_objective(batch, params, cfg, 17);
        CHECK(std::isfinite(b.total));
        CHECK(std::isfinite(b.inter));
    }
}
