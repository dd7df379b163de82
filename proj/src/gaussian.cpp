#include "bravl/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace bravl {

namespace {
constexpr double kLog2Pi = 1.8378770664093453; // ln(2*pi)
}

double clamp_logvar(double lv) { return std::clamp(lv, kLogVarMin, kLogVarMax); }

DiagGaussian DiagGaussian::standard(std::size_t batch, std::size_t dim) {
    return DiagGaussian{Matrix(batch, dim), Matrix(batch, dim)};
}

PosteriorType posterior_type_from_name(const std::string& name) {
    if (name == "poe") return PosteriorType::poe;
    if (name == "moe") return PosteriorType::moe;
    if (name == "mopoe") return PosteriorType::mopoe;
    throw std::invalid_argument("unknown posterior type: " + name);
}

const char* posterior_type_name(PosteriorType t) {
    switch (t) {
    case PosteriorType::poe: return "poe";
    case PosteriorType::moe: return "moe";
    case PosteriorType::mopoe: return "mopoe";
    }
    return "?";
}

std::vector<std::vector<Modality>> enumerate_subsets(const std::vector<Modality>& present) {
    static const std::vector<std::vector<Modality>> canonical = {
        {Modality::brain},
        {Modality::visual},
        {Modality::textual},
        {Modality::brain, Modality::visual},
        {Modality::brain, Modality::textual},
        {Modality::visual, Modality::textual},
        {Modality::brain, Modality::visual, Modality::textual},
    };
    std::vector<std::vector<Modality>> out;
    for (const auto& subset : canonical) {
        bool ok = true;
        for (Modality m : subset)
            if (std::find(present.begin(), present.end(), m) == present.end()) ok = false;
        if (ok) out.push_back(subset);
    }
    return out;
}

DiagGaussian poe_combine(const std::vector<const DiagGaussian*>& experts) {
    if (experts.empty()) throw std::invalid_argument("poe_combine: empty expert list");
    const std::size_t n = experts.front()->batch();
    const std::size_t d = experts.front()->dim();
    for (const DiagGaussian* e : experts)
        if (e->batch() != n || e->dim() != d) throw std::invalid_argument("poe_combine: dimension mismatch");

    DiagGaussian out{Matrix(n, d), Matrix(n, d)};
    for (std::size_t i = 0; i < n * d; ++i) {
        double prec = 0.0, pm = 0.0;
        for (const DiagGaussian* e : experts) {
            const double p = std::exp(-e->logvar.data[i]);
            prec += p;
            pm += p * e->mean.data[i];
        }
        out.mean.data[i] = pm / prec;
        out.logvar.data[i] = clamp_logvar(-std::log(prec));
    }
    return out;
}

JointPosterior mopoe_build(const std::vector<Modality>& present, const std::vector<const DiagGaussian*>& experts) {
    if (present.empty() || present.size() != experts.size())
        throw std::invalid_argument("mopoe_build: experts must match present modalities");
    JointPosterior joint;
    for (const auto& subset : enumerate_subsets(present)) {
        std::vector<const DiagGaussian*> members;
        for (Modality m : subset) {
            const auto it = std::find(present.begin(), present.end(), m);
            members.push_back(experts[static_cast<std::size_t>(it - present.begin())]);
        }
        joint.components.push_back({subset, poe_combine(members)});
    }
    return joint;
}

JointPosterior build_posterior(PosteriorType type, const std::vector<Modality>& present,
                               const std::vector<const DiagGaussian*>& experts) {
    if (type == PosteriorType::mopoe) return mopoe_build(present, experts);
    if (present.empty() || present.size() != experts.size())
        throw std::invalid_argument("build_posterior: experts must match present modalities");
    JointPosterior joint;
    if (type == PosteriorType::poe) {
        joint.components.push_back({present, poe_combine(experts)});
    } else {
        for (std::size_t i = 0; i < present.size(); ++i)
            joint.components.push_back({{present[i]}, poe_combine({experts[i]})});
    }
    return joint;
}

double kl_standard_normal(const DiagGaussian& g) {
    double total = 0.0;
    for (std::size_t i = 0; i < g.mean.size(); ++i) {
        const double mu = g.mean.data[i];
        const double lv = g.logvar.data[i];
        total += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    }
    return total / static_cast<double>(g.batch());
}

double kl_mixture_upper(const JointPosterior& j) {
    if (j.components.empty()) throw std::invalid_argument("kl_mixture_upper: empty mixture");
    double total = 0.0;
    for (const SubsetPosterior& c : j.components) total += kl_standard_normal(c.gaussian);
    return total / static_cast<double>(j.components.size());
}

Matrix reparam_sample(const DiagGaussian& g, const Matrix& noise) {
    if (!g.mean.same_shape(noise)) throw std::invalid_argument("reparam_sample: noise shape mismatch");
    Matrix z(g.batch(), g.dim());
    for (std::size_t i = 0; i < z.size(); ++i)
        z.data[i] = g.mean.data[i] + std::exp(0.5 * g.logvar.data[i]) * noise.data[i];
    return z;
}

Matrix log_prob(const DiagGaussian& g, const Matrix& z) {
    if (!g.mean.same_shape(z)) throw std::invalid_argument("log_prob: shape mismatch");
    Matrix out(z.rows, 1);
    for (std::size_t r = 0; r < z.rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < z.cols; ++c) {
            const double lv = g.logvar.at(r, c);
            const double d = z.at(r, c) - g.mean.at(r, c);
            acc += -0.5 * (d * d * std::exp(-lv) + lv + kLog2Pi);
        }
        out.at(r, 0) = acc;
    }
    return out;
}

Matrix mixture_log_prob(const JointPosterior& j, const Matrix& z) {
    if (j.components.empty()) throw std::invalid_argument("mixture_log_prob: empty mixture");
    std::vector<Matrix> comp_lp;
    comp_lp.reserve(j.components.size());
    for (const SubsetPosterior& c : j.components) comp_lp.push_back(log_prob(c.gaussian, z));

    Matrix out(z.rows, 1);
    const double log_c = std::log(static_cast<double>(j.components.size()));
    for (std::size_t r = 0; r < z.rows; ++r) {
        double mx = comp_lp[0].at(r, 0);
        for (const Matrix& lp : comp_lp) mx = std::max(mx, lp.at(r, 0));
        double acc = 0.0;
        for (const Matrix& lp : comp_lp) acc += std::exp(lp.at(r, 0) - mx);
        out.at(r, 0) = mx + std::log(acc) - log_c;
    }
    return out;
}

} // namespace bravl
