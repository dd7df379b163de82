#include "bravl/svm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace bravl {

void SvmConfig::validate() const {
    if (gamma <= 0) throw std::invalid_argument("svm: gamma must be positive");
    if (c <= 0) throw std::invalid_argument("svm: C must be positive");
    if (tolerance <= 0) throw std::invalid_argument("svm: tolerance must be positive");
}

namespace {

double rbf(const double* a, const double* b, std::size_t d, double gamma) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return std::exp(-gamma * s);
}

// Binary SMO on a cached kernel. Selection is the maximal violating pair:
// i maximizes y_i - f_i over I_up, j minimizes it over I_low; converged when
// the gap drops below tolerance.
struct BinaryResult {
    std::vector<double> alpha; // nonnegative duals
    double bias = 0.0;
};

BinaryResult smo_binary(const Matrix& kernel, const std::vector<double>& y, const SvmConfig& cfg) {
    const std::size_t n = y.size();
    BinaryResult out;
    out.alpha.assign(n, 0.0);
    std::vector<double> f(n, 0.0); // f_i = sum_j alpha_j y_j K_ij

    auto in_up = [&](std::size_t t) {
        return (y[t] > 0 && out.alpha[t] < cfg.c) || (y[t] < 0 && out.alpha[t] > 0);
    };
    auto in_low = [&](std::size_t t) {
        return (y[t] < 0 && out.alpha[t] < cfg.c) || (y[t] > 0 && out.alpha[t] > 0);
    };

    for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
        std::size_t i = n, j = n;
        double up = -1e300, low = 1e300;
        for (std::size_t t = 0; t < n; ++t) {
            const double v = y[t] - f[t];
            if (in_up(t) && v > up) {
                up = v;
                i = t;
            }
            if (in_low(t) && v < low) {
                low = v;
                j = t;
            }
        }
        if (i == n || j == n || up - low < cfg.tolerance) break;

        const double ei = f[i] - y[i];
        const double ej = f[j] - y[j];
        double eta = kernel.at(i, i) + kernel.at(j, j) - 2.0 * kernel.at(i, j);
        if (eta <= 0) eta = 1e-12;

        double lo, hi;
        if (y[i] != y[j]) {
            lo = std::max(0.0, out.alpha[j] - out.alpha[i]);
            hi = std::min(cfg.c, cfg.c + out.alpha[j] - out.alpha[i]);
        } else {
            lo = std::max(0.0, out.alpha[i] + out.alpha[j] - cfg.c);
            hi = std::min(cfg.c, out.alpha[i] + out.alpha[j]);
        }
        double aj = out.alpha[j] + y[j] * (ei - ej) / eta;
        aj = std::clamp(aj, lo, hi);
        const double dj = aj - out.alpha[j];
        if (std::abs(dj) < 1e-12) break;
        const double ai = out.alpha[i] + y[i] * y[j] * (out.alpha[j] - aj);
        const double di = ai - out.alpha[i];
        out.alpha[i] = ai;
        out.alpha[j] = aj;
        for (std::size_t t = 0; t < n; ++t)
            f[t] += di * y[i] * kernel.at(i, t) + dj * y[j] * kernel.at(j, t);
    }

    // bias from the free support vectors, midpoint of the bounds otherwise
    double acc = 0.0;
    std::size_t free_count = 0;
    for (std::size_t t = 0; t < n; ++t) {
        if (out.alpha[t] > 1e-9 && out.alpha[t] < cfg.c - 1e-9) {
            acc += y[t] - f[t];
            ++free_count;
        }
    }
    if (free_count > 0) {
        out.bias = acc / static_cast<double>(free_count);
    } else {
        double up = -1e300, low = 1e300;
        for (std::size_t t = 0; t < n; ++t) {
            const double v = y[t] - f[t];
            if (in_up(t)) up = std::max(up, v);
            if (in_low(t)) low = std::min(low, v);
        }
        out.bias = (up + low) / 2.0;
    }
    return out;
}

} // namespace

SvmModel svm_fit(const Matrix& latents, const LabelVector& labels, const SvmConfig& cfg) {
    cfg.validate();
    if (latents.rows != labels.size()) throw std::invalid_argument("svm_fit: labels must align with rows");
    if (latents.rows == 0) throw std::invalid_argument("svm_fit: empty training set");

    std::set<std::uint32_t> class_set(labels.entries.begin(), labels.entries.end());
    if (class_set.size() < 2) throw std::invalid_argument("svm_fit: needs at least two classes");

    SvmModel model;
    model.training = latents;
    model.classes.assign(class_set.begin(), class_set.end());
    model.config = cfg;

    const std::size_t n = latents.rows;
    Matrix kernel(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double k = rbf(latents.row_ptr(i), latents.row_ptr(j), latents.cols, cfg.gamma);
            kernel.at(i, j) = k;
            kernel.at(j, i) = k;
        }

    model.coefficients = Matrix(model.classes.size(), n);
    model.bias.assign(model.classes.size(), 0.0);
    std::vector<double> y(n);
    for (std::size_t c = 0; c < model.classes.size(); ++c) {
        for (std::size_t i = 0; i < n; ++i) y[i] = labels.entries[i] == model.classes[c] ? 1.0 : -1.0;
        const BinaryResult bin = smo_binary(kernel, y, cfg);
        for (std::size_t i = 0; i < n; ++i) model.coefficients.at(c, i) = bin.alpha[i] * y[i];
        model.bias[c] = bin.bias;
    }
    return model;
}

std::vector<double> svm_decision_values(const SvmModel& model, const double* x, std::size_t dim) {
    if (dim != model.training.cols) throw std::invalid_argument("svm: latent dimension mismatch");
    const std::size_t n = model.training.rows;
    std::vector<double> k(n);
    for (std::size_t i = 0; i < n; ++i) k[i] = rbf(model.training.row_ptr(i), x, dim, model.config.gamma);
    std::vector<double> values(model.classes.size());
    for (std::size_t c = 0; c < model.classes.size(); ++c) {
        double v = model.bias[c];
        for (std::size_t i = 0; i < n; ++i) {
            const double coef = model.coefficients.at(c, i);
            if (coef != 0.0) v += coef * k[i];
        }
        values[c] = v;
    }
    return values;
}

std::vector<std::uint32_t> svm_predict_topk(const SvmModel& model, const double* x, std::size_t dim,
                                            std::size_t k) {
    if (k > model.classes.size()) throw std::invalid_argument("svm_predict_topk: k exceeds class count");
    const std::vector<double> values = svm_decision_values(model, x, dim);
    std::vector<std::size_t> order(model.classes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (values[a] != values[b]) return values[a] > values[b];
        return model.classes[a] < model.classes[b];
    });
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(model.classes[order[i]]);
    return out;
}

} // namespace bravl
