#include "bravl/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace bravl {

Matrix embed(const ModelParams& params, const BatchView& features, const std::vector<Modality>& subset) {
    if (subset.empty()) throw std::invalid_argument("embed: empty subset");
    std::vector<DiagGaussian> experts;
    for (Modality m : subset) {
        if (!features.has(m)) throw std::invalid_argument("embed: missing modality features");
        experts.push_back(encode(params.encoder(m), features.get(m)));
    }
    if (experts.size() == 1) return experts.front().mean;
    std::vector<const DiagGaussian*> ptrs;
    for (const DiagGaussian& e : experts) ptrs.push_back(&e);
    return poe_combine(ptrs).mean;
}

LatentTrainingSet classifier_latents(const ModelParams& params, const Matrix& visual, const Matrix& textual,
                                     const LabelVector& labels, const std::vector<Modality>& subset,
                                     bool strict_subset) {
    BatchView features;
    features.set(Modality::visual, visual);
    features.set(Modality::textual, textual);

    std::vector<std::vector<Modality>> groups;
    if (subset.size() == 2 && !strict_subset) {
        groups = {{Modality::visual}, {Modality::textual}, {Modality::visual, Modality::textual}};
    } else {
        groups = {subset};
    }

    LatentTrainingSet out;
    out.labels.n_classes = labels.n_classes;
    std::vector<Matrix> blocks;
    for (const auto& g : groups) blocks.push_back(embed(params, features, g));
    std::vector<const Matrix*> ptrs;
    for (const Matrix& b : blocks) ptrs.push_back(&b);
    out.latents = vstack(ptrs);
    for (std::size_t g = 0; g < groups.size(); ++g)
        out.labels.entries.insert(out.labels.entries.end(), labels.entries.begin(), labels.entries.end());
    return out;
}

double DecodeReport::top_k(std::size_t k) const {
    for (std::size_t i = 0; i < k_list.size(); ++i)
        if (k_list[i] == k) return topk_accuracy[i];
    throw std::invalid_argument("report does not carry top-" + std::to_string(k));
}

DecodeReport evaluate_decoding(const ModelParams& params, const SvmModel& svm, const Matrix& test_brain,
                               const LabelVector& labels, const std::vector<std::size_t>& k_list,
                               const DecodeReport* baseline) {
    if (test_brain.rows != labels.size())
        throw std::invalid_argument("evaluate_decoding: labels must align with rows");
    for (std::uint32_t y : labels.entries)
        if (std::find(svm.classes.begin(), svm.classes.end(), y) == svm.classes.end())
            throw std::invalid_argument("evaluate_decoding: test label outside the classifier's class list");

    BatchView features;
    features.set(Modality::brain, test_brain);
    const Matrix latents = embed(params, features, {Modality::brain});

    DecodeReport report;
    report.modality_subset = "b";
    report.n_test = test_brain.rows;
    report.k_list = k_list;
    report.topk_accuracy.assign(k_list.size(), 0.0);
    report.classes.assign(svm.classes.begin(), svm.classes.end());

    std::map<std::uint32_t, std::size_t> class_pos;
    for (std::size_t i = 0; i < report.classes.size(); ++i) class_pos[report.classes[i]] = i;

    const std::size_t n_classes = report.classes.size();
    std::vector<std::size_t> class_total(n_classes, 0), class_hit(n_classes, 0);
    report.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));

    // ranks beyond the class count saturate
    const std::size_t max_k =
        std::min(*std::max_element(k_list.begin(), k_list.end()), svm.classes.size());
    for (std::size_t r = 0; r < latents.rows; ++r) {
        const std::vector<std::uint32_t> ranked =
            svm_predict_topk(svm, latents.row_ptr(r), latents.cols, max_k);
        const std::uint32_t truth = labels.entries[r];
        const std::size_t tpos = class_pos.at(truth);
        class_total[tpos] += 1;
        report.confusion[tpos][class_pos.at(ranked[0])] += 1;
        if (ranked[0] == truth) class_hit[tpos] += 1;
        for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
            const auto end = ranked.begin() + static_cast<std::ptrdiff_t>(std::min(k_list[ki], ranked.size()));
            if (std::find(ranked.begin(), end, truth) != end) report.topk_accuracy[ki] += 1.0;
        }
    }
    for (double& a : report.topk_accuracy) a /= static_cast<double>(latents.rows);
    report.per_class_accuracy.assign(n_classes, 0.0);
    for (std::size_t c = 0; c < n_classes; ++c)
        if (class_total[c] > 0)
            report.per_class_accuracy[c] =
                static_cast<double>(class_hit[c]) / static_cast<double>(class_total[c]);

    if (baseline) {
        if (baseline->classes != report.classes)
            throw std::invalid_argument("evaluate_decoding: baseline report covers different classes");
        report.per_class_gain.resize(n_classes);
        for (std::size_t c = 0; c < n_classes; ++c)
            report.per_class_gain[c] = report.per_class_accuracy[c] - baseline->per_class_accuracy[c];
    }
    return report;
}

Matrix cross_modal_generate(const ModelParams& params, const Matrix& visual, const Matrix& textual) {
    BatchView features;
    features.set(Modality::visual, visual);
    features.set(Modality::textual, textual);
    const Matrix z = embed(params, features, {Modality::visual, Modality::textual});
    return decode(params.decoder(Modality::brain), z);
}

double pearson_match(const Matrix& real, const Matrix& synthetic) {
    if (!real.same_shape(synthetic)) throw std::invalid_argument("pearson_match: shape mismatch");
    if (real.cols == 0 || real.rows < 2) throw std::invalid_argument("pearson_match: needs >= 2 rows");
    std::vector<double> a(real.rows), b(real.rows);
    double acc = 0.0;
    for (std::size_t c = 0; c < real.cols; ++c) {
        for (std::size_t r = 0; r < real.rows; ++r) {
            a[r] = real.at(r, c);
            b[r] = synthetic.at(r, c);
        }
        acc += pearson(a.data(), b.data(), real.rows, 0.0);
    }
    return acc / static_cast<double>(real.cols);
}

std::vector<double> voxel_contribution(const PcaModel& pca, const MlpParams& brain_encoder) {
    const std::size_t k = pca.output_dim();
    if (brain_encoder.input_dim() != k)
        throw std::invalid_argument("voxel_contribution: PCA output and encoder input dimensions differ");
    const Matrix& w_fc = brain_encoder.weights.front(); // k x hidden
    std::vector<double> column_sum(k, 0.0);
    for (std::size_t r = 0; r < w_fc.rows; ++r)
        for (std::size_t c = 0; c < w_fc.cols; ++c) column_sum[r] += w_fc.at(r, c);
    std::vector<double> weights(pca.input_dim(), 0.0);
    for (std::size_t v = 0; v < pca.input_dim(); ++v) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += pca.components.at(v, j) * column_sum[j];
        weights[v] = std::abs(acc);
    }
    return weights;
}

Matrix cosine_similarity_matrix(const Matrix& embeddings) {
    const std::size_t n = embeddings.rows;
    std::vector<double> norms(n);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < embeddings.cols; ++c) s += embeddings.at(r, c) * embeddings.at(r, c);
        norms[r] = std::sqrt(s);
        if (norms[r] == 0.0) throw std::invalid_argument("cosine_similarity_matrix: zero-norm row");
    }
    Matrix sim(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        sim.at(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < embeddings.cols; ++c) dot += embeddings.at(i, c) * embeddings.at(j, c);
            const double v = dot / (norms[i] * norms[j]);
            sim.at(i, j) = v;
            sim.at(j, i) = v;
        }
    }
    return sim;
}

CosineSummary offdiagonal_summary(const Matrix& similarity) {
    CosineSummary out;
    const std::size_t n = similarity.rows;
    if (n < 2) return out;
    double sum = 0.0, count = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) {
                sum += similarity.at(i, j);
                count += 1.0;
            }
    out.mean = sum / count;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) {
                const double d = similarity.at(i, j) - out.mean;
                var += d * d;
            }
    out.stddev = std::sqrt(var / count);
    return out;
}

void write_decode_report(const DecodeReport& report, const std::filesystem::path& overall_csv,
                         const std::filesystem::path& per_class_csv) {
    {
        std::ofstream os(overall_csv, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write report: " + overall_csv.string());
        os.precision(10);
        os << "metric,value\n";
        os << "modality_subset," << report.modality_subset << "\n";
        os << "n_test," << report.n_test << "\n";
        os << "n_classes," << report.classes.size() << "\n";
        for (std::size_t i = 0; i < report.k_list.size(); ++i)
            os << "top" << report.k_list[i] << "," << report.topk_accuracy[i] << "\n";
        for (std::size_t i = 0; i < report.k_list.size(); ++i)
            os << "chance_top" << report.k_list[i] << ","
               << std::min(1.0, static_cast<double>(report.k_list[i]) /
                                    static_cast<double>(report.classes.size()))
               << "\n";
    }
    {
        std::ofstream os(per_class_csv, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write report: " + per_class_csv.string());
        os.precision(10);
        os << "class,accuracy" << (report.per_class_gain.empty() ? "" : ",gain") << "\n";
        for (std::size_t c = 0; c < report.classes.size(); ++c) {
            os << report.classes[c] << "," << report.per_class_accuracy[c];
            if (!report.per_class_gain.empty()) os << "," << report.per_class_gain[c];
            os << "\n";
        }
    }
}

DecodeReport read_decode_report(const std::filesystem::path& overall_csv,
                                const std::filesystem::path& per_class_csv) {
    DecodeReport report;
    std::ifstream os(overall_csv);
    if (!os) throw std::runtime_error("cannot read report: " + overall_csv.string());
    std::string line;
    std::getline(os, line); // header
    while (std::getline(os, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        const std::string key = line.substr(0, comma);
        const std::string value = line.substr(comma + 1);
        if (key == "modality_subset") report.modality_subset = value;
        else if (key == "n_test") report.n_test = std::stoul(value);
        else if (key.rfind("top", 0) == 0) {
            report.k_list.push_back(std::stoul(key.substr(3)));
            report.topk_accuracy.push_back(std::stod(value));
        }
    }
    std::ifstream pc(per_class_csv);
    if (!pc) throw std::runtime_error("cannot read report: " + per_class_csv.string());
    std::getline(pc, line); // header
    const bool has_gain = line.find("gain") != std::string::npos;
    while (std::getline(pc, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string tok;
        std::getline(is, tok, ',');
        report.classes.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
        std::getline(is, tok, ',');
        report.per_class_accuracy.push_back(std::stod(tok));
        if (has_gain && std::getline(is, tok, ',')) report.per_class_gain.push_back(std::stod(tok));
    }
    return report;
}

} // namespace bravl
