#include "bravl/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bravl/io.hpp"

namespace bravl {

void TrainConfig::validate() const {
    if (latent_dim == 0 || hidden_brain == 0 || hidden_visual == 0 || hidden_textual == 0)
        throw std::invalid_argument("train config: widths must be positive");
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
    if (lr <= 0) throw std::invalid_argument("train config: lr must be positive");
    if (!(anneal_rate > 0.0 && anneal_rate <= 1.0))
        throw std::invalid_argument("train config: anneal_rate must lie in (0,1]");
    if (lambda1 < 0 || lambda2 < 0) throw std::invalid_argument("train config: lambda weights must be nonnegative");
    if (cubo_k < 2) throw std::invalid_argument("train config: cubo_k must be at least 2");
    if (negatives_per_type < 1) throw std::invalid_argument("train config: negatives_per_type must be positive");
}

double TrainConfig::beta_at(std::size_t epoch) const {
    return std::min(1.0, anneal_rate * static_cast<double>(epoch + 1));
}

ObjectiveConfig TrainConfig::objective_config(std::size_t epoch) const {
    ObjectiveConfig cfg;
    cfg.lambda1 = intra_off ? 0.0 : lambda1;
    cfg.lambda2 = inter_off ? 0.0 : lambda2;
    cfg.cubo_k = cubo_k;
    cfg.beta = beta_at(epoch);
    cfg.negatives_per_type = negatives_per_type;
    cfg.posterior = posterior_type;
    return cfg;
}

std::string train_config_text(const TrainConfig& cfg) {
    std::ostringstream os;
    os << "latent_dim=" << cfg.latent_dim << "\n";
    os << "hidden_brain=" << cfg.hidden_brain << "\n";
    os << "hidden_visual=" << cfg.hidden_visual << "\n";
    os << "hidden_textual=" << cfg.hidden_textual << "\n";
    os << "lr=" << cfg.lr << "\n";
    os << "batch_size=" << cfg.batch_size << "\n";
    os << "epochs=" << cfg.epochs << "\n";
    os << "lambda1=" << cfg.lambda1 << "\n";
    os << "lambda2=" << cfg.lambda2 << "\n";
    os << "cubo_k=" << cfg.cubo_k << "\n";
    os << "anneal_rate=" << cfg.anneal_rate << "\n";
    os << "posterior_type=" << posterior_type_name(cfg.posterior_type) << "\n";
    os << "negatives_per_type=" << cfg.negatives_per_type << "\n";
    os << "seed=" << cfg.seed << "\n";
    os << "intra_off=" << (cfg.intra_off ? 1 : 0) << "\n";
    os << "inter_off=" << (cfg.inter_off ? 1 : 0) << "\n";
    os << "checkpoint_every=" << cfg.checkpoint_every << "\n";
    return os.str();
}

TrainConfig parse_train_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open train config: " + path.string());
    TrainConfig cfg;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("malformed config line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "latent_dim") cfg.latent_dim = std::stoul(value);
        else if (key == "hidden_brain") cfg.hidden_brain = std::stoul(value);
        else if (key == "hidden_visual") cfg.hidden_visual = std::stoul(value);
        else if (key == "hidden_textual") cfg.hidden_textual = std::stoul(value);
        else if (key == "lr") cfg.lr = std::stod(value);
        else if (key == "batch_size") cfg.batch_size = std::stoul(value);
        else if (key == "epochs") cfg.epochs = std::stoul(value);
        else if (key == "lambda1") cfg.lambda1 = std::stod(value);
        else if (key == "lambda2") cfg.lambda2 = std::stod(value);
        else if (key == "cubo_k") cfg.cubo_k = std::stoul(value);
        else if (key == "anneal_rate") cfg.anneal_rate = std::stod(value);
        else if (key == "posterior_type") cfg.posterior_type = posterior_type_from_name(value);
        else if (key == "negatives_per_type") cfg.negatives_per_type = std::stoul(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "intra_off") cfg.intra_off = value == "1" || value == "true";
        else if (key == "inter_off") cfg.inter_off = value == "1" || value == "true";
        else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoul(value);
        else throw std::runtime_error("unknown config key: " + key);
    }
    cfg.validate();
    return cfg;
}

std::uint64_t train_config_hash(const TrainConfig& cfg) {
    const std::string text = train_config_text(cfg);
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

namespace {

const char* role_tag(int role) { return role == 0 ? "enc" : (role == 1 ? "dec" : "aux"); }

void save_mlp(const MlpParams& p, const std::filesystem::path& dir, const std::string& base) {
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        write_matrix_f64(dir / (base + "_w" + std::to_string(i) + ".bvlm"), p.weights[i]);
        write_matrix_f64(dir / (base + "_b" + std::to_string(i) + ".bvlm"), p.biases[i]);
    }
}

MlpParams load_mlp(const std::filesystem::path& dir, const std::string& base, std::size_t layers) {
    MlpParams p;
    for (std::size_t i = 0; i < layers; ++i) {
        p.weights.push_back(read_matrix(dir / (base + "_w" + std::to_string(i) + ".bvlm")));
        p.biases.push_back(read_matrix(dir / (base + "_b" + std::to_string(i) + ".bvlm")));
    }
    return p;
}

void save_adam(const AdamState& s, const std::filesystem::path& dir, const std::string& base, Manifest& man) {
    man.set_u64(base + ".step", static_cast<std::uint64_t>(s.step));
    man.set_u64(base + ".tensors", s.m.size());
    for (std::size_t i = 0; i < s.m.size(); ++i) {
        write_matrix_f64(dir / (base + "_m" + std::to_string(i) + ".bvlm"), s.m[i]);
        write_matrix_f64(dir / (base + "_v" + std::to_string(i) + ".bvlm"), s.v[i]);
    }
}

AdamState load_adam(const std::filesystem::path& dir, const std::string& base, const Manifest& man) {
    AdamState s;
    s.step = static_cast<std::int64_t>(man.get_u64(base + ".step"));
    const std::size_t count = man.get_u64(base + ".tensors");
    for (std::size_t i = 0; i < count; ++i) {
        s.m.push_back(read_matrix(dir / (base + "_m" + std::to_string(i) + ".bvlm")));
        s.v.push_back(read_matrix(dir / (base + "_v" + std::to_string(i) + ".bvlm")));
    }
    return s;
}

} // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    Manifest man;
    man.set("format", "bravl-checkpoint");
    man.set_u64("latent_dim", ck.params.latent_dim);
    man.set_u64("epochs_done", ck.epochs_done);
    man.set_u64("steps_done", ck.steps_done);
    man.set("rng_state", ck.rng_state);
    man.set_u64("config_hash", ck.config_hash);
    for (int role = 0; role < 3; ++role) {
        const auto& nets =
            role == 0 ? ck.params.encoders : (role == 1 ? ck.params.decoders : ck.params.aux);
        for (Modality m : kAllModalities)
            save_mlp(nets[static_cast<std::size_t>(m)], dir,
                     std::string(role_tag(role)) + "_" + modality_name(m));
    }
    save_adam(ck.opt_model, dir, "opt_model", man);
    save_adam(ck.opt_aux, dir, "opt_aux", man);
    man.save(dir / "manifest.txt");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    const Manifest man = Manifest::load(dir / "manifest.txt");
    if (man.get_or("format", "") != "bravl-checkpoint")
        throw std::runtime_error("not a checkpoint directory: " + dir.string());
    Checkpoint ck;
    ck.params.latent_dim = man.get_u64("latent_dim");
    ck.epochs_done = man.get_u64("epochs_done");
    ck.steps_done = man.get_u64("steps_done");
    ck.rng_state = man.get("rng_state");
    ck.config_hash = man.get_u64("config_hash");
    for (int role = 0; role < 3; ++role) {
        auto& nets = role == 0 ? ck.params.encoders : (role == 1 ? ck.params.decoders : ck.params.aux);
        for (Modality m : kAllModalities)
            nets[static_cast<std::size_t>(m)] =
                load_mlp(dir, std::string(role_tag(role)) + "_" + modality_name(m), 3);
    }
    ck.opt_model = load_adam(dir, "opt_model", man);
    ck.opt_aux = load_adam(dir, "opt_aux", man);
    return ck;
}

namespace {

struct Pool {
    // row indices into the split this pool draws from
    std::vector<std::size_t> order;
    std::size_t cursor = 0;

    void reshuffle(Rng& rng) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_index(i)]);
        cursor = 0;
    }

    std::vector<std::size_t> take(std::size_t want, Rng& rng) {
        // avoid emitting degenerate 1-row tails
        if (order.size() - cursor < 2 && order.size() > cursor) reshuffle(rng);
        if (cursor >= order.size()) reshuffle(rng);
        const std::size_t n = std::min(want, order.size() - cursor);
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                     order.begin() + static_cast<std::ptrdiff_t>(cursor + n));
        cursor += n;
        return idx;
    }
};

} // namespace

std::vector<BatchView> schedule_batches(const TrimodalDataset& ds, const TrainConfig& cfg, Rng& rng) {
    if (ds.seen.brain.rows == 0) throw std::invalid_argument("schedule_batches: empty seen pool");

    struct Source {
        enum Kind { seen, novel, extra } kind;
        std::size_t extra_index = 0;
        Pool pool;
    };
    std::vector<Source> sources;
    {
        Source s{Source::seen, 0, {}};
        s.pool.order.resize(ds.seen.brain.rows);
        for (std::size_t i = 0; i < s.pool.order.size(); ++i) s.pool.order[i] = i;
        sources.push_back(std::move(s));
    }
    if (ds.novel.visual.rows > 0) {
        Source s{Source::novel, 0, {}};
        s.pool.order.resize(ds.novel.visual.rows);
        for (std::size_t i = 0; i < s.pool.order.size(); ++i) s.pool.order[i] = i;
        sources.push_back(std::move(s));
    }
    for (std::size_t e = 0; e < ds.extra.size(); ++e) {
        Source s{Source::extra, e, {}};
        s.pool.order.resize(ds.extra[e].row_count());
        for (std::size_t i = 0; i < s.pool.order.size(); ++i) s.pool.order[i] = i;
        sources.push_back(std::move(s));
    }

    double total_rows = 0.0;
    for (const Source& s : sources) total_rows += static_cast<double>(s.pool.order.size());
    for (Source& s : sources) s.pool.reshuffle(rng);

    std::size_t seen_left = sources[0].pool.order.size();
    std::vector<BatchView> out;
    while (seen_left > 0) {
        // pick the source with probability proportional to pool size
        double r = rng.uniform() * total_rows;
        std::size_t pick = 0;
        for (std::size_t i = 0; i < sources.size(); ++i) {
            const double sz = static_cast<double>(sources[i].pool.order.size());
            if (r < sz || i + 1 == sources.size()) {
                pick = i;
                break;
            }
            r -= sz;
        }
        Source& src = sources[pick];
        BatchView batch;
        if (src.kind == Source::seen) {
            const std::size_t n = std::min(cfg.batch_size, seen_left);
            std::vector<std::size_t> idx(sources[0].pool.order.begin() +
                                             static_cast<std::ptrdiff_t>(sources[0].pool.cursor),
                                         sources[0].pool.order.begin() +
                                             static_cast<std::ptrdiff_t>(sources[0].pool.cursor + n));
            sources[0].pool.cursor += n;
            seen_left -= n;
            batch.set(Modality::brain, take_rows(ds.seen.brain, idx));
            batch.set(Modality::visual, take_rows(ds.seen.visual, idx));
            batch.set(Modality::textual, take_rows(ds.seen.textual, idx));
        } else if (src.kind == Source::novel) {
            const std::vector<std::size_t> idx = src.pool.take(cfg.batch_size, rng);
            batch.set(Modality::visual, take_rows(ds.novel.visual, idx));
            batch.set(Modality::textual, take_rows(ds.novel.textual, idx));
        } else {
            const ExtraPool& pool = ds.extra[src.extra_index];
            const std::vector<std::size_t> idx = src.pool.take(cfg.batch_size, rng);
            if (pool.visual) batch.set(Modality::visual, take_rows(*pool.visual, idx));
            if (pool.textual) batch.set(Modality::textual, take_rows(*pool.textual, idx));
        }
        out.push_back(std::move(batch));
    }
    return out;
}

void train_stage1(const BatchView& batch, ModelParams& params, AdamState& opt_aux, GradientSet& scratch,
                  const TrainConfig& cfg, std::size_t epoch, Rng& rng) {
    const ObjectiveConfig ocfg = cfg.objective_config(epoch);
    if (ocfg.lambda1 <= 0.0) return;
    const std::uint64_t seed = rng.next_u64();
    zero_grads(scratch);
    total_objective(batch, params, ocfg, seed, &scratch, GradStage::aux_only);
    adam_step(params, scratch, opt_aux, ParamGroup::aux, cfg.lr);
}

ObjectiveBreakdown train_stage2(const BatchView& batch, ModelParams& params, AdamState& opt_model,
                                GradientSet& scratch, const TrainConfig& cfg, std::size_t epoch, Rng& rng) {
    const ObjectiveConfig ocfg = cfg.objective_config(epoch);
    const std::uint64_t seed = rng.next_u64();
    zero_grads(scratch);
    ObjectiveBreakdown breakdown = total_objective(batch, params, ocfg, seed, &scratch, GradStage::model_only);
    adam_step(params, scratch, opt_model, ParamGroup::encoders_decoders, cfg.lr);
    return breakdown;
}

ObjectiveBreakdown train_step(const BatchView& batch, ModelParams& params, AdamState& opt_model,
                              AdamState& opt_aux, GradientSet& scratch, const TrainConfig& cfg,
                              std::size_t epoch, Rng& rng) {
    train_stage1(batch, params, opt_aux, scratch, cfg, epoch, rng);
    return train_stage2(batch, params, opt_model, scratch, cfg, epoch, rng);
}

namespace {

std::string format_log_row(std::uint64_t step, std::size_t epoch, const ObjectiveBreakdown& b) {
    std::ostringstream os;
    os.precision(10);
    os << step << "," << epoch << "," << b.beta << "," << b.elbo << "," << b.recon[0] << "," << b.recon[1]
       << "," << b.recon[2] << "," << b.kl << "," << b.intra << "," << b.inter << "," << b.total;
    return os.str();
}

} // namespace

TrainResult train_run(const TrimodalDataset& ds, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                      const Checkpoint* resume) {
    cfg.validate();
    ds.validate();

    const NetDims dims{
        {ds.seen.brain.cols, ds.seen.visual.cols, ds.seen.textual.cols},
        {cfg.hidden_brain, cfg.hidden_visual, cfg.hidden_textual},
        cfg.latent_dim,
    };

    TrainResult result;
    Rng rng(cfg.seed + 0x9E3779B97F4A7C15ull);
    std::size_t start_epoch = 0;
    std::uint64_t step = 0;
    if (resume) {
        if (resume->config_hash != train_config_hash(cfg))
            throw std::runtime_error("train_run: checkpoint was created with a different config");
        result.checkpoint = *resume;
        rng.load_state(resume->rng_state);
        start_epoch = resume->epochs_done;
        step = resume->steps_done;
    } else {
        result.checkpoint.params = init_params(dims, cfg.seed);
        result.checkpoint.opt_model = make_adam_state(result.checkpoint.params, ParamGroup::encoders_decoders);
        result.checkpoint.opt_aux = make_adam_state(result.checkpoint.params, ParamGroup::aux);
        result.checkpoint.config_hash = train_config_hash(cfg);
    }
    Checkpoint& ck = result.checkpoint;

    const bool writing = !out_dir.empty();
    std::ofstream log;
    if (writing) {
        std::filesystem::create_directories(out_dir);
        const bool fresh = !resume;
        log.open(out_dir / "log.csv", fresh ? std::ios::trunc : std::ios::app);
        if (fresh) log << kTrainLogHeader << "\n";
    }

    GradientSet scratch = zeros_like(ck.params);
    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const std::vector<BatchView> batches = schedule_batches(ds, cfg, rng);
        for (const BatchView& batch : batches) {
            const ObjectiveBreakdown b =
                train_step(batch, ck.params, ck.opt_model, ck.opt_aux, scratch, cfg, epoch, rng);
            const std::string row = format_log_row(step, epoch, b);
            result.log_lines.push_back(row);
            if (writing) log << row << "\n";
            ++step;
        }
        ck.epochs_done = epoch + 1;
        ck.steps_done = step;
        ck.rng_state = rng.save_state();
        if (writing && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
            epoch + 1 < cfg.epochs)
            save_checkpoint(ck, out_dir / ("checkpoint_epoch" + std::to_string(epoch + 1)));
    }
    ck.rng_state = rng.save_state();
    if (writing) save_checkpoint(ck, out_dir / "checkpoint");
    return result;
}

} // namespace bravl
