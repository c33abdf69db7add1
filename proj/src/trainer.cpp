#include "maf/trainer.hpp"

#include "maf/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace maf {

Family algorithm_family(const std::string& algorithm) {
    if (algorithm == "concat" || algorithm == "ogm" || algorithm == "dlmg") return Family::MML;
    return Family::DG;
}

std::string family_name(Family f) { return f == Family::MML ? "MML" : "DG"; }

// ---------------------------------------------------------------------------
// Small building blocks
// ---------------------------------------------------------------------------

Tensor fusion_init(std::size_t parts, std::size_t dim) {
    Tensor p(parts * dim, dim);
    const double w = 1.0 / static_cast<double>(parts);
    for (std::size_t blk = 0; blk < parts; ++blk)
        for (std::size_t j = 0; j < dim; ++j) p.at(blk * dim + j, j) = w;
    return p;
}

Tensor mixup_combine(const Tensor& a, const Tensor& b, double lambda) {
    if (!a.same_shape(b)) throw InputError("mixup batches must share a shape");
    if (lambda < 0.0 || lambda > 1.0) throw InputError("mixup lambda outside [0,1]");
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = lambda * a[i] + (1.0 - lambda) * b[i];
    return out;
}

std::vector<double> ogm_multipliers(const std::vector<double>& scores, double alpha) {
    const std::size_t k = scores.size();
    std::vector<double> mult(k, 1.0);
    if (k < 2) return mult;
    std::vector<double> clamped(scores);
    for (double& s : clamped)
        if (s <= 0.0) s = 1e-6;
    for (std::size_t m = 0; m < k; ++m) {
        double others = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            if (j != m) others += clamped[j];
        others /= static_cast<double>(k - 1);
        const double rho = clamped[m] / others;
        if (rho > 1.0) mult[m] = 1.0 - std::tanh(alpha * (rho - 1.0));
    }
    return mult;
}

double quantile_interpolated(std::vector<double> values, double q) {
    if (values.empty()) throw ContractError("quantile of empty set");
    if (q < 0.0 || q > 1.0) throw InputError("quantile level outside [0,1]");
    std::stable_sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t k = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(k);
    if (k + 1 >= values.size()) return values.back();
    return (1.0 - frac) * values[k] + frac * values[k + 1];
}

// IRM penalty: squared derivative of the cross entropy with respect to a
// scalar multiplier on the logits, at multiplier 1. The derivative has the
// closed form mean_i <logits_i, softmax(logits_i) - onehot_i>, expressed in
// tape ops so its own gradient flows back into the network first-order.
NodeId irm_penalty_node(Tape& t, NodeId logits, const std::vector<int>& labels) {
    const std::size_t n = t.value(logits).rows();
    const std::size_t c = t.value(logits).cols();
    if (labels.size() != n) throw InputError("irm penalty label count mismatch");
    Tensor onehot(n, c);
    for (std::size_t i = 0; i < n; ++i) onehot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
    NodeId p = softmax_rows(t, logits);
    NodeId q = sub(t, p, t.leaf(std::move(onehot)));
    NodeId r = mul(t, logits, q);
    NodeId g = scale(t, sum_all(t, r), 1.0 / static_cast<double>(n));
    return mul(t, g, g);
}

// Mean per-coordinate population variance of a feature batch.
NodeId ib_penalty_node(Tape& t, NodeId features) {
    // Note: op builders may reallocate the tape, so take sizes by value up
    // front rather than holding a reference into it.
    const std::size_t rows = t.value(features).rows();
    const std::size_t cols = t.value(features).cols();
    if (rows < 2) return t.leaf(Tensor::scalar(0.0));
    NodeId mu = colmean(t, features);
    NodeId centered = sub_rowvec(t, features, mu);
    NodeId sq = mul(t, centered, centered);
    return scale(t, sum_all(t, sq), 1.0 / static_cast<double>(rows * cols));
}

NodeId risk_variance_node(Tape& t, const std::vector<NodeId>& risks) {
    if (risks.empty()) throw ContractError("risk variance needs at least one risk");
    if (risks.size() == 1) return t.leaf(Tensor::scalar(0.0));
    NodeId sum = risks[0];
    for (std::size_t i = 1; i < risks.size(); ++i) sum = add(t, sum, risks[i]);
    NodeId mean = scale(t, sum, 1.0 / static_cast<double>(risks.size()));
    NodeId acc = -1;
    for (NodeId r : risks) {
        NodeId d = sub(t, r, mean);
        NodeId sq = mul(t, d, d);
        acc = acc < 0 ? sq : add(t, acc, sq);
    }
    return scale(t, acc, 1.0 / static_cast<double>(risks.size()));
}

NodeId quantile_risk_node(Tape& t, const std::vector<NodeId>& risks, double q) {
    if (risks.empty()) throw ContractError("quantile risk of empty environment set");
    if (q < 0.0 || q > 1.0) throw InputError("quantile level outside [0,1]");
    std::vector<std::size_t> order(risks.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return t.value(risks[a]).item() < t.value(risks[b]).item();
    });
    const double pos = q * static_cast<double>(risks.size() - 1);
    const std::size_t k = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(k);
    if (k + 1 >= risks.size()) return risks[order.back()];
    if (frac == 0.0) return risks[order[k]];
    return add(t, scale(t, risks[order[k]], 1.0 - frac), scale(t, risks[order[k + 1]], frac));
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

namespace {

// Adam's per-coordinate normalized step bounds total weight movement by
// lr * steps. The published learning rates assume a model/dataset two to
// three orders of magnitude larger than this harness trains; at desk scale
// they cannot move Glorot-scale weights within any sane step budget, so the
// Adam family gets a fixed step-size multiplier. SGD steps are gradient-
// scaled and need none.
constexpr double kAdamDeskScale = 20.0;

struct Optimizer {
    enum class Kind { Adam, Sgd };
    Kind kind = Kind::Adam;
    double lr = 1e-3, weight_decay = 0.0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8; // adam
    double momentum = 0.9;                         // sgd
    std::size_t t = 0;
    std::vector<Tensor> m1, m2;

    void init(const std::vector<Tensor*>& params) {
        m1.clear();
        m2.clear();
        for (const Tensor* p : params) {
            m1.emplace_back(p->rows(), p->cols());
            m2.emplace_back(p->rows(), p->cols());
        }
    }

    // The loss rescale at the penalty-anneal switch changes gradient scale
    // by orders of magnitude; stale second moments would freeze Adam for
    // hundreds of steps, so the moments restart there.
    void reset() {
        m1.clear();
        m2.clear();
        t = 0;
    }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        if (m1.size() != params.size()) init(params);
        ++t;
        const double step_lr = kind == Kind::Adam ? lr * kAdamDeskScale : lr;
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& w = *params[i];
            const Tensor& g0 = grads[i];
            if (kind == Kind::Adam) {
                const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
                const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
                for (std::size_t j = 0; j < w.size(); ++j) {
                    const double g = g0[j] + weight_decay * w[j];
                    m1[i][j] = beta1 * m1[i][j] + (1.0 - beta1) * g;
                    m2[i][j] = beta2 * m2[i][j] + (1.0 - beta2) * g * g;
                    const double mhat = m1[i][j] / c1;
                    const double vhat = m2[i][j] / c2;
                    w[j] -= step_lr * mhat / (std::sqrt(vhat) + eps);
                }
            } else {
                for (std::size_t j = 0; j < w.size(); ++j) {
                    const double g = g0[j] + weight_decay * w[j];
                    m1[i][j] = momentum * m1[i][j] + g;
                    w[j] -= step_lr * m1[i][j];
                }
            }
        }
    }
};

Dense glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Dense d{Tensor(fan_in, fan_out), Tensor(1, fan_out)};
    for (std::size_t i = 0; i < d.w.size(); ++i) d.w[i] = rng.uniform(-bound, bound);
    return d;
}

double hp(const HParams& h, const std::string& name) {
    auto it = h.find(name);
    if (it == h.end()) throw ConfigError("missing hyperparameter '" + name + "'");
    return it->second;
}

double hp_or(const HParams& h, const std::string& name, double fallback) {
    auto it = h.find(name);
    return it == h.end() ? fallback : it->second;
}

constexpr std::uint64_t kTagDetInit = 0x64657469;
constexpr std::uint64_t kTagBatches = 0x62617463;
constexpr std::uint64_t kTagAlgo = 0x616c676f;
constexpr std::uint64_t kTagValPair = 0x76706169;

std::uint64_t algo_tag(const std::string& name) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    return h;
}

struct BatchSet {
    std::vector<Tensor> features; // per training modality
    std::vector<std::vector<int>> labels;
};

// Per-(modality, split, class) row pools for within-class pairing in
// unaligned MML worlds.
std::vector<std::size_t> class_rows(const ModalityDataset& ds, Split split, int cls) {
    std::vector<std::size_t> out;
    for (std::size_t r : ds.rows_of(split))
        if (ds.labels[r] == cls) out.push_back(r);
    return out;
}

} // namespace

std::size_t designated_checkpoint(const std::vector<CheckpointMetrics>& cps, Protocol protocol,
                                  bool fold_run) {
    if (cps.empty()) throw ContractError("no checkpoints recorded");
    if (fold_run) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < cps.size(); ++i)
            if (cps[i].loo_val_auc.value_or(0.0) > cps[best].loo_val_auc.value_or(0.0)) best = i;
        return best;
    }
    if (protocol == Protocol::Oracle) return cps.size() - 1;
    std::size_t best = 0;
    for (std::size_t i = 1; i < cps.size(); ++i)
        if (cps[i].tm_val_auc > cps[best].tm_val_auc) best = i;
    return best;
}

std::vector<double> model_scores(const ModelState& m, const AlgorithmSpec& spec,
                                 const Tensor& features) {
    const bool use_ema = spec.name == "erm++";
    if (!m.fusion.has_value()) return predict_scores(m.detector, features, use_ema);
    // Replicate-at-test: the single modality fills every fusion slot.
    const std::size_t dim = features.cols();
    const std::size_t parts = m.fusion->rows() / dim;
    Tensor wide(features.rows(), dim * parts);
    for (std::size_t i = 0; i < features.rows(); ++i)
        for (std::size_t p = 0; p < parts; ++p)
            for (std::size_t j = 0; j < dim; ++j) wide.at(i, p * dim + j) = features.at(i, j);
    Tensor fused = matmul_plain(wide, *m.fusion);
    return predict_scores(m.detector, fused, use_ema);
}

namespace {

// Fused scores for one aligned row set across the training modalities.
std::vector<double> fused_scores(const ModelState& m, const std::vector<Tensor>& parts) {
    Tensor wide(parts[0].rows(), parts[0].cols() * parts.size());
    for (std::size_t p = 0; p < parts.size(); ++p)
        for (std::size_t i = 0; i < parts[p].rows(); ++i)
            for (std::size_t j = 0; j < parts[p].cols(); ++j)
                wide.at(i, p * parts[p].cols() + j) = parts[p].at(i, j);
    Tensor fused = matmul_plain(wide, *m.fusion);
    return predict_scores(m.detector, fused, false);
}

struct TrainContext {
    const RunConfig& cfg;
    const std::vector<ModalityDataset>& data;
    Auditor& auditor;
    bool is_mml = false;
    std::size_t batch_size = 32;
    Rng rng_batches;
    Rng rng_algo;

    TrainContext(const RunConfig& c, Auditor& a)
        : cfg(c), data(*c.datasets), auditor(a),
          rng_batches(seed_from({c.global_seed, kTagBatches, c.seed_index, c.trial,
                                 c.test_modality})),
          rng_algo(seed_from({c.global_seed, kTagAlgo, algo_tag(c.spec.name), c.seed_index,
                              c.trial, c.test_modality})) {}
};

BatchSet draw_batches(TrainContext& ctx) {
    const auto& mods = ctx.cfg.train_modalities;
    BatchSet out;
    out.features.resize(mods.size());
    out.labels.resize(mods.size());
    if (ctx.is_mml && ctx.cfg.world->config().aligned) {
        // One shared index draw: fusion consumes the same instance from
        // every training modality.
        const auto& anchor_rows = ctx.data[mods[0]].rows_of(Split::Train);
        std::vector<std::size_t> rows(ctx.batch_size);
        for (auto& r : rows) r = anchor_rows[ctx.rng_batches.below(anchor_rows.size())];
        for (std::size_t m = 0; m < mods.size(); ++m) {
            ctx.auditor.record(mods[m], Split::Train, AccessIntent::TrainBatch);
            out.features[m] = gather_rows(ctx.data[mods[m]].features, rows);
            out.labels[m] = gather_labels(ctx.data[mods[m]].labels, rows);
        }
        return out;
    }
    if (ctx.is_mml) {
        // Unaligned world: random within-class pairing against the anchor
        // modality's label sequence.
        const auto& anchor = ctx.data[mods[0]];
        const auto& anchor_rows = anchor.rows_of(Split::Train);
        std::vector<std::size_t> rows(ctx.batch_size);
        for (auto& r : rows) r = anchor_rows[ctx.rng_batches.below(anchor_rows.size())];
        ctx.auditor.record(mods[0], Split::Train, AccessIntent::TrainBatch);
        out.features[0] = gather_rows(anchor.features, rows);
        out.labels[0] = gather_labels(anchor.labels, rows);
        for (std::size_t m = 1; m < mods.size(); ++m) {
            ctx.auditor.record(mods[m], Split::Train, AccessIntent::TrainBatch);
            std::vector<std::size_t> paired(ctx.batch_size);
            for (std::size_t i = 0; i < ctx.batch_size; ++i) {
                const auto pool = class_rows(ctx.data[mods[m]], Split::Train, out.labels[0][i]);
                paired[i] = pool[ctx.rng_batches.below(pool.size())];
            }
            out.features[m] = gather_rows(ctx.data[mods[m]].features, paired);
            out.labels[m] = gather_labels(ctx.data[mods[m]].labels, paired);
        }
        return out;
    }
    for (std::size_t m = 0; m < mods.size(); ++m) {
        ctx.auditor.record(mods[m], Split::Train, AccessIntent::TrainBatch);
        const auto& rows_all = ctx.data[mods[m]].rows_of(Split::Train);
        std::vector<std::size_t> rows(ctx.batch_size);
        for (auto& r : rows) r = rows_all[ctx.rng_batches.below(rows_all.size())];
        out.features[m] = gather_rows(ctx.data[mods[m]].features, rows);
        out.labels[m] = gather_labels(ctx.data[mods[m]].labels, rows);
    }
    return out;
}

} // namespace

RunRecord train_run(const RunConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.world == nullptr || cfg.datasets == nullptr)
        throw ContractError("train_run needs a world and materialized datasets");
    if (!algorithm_implemented(cfg.spec.name))
        throw ConfigError("algorithm '" + cfg.spec.name + "' has no training implementation");
    if (cfg.train_modalities.empty()) throw ContractError("no training modalities");
    for (std::size_t m : cfg.train_modalities)
        if (m == cfg.test_modality)
            throw ContractError("test modality appears among training modalities");

    const HParams& h = cfg.spec.hparams;
    const Family family = cfg.spec.family();
    const bool is_mml = family == Family::MML;
    const std::string& algo = cfg.spec.name;
    const std::size_t n_env = cfg.train_modalities.size();
    const std::size_t dim = cfg.world->config().perceptor_dim;

    std::size_t steps = cfg.steps;
    if (algo == "eqrm")
        steps = std::max(steps, static_cast<std::size_t>(hp(h, "burnin_iters")) + 500);

    Auditor auditor(cfg.protocol, cfg.test_modality);
    TrainContext ctx(cfg, auditor);
    ctx.is_mml = is_mml;
    ctx.batch_size = static_cast<std::size_t>(hp(h, "batch_size"));

    RunRecord rec;
    rec.spec = cfg.spec;
    rec.protocol = cfg.protocol;
    rec.seed_index = cfg.seed_index;
    rec.trial = cfg.trial;
    rec.test_modality = cfg.test_modality;
    rec.setting = cfg.mode == PerceptorMode::Semantic
                      ? "weak"
                      : (cfg.mode == PerceptorMode::Isolated ? "strong" : "random_init");
    {
        std::string id = rec.setting + ":" + protocol_name(cfg.protocol) + ":" + algo + ":m" +
                         std::to_string(cfg.test_modality) + ":t" + std::to_string(cfg.trial) +
                         ":s" + std::to_string(cfg.seed_index);
        if (cfg.loo_val_modality.has_value())
            id += ":fold" + std::to_string(*cfg.loo_val_modality);
        rec.run_id = id;
    }
    if (is_mml && !cfg.world->config().aligned)
        rec.flags.push_back("unaligned_mml_random_within_class_pairing");

    // Model state.
    const std::uint64_t det_seed =
        seed_from({cfg.global_seed, kTagDetInit, cfg.seed_index, cfg.trial, cfg.test_modality});
    ModelState model;
    model.detector =
        cfg.linear_detector ? init_linear_detector(dim, det_seed) : init_detector(dim, det_seed);
    if (is_mml) model.fusion = fusion_init(n_env, dim);

    // CDANN discriminator: two relu layers over features + one-hot label.
    Dense disc1, disc2;
    Optimizer disc_opt;
    const bool is_cdann = algo == "cdann";
    if (is_cdann) {
        Rng rng(ctx.rng_algo.next_u64());
        disc1 = glorot(rng, dim + 2, dim);
        disc2 = glorot(rng, dim, n_env);
        disc_opt.kind = Optimizer::Kind::Adam;
        disc_opt.lr = hp(h, "lr");
        disc_opt.weight_decay = hp(h, "disc_weight_decay");
        disc_opt.beta1 = hp(h, "adam_beta1");
    }

    Optimizer opt;
    opt.kind = is_mml ? Optimizer::Kind::Sgd : Optimizer::Kind::Adam;
    opt.lr = hp(h, "lr");
    opt.weight_decay = hp(h, "weight_decay");
    if (is_mml) opt.momentum = hp(h, "momentum");
    if (is_cdann) opt.beta1 = hp(h, "adam_beta1");

    auto model_params = [&]() {
        std::vector<Tensor*> ps;
        for (Dense& l : model.detector.live.layers) {
            ps.push_back(&l.w);
            ps.push_back(&l.b);
        }
        ps.push_back(&model.detector.live.head.w);
        ps.push_back(&model.detector.live.head.b);
        if (model.fusion.has_value()) ps.push_back(&*model.fusion);
        return ps;
    };

    // Metric helpers -------------------------------------------------------
    auto dg_split_auc = [&](const ModelState& m, std::size_t modality, Split split,
                            AccessIntent intent) {
        auditor.record(modality, split, intent);
        const auto& ds = ctx.data[modality];
        const auto& rows = ds.rows_of(split);
        Tensor batch = gather_rows(ds.features, rows);
        return auc(model_scores(m, cfg.spec, batch), gather_labels(ds.labels, rows));
    };

    auto mml_fused_val_auc = [&](const ModelState& m, std::size_t checkpoint_index) {
        // Fused evaluation over the training modalities' val rows.
        const auto& mods = cfg.train_modalities;
        std::vector<Tensor> parts(mods.size());
        std::vector<int> labels;
        if (cfg.world->config().aligned) {
            const auto& rows = ctx.data[mods[0]].rows_of(Split::Val);
            for (std::size_t i = 0; i < mods.size(); ++i) {
                auditor.record(mods[i], Split::Val, AccessIntent::ValMetric);
                parts[i] = gather_rows(ctx.data[mods[i]].features, rows);
            }
            labels = gather_labels(ctx.data[mods[0]].labels, rows);
        } else {
            Rng pair_rng(seed_from({cfg.global_seed, kTagValPair, cfg.seed_index, cfg.trial,
                                    cfg.test_modality, checkpoint_index}));
            const auto& anchor = ctx.data[mods[0]];
            const auto rows = anchor.rows_of(Split::Val);
            auditor.record(mods[0], Split::Val, AccessIntent::ValMetric);
            parts[0] = gather_rows(anchor.features, rows);
            labels = gather_labels(anchor.labels, rows);
            for (std::size_t i = 1; i < mods.size(); ++i) {
                auditor.record(mods[i], Split::Val, AccessIntent::ValMetric);
                std::vector<std::size_t> paired(rows.size());
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    const auto pool = class_rows(ctx.data[mods[i]], Split::Val, labels[r]);
                    paired[r] = pool[pair_rng.below(pool.size())];
                }
                parts[i] = gather_rows(ctx.data[mods[i]].features, paired);
            }
        }
        return auc(fused_scores(m, parts), labels);
    };

    auto record_checkpoint = [&](std::size_t step_done, std::size_t checkpoint_index) {
        CheckpointMetrics cp;
        cp.step = step_done;
        if (is_mml) {
            cp.tm_val_auc = mml_fused_val_auc(model, checkpoint_index);
        } else {
            double acc = 0.0;
            for (std::size_t m : cfg.train_modalities)
                acc += dg_split_auc(model, m, Split::Val, AccessIntent::ValMetric);
            cp.tm_val_auc = acc / static_cast<double>(n_env);
        }
        if (cfg.loo_val_modality.has_value())
            cp.loo_val_auc =
                dg_split_auc(model, *cfg.loo_val_modality, Split::Val, AccessIntent::ValMetric);
        if (cfg.protocol == Protocol::Oracle && cfg.evaluate_test)
            cp.oracle_val_auc =
                dg_split_auc(model, cfg.test_modality, Split::Val, AccessIntent::ValMetric);
        return cp;
    };

    // Training loop --------------------------------------------------------
    std::vector<CheckpointMetrics> checkpoints;
    std::vector<ModelState> snapshots;
    const std::size_t patience =
        is_mml ? static_cast<std::size_t>(hp(h, "patience")) : 0;
    double best_tm = -1.0;
    std::size_t stale = 0;

    const double lambda_hp = hp_or(h, "lambda", 0.0);
    const std::size_t anneal_iters =
        (algo == "irm" || algo == "ib_erm")
            ? static_cast<std::size_t>(hp(h, "penalty_anneal_iters"))
            : 0;

    for (std::size_t step = 0; step < steps; ++step) {
        if ((algo == "irm" || algo == "ib_erm") && step == anneal_iters && lambda_hp > 1.0)
            opt.reset();
        BatchSet batch = draw_batches(ctx);
        bool failed_step = false;
        try {
            Tape tape;
            TapedDetector det = put_on_tape(tape, model.detector.live);
            NodeId fusion_node = -1;
            if (is_mml) fusion_node = tape.leaf(*model.fusion);

            NodeId total = -1;
            std::vector<double> ogm_mult;

            if (is_mml) {
                std::vector<NodeId> parts;
                for (const Tensor& f : batch.features) parts.push_back(tape.leaf(f));
                NodeId fused = matmul(tape, concat_cols(tape, parts), fusion_node);
                ForwardNodes f = forward_on_tape(tape, det, fused);
                total = softmax_cross_entropy(tape, f.logits, batch.labels[0]);
                if (algo == "ogm") {
                    // Contribution score per modality: mean correct-class
                    // probability of the replicate-fused solo prediction.
                    std::vector<double> scores(n_env);
                    for (std::size_t m = 0; m < n_env; ++m) {
                        std::vector<double> s =
                            model_scores(model, cfg.spec, batch.features[m]);
                        double acc = 0.0;
                        for (std::size_t i = 0; i < s.size(); ++i)
                            acc += batch.labels[m][i] == 1 ? s[i] : 1.0 - s[i];
                        scores[m] = acc / static_cast<double>(s.size());
                    }
                    ogm_mult = ogm_multipliers(scores, hp(h, "alpha"));
                }
            } else if (algo == "mixup") {
                const double alpha = hp(h, "alpha");
                NodeId acc = -1;
                for (std::size_t i = 0; i < n_env; ++i) {
                    const std::size_t j = (i + 1) % n_env;
                    const double lam = n_env > 1 ? ctx.rng_algo.beta(alpha, alpha) : 1.0;
                    Tensor mixed = mixup_combine(batch.features[i], batch.features[j], lam);
                    ForwardNodes f = forward_on_tape(tape, det, tape.leaf(mixed));
                    NodeId ce_a = softmax_cross_entropy(tape, f.logits, batch.labels[i]);
                    NodeId ce_b = softmax_cross_entropy(tape, f.logits, batch.labels[j]);
                    NodeId term = add(tape, scale(tape, ce_a, lam), scale(tape, ce_b, 1.0 - lam));
                    acc = acc < 0 ? term : add(tape, acc, term);
                }
                total = scale(tape, acc, 1.0 / static_cast<double>(n_env));
            } else {
                // Shared DG skeleton: per-environment forward + CE.
                std::vector<NodeId> risks;
                std::vector<ForwardNodes> fwd;
                for (std::size_t m = 0; m < n_env; ++m) {
                    ForwardNodes f = forward_on_tape(tape, det, tape.leaf(batch.features[m]));
                    risks.push_back(softmax_cross_entropy(tape, f.logits, batch.labels[m]));
                    fwd.push_back(f);
                }
                NodeId cls = risks[0];
                for (std::size_t m = 1; m < n_env; ++m) cls = add(tape, cls, risks[m]);

                if (algo == "erm" || algo == "erm++") {
                    total = cls;
                } else if (algo == "irm" || algo == "ib_erm") {
                    NodeId pen = -1;
                    for (std::size_t m = 0; m < n_env; ++m) {
                        NodeId p = irm_penalty_node(tape, fwd[m].logits, batch.labels[m]);
                        if (algo == "ib_erm")
                            p = add(tape, p, ib_penalty_node(tape, fwd[m].forensic));
                        pen = pen < 0 ? p : add(tape, pen, p);
                    }
                    const double w = step >= anneal_iters ? lambda_hp : 1.0;
                    total = add(tape, cls, scale(tape, pen, w));
                    if (w > 1.0) total = scale(tape, total, 1.0 / w);
                } else if (algo == "eqrm") {
                    const std::size_t burnin = static_cast<std::size_t>(hp(h, "burnin_iters"));
                    if (step < burnin) {
                        total = scale(tape, cls, 1.0 / static_cast<double>(n_env));
                    } else {
                        total = quantile_risk_node(tape, risks, hp(h, "quantile"));
                    }
                } else if (algo == "urm") {
                    total = add(tape, cls, scale(tape, risk_variance_node(tape, risks), lambda_hp));
                } else if (algo == "cdann") {
                    // Inner discriminator updates on detached features.
                    std::vector<Tensor> feats(n_env);
                    for (std::size_t m = 0; m < n_env; ++m)
                        feats[m] = detector_forward(model.detector.live, batch.features[m]).forensic;
                    const std::size_t disc_steps =
                        static_cast<std::size_t>(hp(h, "disc_steps"));
                    const double gp_coef = hp(h, "grad_penalty");
                    const std::size_t rows_total = ctx.batch_size * n_env;
                    Tensor disc_in(rows_total, dim + 2);
                    std::vector<int> env_labels(rows_total);
                    for (std::size_t m = 0; m < n_env; ++m)
                        for (std::size_t i = 0; i < ctx.batch_size; ++i) {
                            const std::size_t r = m * ctx.batch_size + i;
                            for (std::size_t j = 0; j < dim; ++j)
                                disc_in.at(r, j) = feats[m].at(i, j);
                            disc_in.at(r, dim + static_cast<std::size_t>(batch.labels[m][i])) = 1.0;
                            env_labels[r] = static_cast<int>(m);
                        }
                    for (std::size_t ds = 0; ds < disc_steps; ++ds) {
                        Tape dt;
                        NodeId w1 = dt.leaf(disc1.w), b1 = dt.leaf(disc1.b);
                        NodeId w2 = dt.leaf(disc2.w), b2 = dt.leaf(disc2.b);
                        NodeId in = dt.leaf(disc_in);
                        NodeId pre = add_rowvec(dt, matmul(dt, in, w1), b1);
                        NodeId h1 = relu(dt, pre);
                        NodeId logits = add_rowvec(dt, matmul(dt, h1, w2), b2);
                        NodeId loss = softmax_cross_entropy(dt, logits, env_labels);
                        if (gp_coef > 0.0) {
                            Tensor onehot_env(rows_total, n_env);
                            for (std::size_t r = 0; r < rows_total; ++r)
                                onehot_env.at(r, static_cast<std::size_t>(env_labels[r])) = 1.0;
                            NodeId q = sub(dt, softmax_rows(dt, logits), dt.leaf(onehot_env));
                            NodeId qn = scale(dt, q, 1.0 / static_cast<double>(rows_total));
                            NodeId gmid = matmul(dt, qn, transpose(dt, w2));
                            Tensor indicator(dt.value(pre).rows(), dt.value(pre).cols());
                            for (std::size_t i2 = 0; i2 < indicator.size(); ++i2)
                                indicator[i2] = dt.value(pre)[i2] > 0.0 ? 1.0 : 0.0;
                            NodeId gmask = mul_const(dt, gmid, std::move(indicator));
                            NodeId gin = matmul(dt, gmask, transpose(dt, w1));
                            Tensor feature_cols(rows_total, dim + 2);
                            for (std::size_t r = 0; r < rows_total; ++r)
                                for (std::size_t j = 0; j < dim; ++j) feature_cols.at(r, j) = 1.0;
                            NodeId gfeat = mul_const(dt, gin, std::move(feature_cols));
                            NodeId gp = scale(dt, sum_all(dt, mul(dt, gfeat, gfeat)),
                                              1.0 / static_cast<double>(rows_total));
                            loss = add(dt, loss, scale(dt, gp, gp_coef));
                        }
                        dt.backward(loss);
                        std::vector<Tensor*> dparams = {&disc1.w, &disc1.b, &disc2.w, &disc2.b};
                        std::vector<Tensor> dgrads = {dt.grad(w1), dt.grad(b1), dt.grad(w2),
                                                      dt.grad(b2)};
                        disc_opt.step(dparams, dgrads);
                    }
                    // Detector update fights the (frozen-this-step) critic.
                    NodeId w1 = tape.leaf(disc1.w), b1 = tape.leaf(disc1.b);
                    NodeId w2 = tape.leaf(disc2.w), b2 = tape.leaf(disc2.b);
                    NodeId disc_ce = -1;
                    for (std::size_t m = 0; m < n_env; ++m) {
                        Tensor onehot_y(ctx.batch_size, 2);
                        for (std::size_t i = 0; i < ctx.batch_size; ++i)
                            onehot_y.at(i, static_cast<std::size_t>(batch.labels[m][i])) = 1.0;
                        NodeId din = concat_cols(tape, {fwd[m].forensic, tape.leaf(onehot_y)});
                        NodeId dh = relu(tape, add_rowvec(tape, matmul(tape, din, w1), b1));
                        NodeId dlogits = add_rowvec(tape, matmul(tape, dh, w2), b2);
                        std::vector<int> env_lab(ctx.batch_size, static_cast<int>(m));
                        NodeId ce = softmax_cross_entropy(tape, dlogits, env_lab);
                        disc_ce = disc_ce < 0 ? ce : add(tape, disc_ce, ce);
                    }
                    disc_ce = scale(tape, disc_ce, 1.0 / static_cast<double>(n_env));
                    total = add(tape, cls, scale(tape, disc_ce, -lambda_hp));
                } else {
                    throw ConfigError("unhandled algorithm '" + algo + "'");
                }
            }

            if (!std::isfinite(tape.value(total).item()))
                throw NumericError("non-finite training loss");
            tape.backward(total);

            std::vector<Tensor*> params = model_params();
            std::vector<NodeId> param_nodes = det.all();
            if (is_mml) param_nodes.push_back(fusion_node);
            std::vector<Tensor> grads;
            grads.reserve(param_nodes.size());
            for (NodeId id : param_nodes) grads.push_back(tape.grad(id));
            if (is_mml && algo == "ogm" && !ogm_mult.empty()) {
                Tensor& gp = grads.back(); // fusion projection gradient
                for (std::size_t m = 0; m < n_env; ++m)
                    for (std::size_t r = 0; r < dim; ++r)
                        for (std::size_t c = 0; c < dim; ++c)
                            gp.at(m * dim + r, c) *= ogm_mult[m];
            }
            for (const Tensor& g : grads)
                if (!g.all_finite()) throw NumericError("non-finite gradient");
            opt.step(params, grads);
            if (algo == "erm++") ema_update(model.detector, 0.999);
        } catch (const NumericError& e) {
            rec.failed = true;
            rec.fail_reason = std::string(e.what()) + " at step " + std::to_string(step);
            failed_step = true;
        }
        if (failed_step) break;

        const std::size_t done = step + 1;
        if (done % cfg.eval_cadence == 0 || done == steps) {
            CheckpointMetrics cp = record_checkpoint(done, checkpoints.size());
            checkpoints.push_back(cp);
            snapshots.push_back(model);
            if (is_mml && cfg.protocol == Protocol::TM) {
                if (cp.tm_val_auc > best_tm) {
                    best_tm = cp.tm_val_auc;
                    stale = 0;
                } else if (++stale >= patience) {
                    break; // early stopping under TM only
                }
            }
        }
    }

    rec.checkpoints = checkpoints;
    if (!checkpoints.empty()) {
        const std::size_t pick =
            designated_checkpoint(checkpoints, cfg.protocol, cfg.loo_val_modality.has_value());
        rec.model = snapshots[pick];
        if (cfg.evaluate_test && !rec.failed) {
            auditor.enter_final_eval();
            rec.final_test_auc =
                dg_split_auc(rec.model, cfg.test_modality, Split::Test, AccessIntent::TestEval);
        }
    } else {
        rec.model = model;
        if (!rec.failed) {
            rec.failed = true;
            rec.fail_reason = "no checkpoints recorded";
        }
    }
    rec.audit = auditor.counters();
    rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    return rec;
}

} // namespace maf
