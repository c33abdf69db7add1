#include "maf/benchmark.hpp"

#include "maf/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <map>
#include <thread>
#include <tuple>

namespace maf {

std::string protocol_name(Protocol p) {
    switch (p) {
        case Protocol::TM: return "tm";
        case Protocol::LOO: return "loo";
        case Protocol::Oracle: return "oracle";
    }
    return "?";
}

Protocol parse_protocol(const std::string& s) {
    if (s == "tm") return Protocol::TM;
    if (s == "loo") return Protocol::LOO;
    if (s == "oracle") return Protocol::Oracle;
    throw ConfigError("unknown protocol '" + s + "' (expected tm|loo|oracle)");
}

namespace {
constexpr std::uint64_t kTagHparams = 0x68706172;
} // namespace

void SweepConfig::validate(const SyntheticWorld& world) const {
    if (algorithms.empty()) throw ConfigError("sweep needs at least one algorithm");
    for (const auto& a : algorithms)
        if (!algorithm_implemented(a))
            throw ConfigError("algorithm '" + a + "' has no training implementation");
    if (trials < 1) throw ConfigError("trials must be >= 1");
    if (seeds < 1) throw ConfigError("seeds must be >= 1");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (world.modalities() < 2) throw ConfigError("benchmark needs >= 2 modalities");
    for (std::size_t m : test_modalities)
        if (m >= world.modalities()) throw ConfigError("test modality out of range");
}

DatasetBundle materialize_bundle(const SyntheticWorld& world, PerceptorMode mode) {
    DatasetBundle b;
    b.mode = mode;
    for (std::size_t k = 0; k < world.modalities(); ++k)
        b.datasets.push_back(apply_perceptor(mode, world, k));
    return b;
}

HParams trial_hparams(const std::string& algorithm, std::size_t trial,
                      std::uint64_t global_seed) {
    if (trial == 0) {
        Rng rng(0);
        return default_or_sample_hparams(algorithm, HParamMode::Default, rng);
    }
    Rng rng(seed_from({global_seed, kTagHparams, std::hash<std::string>{}(algorithm), trial}));
    return default_or_sample_hparams(algorithm, HParamMode::Sample, rng);
}

namespace {

void run_pool(std::vector<std::function<void()>>& tasks, std::size_t threads) {
    if (threads <= 1) {
        for (auto& t : tasks) t();
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(tasks.size());
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            try {
                tasks[i]();
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < std::min(threads, tasks.size()); ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::vector<std::size_t> train_modalities_for(const SyntheticWorld& world, std::size_t heldout) {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < world.modalities(); ++k)
        if (k != heldout) out.push_back(k);
    return out;
}

double loo_fold_score(const RunRecord& fold) {
    double best = -1.0;
    for (const auto& cp : fold.checkpoints)
        if (cp.loo_val_auc.has_value()) best = std::max(best, *cp.loo_val_auc);
    return best;
}

} // namespace

std::vector<RunRecord> run_benchmark(const SyntheticWorld& world, const DatasetBundle& bundle,
                                     const SweepConfig& cfg) {
    cfg.validate(world);
    std::vector<std::size_t> targets = cfg.test_modalities;
    if (targets.empty())
        for (std::size_t k = 0; k < world.modalities(); ++k) targets.push_back(k);

    struct Desc {
        RunConfig rc;
    };
    std::vector<RunConfig> descs;
    for (std::size_t target : targets) {
        const auto train_mods = train_modalities_for(world, target);
        for (const std::string& algo : cfg.algorithms) {
            for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
                const HParams hp = trial_hparams(algo, trial, cfg.global_seed);
                for (std::size_t seed = 0; seed < cfg.seeds; ++seed) {
                    RunConfig rc;
                    rc.world = &world;
                    rc.datasets = &bundle.datasets;
                    rc.train_modalities = train_mods;
                    rc.test_modality = target;
                    rc.spec = {algo, hp};
                    rc.protocol = cfg.protocol;
                    rc.mode = bundle.mode;
                    rc.global_seed = cfg.global_seed;
                    rc.seed_index = seed;
                    rc.trial = trial;
                    rc.steps = cfg.steps;
                    rc.eval_cadence = cfg.eval_cadence;
                    if (cfg.protocol == Protocol::LOO) {
                        // Phase one: fold runs only; retrains come after.
                        for (std::size_t fold : train_mods) {
                            RunConfig fc = rc;
                            fc.loo_val_modality = fold;
                            fc.evaluate_test = false;
                            fc.train_modalities.clear();
                            for (std::size_t m : train_mods)
                                if (m != fold) fc.train_modalities.push_back(m);
                            descs.push_back(std::move(fc));
                        }
                    } else {
                        descs.push_back(std::move(rc));
                    }
                }
            }
        }
    }

    std::vector<RunRecord> records(descs.size());
    std::vector<std::function<void()>> tasks;
    tasks.reserve(descs.size());
    for (std::size_t i = 0; i < descs.size(); ++i)
        tasks.emplace_back([&descs, &records, i]() { records[i] = train_run(descs[i]); });
    run_pool(tasks, cfg.threads);

    if (cfg.protocol != Protocol::LOO) {
        select_models(records, cfg.protocol);
        return records;
    }

    // LOO phase two: pick the best trial per (target, algorithm, seed) by
    // mean fold score, retrain it on all training modalities.
    std::map<std::tuple<std::size_t, std::string, std::size_t, std::size_t>,
             std::pair<double, std::size_t>>
        fold_scores; // (target, algo, seed, trial) -> (sum score, count)
    for (const RunRecord& r : records) {
        auto key = std::make_tuple(r.test_modality, r.spec.name, r.seed_index, r.trial);
        auto& agg = fold_scores[key];
        agg.first += loo_fold_score(r);
        agg.second += 1;
    }
    struct Winner {
        double score = -2.0;
        std::size_t trial = 0;
    };
    std::map<std::tuple<std::size_t, std::string, std::size_t>, Winner> winners;
    for (const auto& [key, agg] : fold_scores) {
        const auto& [target, algo, seed, trial] = key;
        const double mean_score = agg.first / static_cast<double>(agg.second);
        auto& w = winners[std::make_tuple(target, algo, seed)];
        if (mean_score > w.score) {
            w.score = mean_score;
            w.trial = trial;
        }
    }

    std::vector<RunConfig> retrain_descs;
    for (const auto& [key, w] : winners) {
        const auto& [target, algo, seed] = key;
        RunConfig rc;
        rc.world = &world;
        rc.datasets = &bundle.datasets;
        rc.train_modalities = train_modalities_for(world, target);
        rc.test_modality = target;
        rc.spec = {algo, trial_hparams(algo, w.trial, cfg.global_seed)};
        rc.protocol = Protocol::LOO;
        rc.mode = bundle.mode;
        rc.global_seed = cfg.global_seed;
        rc.seed_index = seed;
        rc.trial = w.trial;
        rc.steps = cfg.steps;
        rc.eval_cadence = cfg.eval_cadence;
        retrain_descs.push_back(std::move(rc));
    }
    std::vector<RunRecord> retrained(retrain_descs.size());
    std::vector<std::function<void()>> retasks;
    for (std::size_t i = 0; i < retrain_descs.size(); ++i)
        retasks.emplace_back(
            [&retrain_descs, &retrained, i]() { retrained[i] = train_run(retrain_descs[i]); });
    run_pool(retasks, cfg.threads);

    for (RunRecord& r : retrained) {
        r.run_id += ":retrain";
        r.selected = true;
        records.push_back(std::move(r));
    }
    return records;
}

void select_models(std::vector<RunRecord>& runs, Protocol protocol) {
    if (protocol == Protocol::LOO) return; // marked during the retrain phase
    std::map<std::tuple<std::string, std::string, std::size_t, std::size_t>, std::size_t> best;
    auto score_of = [&](const RunRecord& r) {
        if (r.failed || r.checkpoints.empty()) return -1.0;
        if (protocol == Protocol::Oracle) {
            const auto& last = r.checkpoints.back();
            return last.oracle_val_auc.value_or(-1.0);
        }
        const std::size_t pick = designated_checkpoint(r.checkpoints, protocol, false);
        return r.checkpoints[pick].tm_val_auc;
    };
    for (std::size_t i = 0; i < runs.size(); ++i) {
        runs[i].selected = false;
        auto key = std::make_tuple(runs[i].setting, runs[i].spec.name, runs[i].test_modality,
                                   runs[i].seed_index);
        auto it = best.find(key);
        if (it == best.end() || score_of(runs[i]) > score_of(runs[it->second]))
            best[key] = i;
    }
    for (const auto& [key, idx] : best) runs[idx].selected = true;
}

std::vector<ReportRow> aggregate_report(const std::vector<RunRecord>& runs) {
    std::map<std::tuple<std::string, std::string, std::string, std::size_t>, std::vector<double>>
        cells;
    for (const RunRecord& r : runs) {
        if (!r.selected || !r.final_test_auc.has_value()) continue;
        cells[std::make_tuple(r.setting, r.spec.name, protocol_name(r.protocol), r.test_modality)]
            .push_back(*r.final_test_auc);
    }
    std::vector<ReportRow> rows;
    std::map<std::tuple<std::string, std::string, std::size_t>, std::map<Family, std::vector<double>>>
        families;
    for (const auto& [key, values] : cells) {
        const auto& [setting, algo, proto, modality] = key;
        ReportRow row;
        row.setting = setting;
        row.algorithm = algo;
        row.protocol = parse_protocol(proto);
        row.test_modality = modality;
        row.mean_auc = mean(values);
        row.std_auc = population_std(values);
        row.n_runs = values.size();
        rows.push_back(row);
        families[std::make_tuple(setting, proto, modality)][algorithm_family(algo)].push_back(
            row.mean_auc);
    }
    for (const auto& [key, by_family] : families) {
        const auto& [setting, proto, modality] = key;
        for (const auto& [family, means] : by_family) {
            ReportRow row;
            row.setting = setting;
            row.algorithm = family_name(family) + "_mean";
            row.protocol = parse_protocol(proto);
            row.test_modality = modality;
            row.mean_auc = mean(means);
            row.std_auc = population_std(means);
            row.n_runs = means.size();
            rows.push_back(row);
        }
    }
    std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        return std::make_tuple(a.setting, a.algorithm, protocol_name(a.protocol),
                               a.test_modality) <
               std::make_tuple(b.setting, b.algorithm, protocol_name(b.protocol),
                               b.test_modality);
    });
    return rows;
}

std::string ablation_mode_name(AblationMode m) {
    switch (m) {
        case AblationMode::Full: return "full";
        case AblationMode::SingleModality: return "single_modality";
        case AblationMode::RandomInit: return "random_init";
    }
    return "?";
}

AblationResult run_ablation(const SyntheticWorld& world, AblationMode mode, std::size_t seeds,
                            std::size_t steps, std::uint64_t global_seed) {
    if (seeds < 1) throw ConfigError("ablation needs seeds >= 1");
    const std::size_t target = world.config().test_modality;
    const PerceptorMode pmode =
        mode == AblationMode::RandomInit ? PerceptorMode::RandomInit : PerceptorMode::Isolated;
    DatasetBundle bundle = materialize_bundle(world, pmode);

    std::vector<std::size_t> train_mods = train_modalities_for(world, target);
    if (mode == AblationMode::SingleModality) train_mods.resize(1);

    AblationResult out;
    Rng dummy(0);
    const HParams hp = default_or_sample_hparams("erm", HParamMode::Default, dummy);
    std::vector<double> aucs;
    for (std::size_t seed = 0; seed < seeds; ++seed) {
        RunConfig rc;
        rc.world = &world;
        rc.datasets = &bundle.datasets;
        rc.train_modalities = train_mods;
        rc.test_modality = target;
        rc.spec = {"erm", hp};
        rc.protocol = Protocol::Oracle; // final checkpoint, single config
        rc.mode = pmode;
        rc.global_seed = global_seed;
        rc.seed_index = seed;
        rc.trial = 0;
        rc.steps = steps;
        rc.linear_detector = mode == AblationMode::SingleModality;
        RunRecord rec = train_run(rc);
        rec.setting = "ablation_" + ablation_mode_name(mode);
        rec.run_id = rec.setting + ":s" + std::to_string(seed);
        rec.selected = true;
        if (rec.final_test_auc.has_value()) aucs.push_back(*rec.final_test_auc);
        out.runs.push_back(std::move(rec));
    }
    ReportRow row;
    row.setting = "ablation_" + ablation_mode_name(mode);
    row.algorithm = mode == AblationMode::SingleModality ? "linear_erm" : "erm";
    row.protocol = Protocol::Oracle;
    row.test_modality = target;
    row.mean_auc = aucs.empty() ? 0.0 : mean(aucs);
    row.std_auc = aucs.empty() ? 0.0 : population_std(aucs);
    row.n_runs = aucs.size();
    out.rows.push_back(row);
    return out;
}

} // namespace maf
