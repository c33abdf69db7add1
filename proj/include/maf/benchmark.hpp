#pragma once

#include "maf/trainer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace maf {

struct SweepConfig {
    std::vector<std::string> algorithms;
    std::size_t trials = 9;
    std::size_t seeds = 3;
    Protocol protocol = Protocol::Oracle;
    PerceptorMode mode = PerceptorMode::Semantic;
    std::size_t steps = 1500;
    std::size_t eval_cadence = 100;
    std::uint64_t global_seed = 0;
    std::size_t threads = 1;
    // Empty = every modality takes a turn as the held-out target.
    std::vector<std::size_t> test_modalities;

    void validate(const SyntheticWorld& world) const;
};

struct DatasetBundle {
    PerceptorMode mode = PerceptorMode::Semantic;
    std::vector<ModalityDataset> datasets; // indexed by modality
};

DatasetBundle materialize_bundle(const SyntheticWorld& world, PerceptorMode mode);

// Hyperparameters of (algorithm, trial): trial 0 is the Table default, later
// trials are random draws from the search space, shared across seeds.
HParams trial_hparams(const std::string& algorithm, std::size_t trial, std::uint64_t global_seed);

// The full benchmark: every designated held-out modality x algorithm x trial
// x seed. Under LOO each (algorithm, trial, seed, modality) first produces
// one fold run per training modality; the best-scoring trial is then
// retrained on all training modalities and that retrained run is the
// selected one. Runs execute on a worker pool; output order and content are
// independent of the thread count.
std::vector<RunRecord> run_benchmark(const SyntheticWorld& world, const DatasetBundle& bundle,
                                     const SweepConfig& cfg);

// Marks `selected` on the winning run per (algorithm, test modality, seed).
// TM: best designated-checkpoint training-modality validation AUC.
// Oracle: best held-out validation AUC at the final checkpoint.
// LOO: selection happened inside run_benchmark (retrained winners).
void select_models(std::vector<RunRecord>& runs, Protocol protocol);

struct ReportRow {
    std::string setting;
    std::string algorithm; // algorithm name, or DG_mean / MML_mean
    Protocol protocol = Protocol::Oracle;
    std::size_t test_modality = 0;
    double mean_auc = 0.0;
    double std_auc = 0.0; // population convention
    std::size_t n_runs = 0;
};

// Mean +/- population std of final test AUC over seeds of the selected runs,
// one row per (setting, algorithm, protocol, test modality), plus per-family
// average rows. Row order is lexicographic by key.
std::vector<ReportRow> aggregate_report(const std::vector<RunRecord>& runs);

enum class AblationMode { Full, SingleModality, RandomInit };
std::string ablation_mode_name(AblationMode m);

struct AblationResult {
    std::vector<RunRecord> runs;
    std::vector<ReportRow> rows;
};

// Table-style ablation on the isolated pipeline: full uses the standard
// detector on all training modalities; single_modality a linear head on one
// training modality; random_init swaps every perceptor for an unfit random
// projection.
AblationResult run_ablation(const SyntheticWorld& world, AblationMode mode, std::size_t seeds,
                            std::size_t steps, std::uint64_t global_seed);

} // namespace maf
