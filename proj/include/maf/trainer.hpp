#pragma once

#include "maf/audit.hpp"
#include "maf/detector.hpp"
#include "maf/hparams.hpp"
#include "maf/world.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace maf {

enum class Family { MML, DG };

Family algorithm_family(const std::string& algorithm);
std::string family_name(Family f);

struct AlgorithmSpec {
    std::string name; // one of implemented_algorithms()
    HParams hparams;

    Family family() const { return algorithm_family(name); }
};

struct CheckpointMetrics {
    std::size_t step = 0;
    double tm_val_auc = 0.0;
    std::optional<double> loo_val_auc;    // fold runs only
    std::optional<double> oracle_val_auc; // Oracle protocol only
};

// Full model state of one checkpoint: detector plus the MML fusion
// projection when present.
struct ModelState {
    DetectorParams detector;
    std::optional<Tensor> fusion; // (K_train * D) x D
};

struct RunConfig {
    const SyntheticWorld* world = nullptr;
    const std::vector<ModalityDataset>* datasets = nullptr; // indexed by modality
    std::vector<std::size_t> train_modalities;
    std::size_t test_modality = 0;
    // Fold runs: validate on this training modality instead of testing.
    std::optional<std::size_t> loo_val_modality;
    AlgorithmSpec spec;
    Protocol protocol = Protocol::Oracle;
    PerceptorMode mode = PerceptorMode::Semantic;
    std::uint64_t global_seed = 0;
    std::size_t seed_index = 0;
    std::size_t trial = 0;
    std::size_t steps = 1500;
    std::size_t eval_cadence = 100;
    bool evaluate_test = true;       // off for fold runs
    bool linear_detector = false;    // head-only variant (ablation)
};

struct RunRecord {
    std::string run_id;
    std::string setting; // weak | strong | random_init
    AlgorithmSpec spec;
    Protocol protocol = Protocol::Oracle;
    std::size_t seed_index = 0;
    std::size_t trial = 0;
    std::size_t test_modality = 0;
    std::vector<CheckpointMetrics> checkpoints;
    std::optional<double> final_test_auc;
    bool selected = false;
    std::int64_t wall_ms = 0;
    bool failed = false;
    std::string fail_reason;
    std::vector<std::string> flags;
    AuditCounters audit;
    // Designated-checkpoint model, kept for the feature-space diagnostics.
    ModelState model;
};

// One full pass of the training/inference loop: per step one batch per
// training modality, loss assembly per algorithm, optimizer update (Adam for
// the DG family, SGD+momentum for MML), metric checkpoints every
// eval_cadence steps, final designated-checkpoint evaluation on the held-out
// modality's test split.
RunRecord train_run(const RunConfig& cfg);

// Checkpoint the designated index per protocol: Oracle -> final; TM and the
// LOO retrain -> best mean training-modality validation AUC; LOO folds ->
// best pseudo-held-out validation AUC.
std::size_t designated_checkpoint(const std::vector<CheckpointMetrics>& cps, Protocol protocol,
                                  bool fold_run);

// Scores on an arbitrary feature batch with the run's inference path
// (replicate-and-fuse for MML, EMA for erm++).
std::vector<double> model_scores(const ModelState& m, const AlgorithmSpec& spec,
                                 const Tensor& features);

// Regularizer building blocks, exposed for the gradient-check and unit
// suites. All return scalar tape nodes.
NodeId irm_penalty_node(Tape& t, NodeId logits, const std::vector<int>& labels);
NodeId ib_penalty_node(Tape& t, NodeId features);
NodeId risk_variance_node(Tape& t, const std::vector<NodeId>& risks);
NodeId quantile_risk_node(Tape& t, const std::vector<NodeId>& risks, double q);

// Empirical quantile with linear interpolation (plain values).
double quantile_interpolated(std::vector<double> values, double q);

// OGM gradient multipliers from per-modality contribution scores.
std::vector<double> ogm_multipliers(const std::vector<double>& scores, double alpha);

// Mixup combination of two equally-shaped batches.
Tensor mixup_combine(const Tensor& a, const Tensor& b, double lambda);

// Block-averaged init for the fusion projection: fusing identical rows is
// the identity at step 0.
Tensor fusion_init(std::size_t parts, std::size_t dim);

} // namespace maf
