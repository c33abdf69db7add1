#pragma once

#include "maf/linalg.hpp"
#include "maf/rng.hpp"
#include "maf/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace maf {

enum class Split { Train = 0, Val = 1, Test = 2 };
enum class PerceptorMode { Semantic, Isolated, RandomInit };

std::string split_name(Split s);
std::string perceptor_mode_name(PerceptorMode m);
PerceptorMode parse_perceptor_mode(const std::string& s);

// Generative model of the synthetic multimodal world. Every sample of every
// modality is a mix of a modality-invariant essence latent (carries the
// real/fake signal) and a modality-specific style latent (carries none,
// except the deliberate leak below).
struct WorldConfig {
    std::size_t num_modalities = 3;
    std::size_t essence_dim = 8;
    std::size_t style_dim = 24;
    std::size_t raw_dim = 96;
    std::size_t perceptor_dim = 64;
    std::size_t samples_per_modality = 3000;
    double fake_mean_shift = 1.0;         // essence mean shift of the fake class
    double fake_variance_inflation = 1.5; // fake essence stddev multiplier, >= 1
    double style_leak_train = 0.8;        // label->style leak in training modalities
    double style_leak_test = -0.8;        // leak in the designated test modality
    double semantic_essence_gain = 1.0;
    double semantic_style_gain = 2.0;
    double observation_noise = 0.1;
    double perceptor_noise = 0.05;        // semantic essence-coordinate jitter
    bool aligned = true;
    std::size_t test_modality = 2;        // the modality carrying style_leak_test
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    // Field-by-field parse over defaults; unknown keys are rejected by name.
    static WorldConfig from_json(const nlohmann::json& j);
    static WorldConfig load(const std::string& path);
    void save(const std::string& path) const;
};

struct ModalityGeometry {
    Tensor essence_basis;               // raw_dim x essence_dim, orthonormal columns
    Tensor style_basis;                 // raw_dim x style_dim, orthonormal, orthogonal to essence
    std::vector<double> style_mean;     // mu_k
    std::vector<double> leak_dir;       // v_k, unit vector in style space
    double leak_scale = 1.0;            // per-modality multiplier on the leak coefficient
    std::vector<double> semantic_offset; // o_k on the semantic style coordinates
};

// Raw latents and signal for one (modality, index). Everything below is
// reproducible from (config.seed, modality, index) alone.
struct RawSample {
    int label = 0;
    std::vector<double> essence;
    std::vector<double> style;
    std::vector<double> raw;
};

class SyntheticWorld {
  public:
    explicit SyntheticWorld(WorldConfig cfg);

    const WorldConfig& config() const { return cfg_; }
    std::size_t modalities() const { return cfg_.num_modalities; }
    const ModalityGeometry& geometry(std::size_t k) const { return geom_[k]; }

    // Effective leak coefficient of modality k: style_leak_test on the
    // designated test modality, leak_scale[k] * style_leak_train elsewhere.
    double leak_coefficient(std::size_t k) const;

    int label_of(std::size_t modality, std::size_t index) const;
    RawSample sample(std::size_t modality, std::size_t index) const;

    // Cached full raw matrix (n x raw_dim) plus ground-truth latents.
    struct RawBlock {
        Tensor raw;
        Tensor essence;
        Tensor style;
        std::vector<int> labels;
        std::vector<Split> splits;
    };
    const RawBlock& raw_block(std::size_t modality) const;

  private:
    void build_geometry();
    void build_labels_and_splits();

    WorldConfig cfg_;
    std::vector<ModalityGeometry> geom_;
    std::vector<std::vector<int>> labels_;       // per modality
    std::vector<std::vector<Split>> splits_;     // per modality
    mutable std::vector<RawBlock> blocks_;       // lazily filled, deterministic
    mutable std::vector<char> block_ready_;
};

// Stratified 60/20/20 split, deterministic in (labels, seed), independent of
// any prior RNG state.
std::vector<Split> split_dataset(const std::vector<int>& labels, std::uint64_t seed);

// Affine feature map z = M x + offset + noise, with independent per-
// coordinate Gaussian noise. Covers all three perceptor modes.
struct PerceptorMap {
    PerceptorMode mode = PerceptorMode::Semantic;
    std::size_t modality = 0;
    Tensor m;                       // D x raw_dim
    std::vector<double> offset;     // length D
    std::vector<double> noise_std;  // length D; zeros for isolated/random
    std::vector<std::string> warnings;
};

// Semantic perceptor: shared essence coordinates (gain g_eps), style
// coordinates (gain g_s) plus a per-modality offset, Gaussian filler on the
// rest.
PerceptorMap semantic_perceptor(const SyntheticWorld& world, std::size_t modality);

// PCA whitening fit on the modality's train+val raw rows: center, project on
// the leading min(D, rank) principal components, scale each to unit
// variance, zero-pad to D.
PerceptorMap fit_isolated_perceptor(const SyntheticWorld& world, std::size_t modality);

// Fresh Gaussian projection (entries N(0, 1/raw_dim)), no centering, no fit.
PerceptorMap random_init_perceptor(const SyntheticWorld& world, std::size_t modality);

// Apply a perceptor map to one raw sample; semantic noise is drawn from a
// per-(modality, index) stream so re-application reproduces bits.
std::vector<double> apply_perceptor_row(const SyntheticWorld& world, const PerceptorMap& map,
                                        std::size_t index, const double* raw_row);

struct ModalityDataset {
    std::size_t modality = 0;
    PerceptorMode mode = PerceptorMode::Semantic;
    Tensor features; // n x D
    std::vector<int> labels;
    std::vector<Split> splits;
    std::vector<std::vector<std::size_t>> split_rows; // indexed by Split
    Tensor essence;  // ground-truth latents, for diagnostics only
    Tensor style;
    std::vector<std::string> warnings;

    const std::vector<std::size_t>& rows_of(Split s) const {
        return split_rows[static_cast<std::size_t>(s)];
    }
};

ModalityDataset apply_perceptor(PerceptorMode mode, const SyntheticWorld& world,
                                std::size_t modality);

// Gather a row subset into a dense batch.
Tensor gather_rows(const Tensor& features, const std::vector<std::size_t>& rows);
std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<std::size_t>& rows);

// CSV export: header `modality,row,split,label,f0..f{D-1}`.
void export_dataset_csv(const ModalityDataset& ds, const std::string& path);

// Monte-Carlo AUC of the exact likelihood ratio between the two
// class-conditional feature distributions, computed from the known
// generative parameters mapped through the perceptor. Ground-truth
// calibration: no detector should beat it by more than sampling noise.
double bayes_auc_oracle(const SyntheticWorld& world, std::size_t modality, PerceptorMode mode,
                        std::size_t n_mc);

} // namespace maf
