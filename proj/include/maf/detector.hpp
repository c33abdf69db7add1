#pragma once

#include "maf/tape.hpp"
#include "maf/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace maf {

struct Dense {
    Tensor w; // in x out
    Tensor b; // 1 x out
};

struct DetectorWeights {
    std::vector<Dense> layers; // relu MLP trunk; empty for the linear variant
    Dense head;                // D x 2
};

// Shared detector: four-layer symmetric-bottleneck relu MLP (D -> D/2 -> D/4
// -> D/2 -> D) plus a linear two-class head. The fourth layer's
// post-activation output is the forensic feature vector handed to the head
// and to the feature-space diagnostics. An optional EMA shadow mirrors every
// tensor.
struct DetectorParams {
    std::size_t input_dim = 0;
    DetectorWeights live;
    std::optional<DetectorWeights> ema;

    bool linear() const { return live.layers.empty(); }
};

// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases,
// bit-reproducible in (d, seed). d must be divisible by 4 and >= 8.
DetectorParams init_detector(std::size_t d, std::uint64_t seed);

// Head-only variant: logits = x * Wh + bh, forensic features = input.
DetectorParams init_linear_detector(std::size_t d, std::uint64_t seed);

struct ForwardResult {
    Tensor logits;              // n x 2
    Tensor forensic;            // n x D (post-relu layer 4; input if linear)
    std::vector<Tensor> hidden; // post-relu activations, one per trunk layer
};

ForwardResult detector_forward(const DetectorWeights& w, const Tensor& batch);

// Hidden layer activations indexed 1..4 for the analysis module; layer 4 is
// the forensic space default.
Tensor detector_layer_output(const DetectorWeights& w, const Tensor& batch, int layer);

// P(fake) = softmax(logits)[1] per row. Uses the EMA shadow when
// `use_ema` (the ERM++ evaluation path) and a shadow exists.
std::vector<double> predict_scores(const DetectorParams& p, const Tensor& batch, bool use_ema);

// shadow <- decay * shadow + (1 - decay) * live; the first call initializes
// the shadow as a copy of the live weights. decay must lie in [0, 1).
void ema_update(DetectorParams& p, double decay);

// Tape plumbing: parameters are placed on the tape once so gradients
// accumulate across several forward passes (one per modality batch).
struct TapedDetector {
    std::vector<NodeId> layer_w;
    std::vector<NodeId> layer_b;
    NodeId head_w = -1;
    NodeId head_b = -1;

    std::vector<NodeId> all() const {
        std::vector<NodeId> ids;
        for (std::size_t i = 0; i < layer_w.size(); ++i) {
            ids.push_back(layer_w[i]);
            ids.push_back(layer_b[i]);
        }
        ids.push_back(head_w);
        ids.push_back(head_b);
        return ids;
    }
};

TapedDetector put_on_tape(Tape& t, const DetectorWeights& w);

struct ForwardNodes {
    NodeId logits = -1;
    NodeId forensic = -1;
    std::vector<NodeId> hidden;
};

ForwardNodes forward_on_tape(Tape& t, const TapedDetector& d, NodeId batch);

// Checkpoint file: one JSON header line, then a flat little-endian f64
// stream in the header's layer order. Byte-exact round-trip.
void save_checkpoint(const DetectorParams& p, const std::string& path);
DetectorParams load_checkpoint(const std::string& path);

} // namespace maf
