#include "maf/detector.hpp"

#include "maf/errors.hpp"
#include "maf/rng.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace maf {

namespace {

Dense glorot_dense(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Dense d{Tensor(fan_in, fan_out), Tensor(1, fan_out)};
    for (std::size_t i = 0; i < d.w.size(); ++i) d.w[i] = rng.uniform(-bound, bound);
    return d;
}

void check_dim(std::size_t d) {
    if (d < 8 || d % 4 != 0)
        throw ConfigError("detector input dim must be >= 8 and divisible by 4, got " +
                          std::to_string(d));
}

} // namespace

DetectorParams init_detector(std::size_t d, std::uint64_t seed) {
    check_dim(d);
    Rng rng(seed_from({0x6465746563746f72ULL, seed, d}));
    DetectorParams p;
    p.input_dim = d;
    const std::size_t dims[5] = {d, d / 2, d / 4, d / 2, d};
    for (int l = 0; l < 4; ++l)
        p.live.layers.push_back(glorot_dense(rng, dims[l], dims[l + 1]));
    p.live.head = glorot_dense(rng, d, 2);
    return p;
}

DetectorParams init_linear_detector(std::size_t d, std::uint64_t seed) {
    check_dim(d);
    Rng rng(seed_from({0x6c696e6561726465ULL, seed, d}));
    DetectorParams p;
    p.input_dim = d;
    p.live.head = glorot_dense(rng, d, 2);
    return p;
}

ForwardResult detector_forward(const DetectorWeights& w, const Tensor& batch) {
    ForwardResult out;
    Tensor h = batch;
    for (const Dense& layer : w.layers) {
        h = relu_plain(add_rowvec_plain(matmul_plain(h, layer.w), layer.b));
        out.hidden.push_back(h);
    }
    out.forensic = h;
    out.logits = add_rowvec_plain(matmul_plain(h, w.head.w), w.head.b);
    return out;
}

Tensor detector_layer_output(const DetectorWeights& w, const Tensor& batch, int layer) {
    if (w.layers.empty()) return batch;
    if (layer < 1 || static_cast<std::size_t>(layer) > w.layers.size())
        throw ConfigError("layer index out of range");
    Tensor h = batch;
    for (int l = 0; l < layer; ++l) {
        const Dense& d = w.layers[static_cast<std::size_t>(l)];
        h = relu_plain(add_rowvec_plain(matmul_plain(h, d.w), d.b));
    }
    return h;
}

std::vector<double> predict_scores(const DetectorParams& p, const Tensor& batch, bool use_ema) {
    const DetectorWeights& w = (use_ema && p.ema.has_value()) ? *p.ema : p.live;
    const Tensor logits = detector_forward(w, batch).logits;
    std::vector<double> scores(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        // P(class 1) = sigmoid(l1 - l0), branch keeps exp() argument negative.
        const double z = logits.at(i, 1) - logits.at(i, 0);
        scores[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    return scores;
}

void ema_update(DetectorParams& p, double decay) {
    if (decay < 0.0 || decay >= 1.0)
        throw ConfigError("ema decay must lie in [0,1), got " + std::to_string(decay));
    if (!p.ema.has_value()) {
        p.ema = p.live;
        return;
    }
    auto blend = [decay](Tensor& shadow, const Tensor& live) {
        for (std::size_t i = 0; i < shadow.size(); ++i)
            shadow[i] = decay * shadow[i] + (1.0 - decay) * live[i];
    };
    for (std::size_t l = 0; l < p.live.layers.size(); ++l) {
        blend(p.ema->layers[l].w, p.live.layers[l].w);
        blend(p.ema->layers[l].b, p.live.layers[l].b);
    }
    blend(p.ema->head.w, p.live.head.w);
    blend(p.ema->head.b, p.live.head.b);
}

TapedDetector put_on_tape(Tape& t, const DetectorWeights& w) {
    TapedDetector d;
    for (const Dense& layer : w.layers) {
        d.layer_w.push_back(t.leaf(layer.w));
        d.layer_b.push_back(t.leaf(layer.b));
    }
    d.head_w = t.leaf(w.head.w);
    d.head_b = t.leaf(w.head.b);
    return d;
}

ForwardNodes forward_on_tape(Tape& t, const TapedDetector& d, NodeId batch) {
    ForwardNodes out;
    NodeId h = batch;
    for (std::size_t l = 0; l < d.layer_w.size(); ++l) {
        h = relu(t, add_rowvec(t, matmul(t, h, d.layer_w[l]), d.layer_b[l]));
        out.hidden.push_back(h);
    }
    out.forensic = h;
    out.logits = add_rowvec(t, matmul(t, h, d.head_w), d.head_b);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

namespace {

void write_le_f64(std::ostream& os, const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = t[i];
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        if constexpr (std::endian::native == std::endian::big) {
            bits = __builtin_bswap64(bits);
        }
        char buf[8];
        std::memcpy(buf, &bits, 8);
        os.write(buf, 8);
    }
}

void read_le_f64(std::istream& is, Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        char buf[8];
        is.read(buf, 8);
        if (!is) throw IoError("truncated checkpoint payload");
        std::uint64_t bits;
        std::memcpy(&bits, buf, 8);
        if constexpr (std::endian::native == std::endian::big) {
            bits = __builtin_bswap64(bits);
        }
        std::memcpy(&t[i], &bits, 8);
    }
}

std::vector<const Tensor*> tensor_order(const DetectorWeights& w) {
    std::vector<const Tensor*> order;
    for (const Dense& l : w.layers) {
        order.push_back(&l.w);
        order.push_back(&l.b);
    }
    order.push_back(&w.head.w);
    order.push_back(&w.head.b);
    return order;
}

std::vector<Tensor*> tensor_order(DetectorWeights& w) {
    std::vector<Tensor*> order;
    for (Dense& l : w.layers) {
        order.push_back(&l.w);
        order.push_back(&l.b);
    }
    order.push_back(&w.head.w);
    order.push_back(&w.head.b);
    return order;
}

} // namespace

void save_checkpoint(const DetectorParams& p, const std::string& path) {
    nlohmann::ordered_json header;
    header["dims"] = nlohmann::json::array();
    header["dims"].push_back(p.input_dim);
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < p.live.layers.size(); ++l) {
        layers.push_back("W" + std::to_string(l + 1));
        layers.push_back("b" + std::to_string(l + 1));
    }
    layers.push_back("Wh");
    layers.push_back("bh");
    header["layers"] = layers;
    header["linear"] = p.linear();
    header["has_ema"] = p.ema.has_value();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << header.dump() << "\n";
    for (const Tensor* t : tensor_order(p.live)) write_le_f64(os, *t);
    if (p.ema.has_value())
        for (const Tensor* t : tensor_order(*p.ema)) write_le_f64(os, *t);
    if (!os) throw IoError("write failure on " + path);
}

DetectorParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    std::string header_line;
    if (!std::getline(is, header_line)) throw IoError("missing checkpoint header in " + path);
    nlohmann::json header = nlohmann::json::parse(header_line);

    const std::size_t d = header.at("dims").at(0).get<std::size_t>();
    const bool linear = header.at("linear").get<bool>();
    const bool has_ema = header.at("has_ema").get<bool>();

    DetectorParams p = linear ? init_linear_detector(d, 0) : init_detector(d, 0);
    for (Tensor* t : tensor_order(p.live)) read_le_f64(is, *t);
    if (has_ema) {
        p.ema = p.live;
        for (Tensor* t : tensor_order(*p.ema)) read_le_f64(is, *t);
    }
    return p;
}

} // namespace maf
