#include "maf/hparams.hpp"

#include "maf/errors.hpp"

#include <cmath>
#include <unordered_map>

namespace maf {

namespace {

using Dist = HParamEntry::Dist;

HParamEntry log_u(std::string name, double deflt, double a, double b, bool integer = false) {
    return {std::move(name), deflt, Dist::LogUniform, a, b, {}, integer};
}
HParamEntry uni(std::string name, double deflt, double a, double b, bool integer = false) {
    return {std::move(name), deflt, Dist::Uniform, a, b, {}, integer};
}
HParamEntry pow2(std::string name, double deflt, double a, double b, bool integer = false) {
    return {std::move(name), deflt, Dist::Pow2Uniform, a, b, {}, integer};
}
HParamEntry choice(std::string name, double deflt, std::vector<double> opts) {
    return {std::move(name), deflt, Dist::Choice, 0, 0, std::move(opts), false};
}

std::vector<HParamEntry> mml_common() {
    return {
        pow2("batch_size", 32, 3.0, 5.5, true),
        log_u("lr", 0.001, -4.0, -2.0),
        uni("momentum", 0.9, 0.85, 0.95),
        log_u("weight_decay", 0.0001, -6.0, -2.0),
        uni("patience", 70, 60.0, 80.0, true),
    };
}

std::vector<HParamEntry> dg_common() {
    return {
        pow2("batch_size", 32, 3.0, 5.5, true),
        log_u("lr", 0.00005, -5.0, -3.5),
        log_u("weight_decay", 0.0, -6.0, -2.0),
    };
}

std::vector<HParamEntry> build_space(const std::string& algo) {
    if (algo == "concat") return mml_common();
    if (algo == "ogm") {
        auto v = mml_common();
        v.push_back(uni("alpha", 0.1, 0.1, 0.3));
        return v;
    }
    if (algo == "erm") return dg_common();
    if (algo == "erm++") return dg_common(); // its lr row matches the DG-wide one
    if (algo == "irm" || algo == "ib_erm") {
        auto v = dg_common();
        v.push_back(log_u("lambda", 100.0, -1.0, 5.0));
        v.push_back(log_u("penalty_anneal_iters", 500.0, 0.0, 4.0, true));
        return v;
    }
    if (algo == "mixup") {
        auto v = dg_common();
        v.push_back(log_u("alpha", 0.2, -1.0, 1.0));
        return v;
    }
    if (algo == "cdann") {
        auto v = dg_common();
        v.push_back(log_u("lambda", 1.0, -2.0, -2.0));
        v.push_back(log_u("disc_weight_decay", 0.0, -6.0, -2.0));
        v.push_back(pow2("disc_steps", 1, 0.0, 3.0, true));
        v.push_back(log_u("grad_penalty", 0.0, -2.0, 1.0));
        v.push_back(choice("adam_beta1", 0.5, {0.0, 0.5}));
        return v;
    }
    if (algo == "eqrm") {
        auto v = dg_common();
        for (auto& e : v)
            if (e.name == "lr") e = log_u("lr", 0.000001, -7.0, -5.0);
        v.push_back(uni("quantile", 0.75, 0.5, 0.99));
        v.push_back(log_u("burnin_iters", 2500.0, 2.5, 3.5, true));
        return v;
    }
    if (algo == "urm") {
        auto v = dg_common();
        v.push_back(uni("lambda", 0.1, 0.0, 0.2));
        return v;
    }
    // Plug-in spaces without a trainer implementation.
    if (algo == "sagnet") {
        auto v = dg_common();
        v.push_back(log_u("adversary_weight", 0.1, -2.0, 1.0));
        return v;
    }
    if (algo == "condcad") {
        auto v = dg_common();
        v.push_back(choice("lambda", 0.1, {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0}));
        v.push_back(choice("temperature", 0.1, {0.05, 0.1}));
        return v;
    }
    throw ConfigError("unknown algorithm '" + algo + "'");
}

} // namespace

const std::vector<HParamEntry>& hparam_space(const std::string& algorithm) {
    static std::unordered_map<std::string, std::vector<HParamEntry>> cache;
    auto it = cache.find(algorithm);
    if (it == cache.end()) it = cache.emplace(algorithm, build_space(algorithm)).first;
    return it->second;
}

std::vector<std::string> implemented_algorithms() {
    return {"concat", "ogm", "erm", "irm", "mixup", "ib_erm", "eqrm", "erm++", "urm", "cdann"};
}

bool algorithm_implemented(const std::string& name) {
    for (const auto& a : implemented_algorithms())
        if (a == name) return true;
    return false;
}

bool algorithm_has_space(const std::string& name) {
    try {
        hparam_space(name);
        return true;
    } catch (const ConfigError&) {
        return false;
    }
}

double sample_entry(const HParamEntry& e, Rng& rng) {
    double v = 0.0;
    switch (e.dist) {
        case Dist::LogUniform: v = std::pow(10.0, rng.uniform(e.lo, e.hi)); break;
        case Dist::Uniform: v = rng.uniform(e.lo, e.hi); break;
        case Dist::Pow2Uniform: v = std::pow(2.0, rng.uniform(e.lo, e.hi)); break;
        case Dist::Choice: v = e.choices[rng.below(e.choices.size())]; break;
    }
    if (e.integer) v = std::max(1.0, std::round(v));
    return v;
}

HParams default_or_sample_hparams(const std::string& algorithm, HParamMode mode, Rng& rng) {
    if (!algorithm_has_space(algorithm))
        throw ConfigError("unknown algorithm '" + algorithm + "'");
    HParams out;
    for (const HParamEntry& e : hparam_space(algorithm))
        out[e.name] = mode == HParamMode::Default ? e.default_value : sample_entry(e, rng);
    return out;
}

} // namespace maf
