#pragma once

#include "maf/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace maf {

// Hyperparameter search spaces, one table row per entry. Distributions:
// logUniform(a,b) = 10^U(a,b), pow2Uniform(a,b) = 2^U(a,b), uniform(a,b),
// or a finite choice set. Integer entries are rounded after sampling.
struct HParamEntry {
    enum class Dist { LogUniform, Uniform, Pow2Uniform, Choice };
    std::string name;
    double default_value = 0.0;
    Dist dist = Dist::Uniform;
    double lo = 0.0, hi = 0.0;
    std::vector<double> choices;
    bool integer = false;
};

using HParams = std::map<std::string, double>;

// Full per-algorithm space, family-common entries included. Spaces exist for
// a few plug-in algorithms that have no training implementation yet; the
// trainer rejects those by name.
const std::vector<HParamEntry>& hparam_space(const std::string& algorithm);

std::vector<std::string> implemented_algorithms();
bool algorithm_implemented(const std::string& name);
bool algorithm_has_space(const std::string& name);

enum class HParamMode { Default, Sample };

HParams default_or_sample_hparams(const std::string& algorithm, HParamMode mode, Rng& rng);

double sample_entry(const HParamEntry& e, Rng& rng);

} // namespace maf
