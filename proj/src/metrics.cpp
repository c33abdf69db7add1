#include "maf/metrics.hpp"

#include "maf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace maf {

namespace {
void validate(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DimensionError("auc: score/label size mismatch");
    std::size_t pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw InputError("auc: labels must be 0/1");
        pos += static_cast<std::size_t>(y);
    }
    if (pos == 0 || pos == labels.size())
        throw MetricError("auc undefined: only one class present");
    for (double s : scores)
        if (std::isnan(s)) throw InputError("auc: NaN score");
}
} // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    validate(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        // 1-based average rank over the tie block [i, j).
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                pos_rank_sum += avg_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const double npos = static_cast<double>(n_pos);
    const double nneg = static_cast<double>(n - n_pos);
    const double u = pos_rank_sum - npos * (npos + 1.0) / 2.0;
    return u / (npos * nneg);
}

double auc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
    validate(scores, labels);
    double numer = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        ++n_pos;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j]) numer += 1.0;
            else if (scores[i] == scores[j]) numer += 0.5;
        }
    }
    for (int y : labels) n_neg += static_cast<std::size_t>(y == 0);
    return numer / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double mean(const std::vector<double>& v) {
    if (v.empty()) throw ContractError("mean of empty vector");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

} // namespace maf
