#pragma once

#include <vector>

namespace maf {

// ROC AUC == Mann-Whitney statistic: P(score_pos > score_neg) + 0.5 *
// P(tie), over all (positive, negative) pairs. Computed via average ranks in
// O(n log n); matches exhaustive pair counting exactly because rank sums are
// integer-valued (in halves) and the final quotient has the same numerator
// and denominator.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Exhaustive O(n^2) pair counting. Test oracle; kept in the library so the
// two routes stay independently maintained.
double auc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels);

double mean(const std::vector<double>& v);
double population_std(const std::vector<double>& v);

} // namespace maf
