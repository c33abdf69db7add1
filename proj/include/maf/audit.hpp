#pragma once

#include "maf/errors.hpp"
#include "maf/world.hpp"

#include <cstddef>
#include <string>

namespace maf {

enum class Protocol { TM, LOO, Oracle };

std::string protocol_name(Protocol p);
Protocol parse_protocol(const std::string& s);

enum class AccessIntent { TrainBatch, ValMetric, TestEval, PerceptorFit };

struct AuditCounters {
    std::size_t total_reads = 0;
    std::size_t heldout_test_reads = 0; // only legal in the final-eval phase
    std::size_t heldout_val_reads = 0;  // only legal under Oracle
    std::size_t violations = 0;         // attempted illegal reads; each one throws
};

// Per-run data-access gate. Every dataset read in the training and
// evaluation path is announced here; an illegal read throws immediately, so
// a completed run proves its counters clean.
class Auditor {
  public:
    Auditor(Protocol protocol, std::size_t heldout_modality)
        : protocol_(protocol), heldout_(heldout_modality) {}

    void enter_final_eval() { final_eval_ = true; }
    bool in_final_eval() const { return final_eval_; }

    void record(std::size_t modality, Split split, AccessIntent intent) {
        ++counters_.total_reads;
        if (modality != heldout_) return;

        if (split == Split::Test) {
            if (intent != AccessIntent::TestEval || !final_eval_) {
                ++counters_.violations;
                throw AuditError("read of held-out modality " + std::to_string(modality) +
                                 " test split before final evaluation");
            }
            ++counters_.heldout_test_reads;
            return;
        }
        switch (intent) {
            case AccessIntent::PerceptorFit:
                // Unlabeled raw access for the isolated-perceptor fit.
                return;
            case AccessIntent::ValMetric:
                if (protocol_ == Protocol::Oracle && split == Split::Val) {
                    ++counters_.heldout_val_reads;
                    return;
                }
                ++counters_.violations;
                throw AuditError("held-out validation read under " + protocol_name(protocol_));
            case AccessIntent::TrainBatch:
                ++counters_.violations;
                throw AuditError("held-out training read");
            case AccessIntent::TestEval:
                ++counters_.violations;
                throw AuditError("test-eval intent on a non-test split");
        }
    }

    const AuditCounters& counters() const { return counters_; }
    Protocol protocol() const { return protocol_; }
    std::size_t heldout() const { return heldout_; }

  private:
    Protocol protocol_;
    std::size_t heldout_;
    bool final_eval_ = false;
    AuditCounters counters_;
};

} // namespace maf
