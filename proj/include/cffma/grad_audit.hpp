#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cffma/model.hpp"

namespace cffma {

// One audited rule: the worst relative error between analytic and
// finite-difference gradients, against the tolerance it must beat.
struct AuditEntry {
    std::string name;
    double err = 0.0;
    double tol = 1e-3;

    bool ok() const { return err < tol; }
};

// Every primitive op, probed on small random tensors with kink margins where
// the op has corners (relu, abs, prelu, max pool).
std::vector<AuditEntry> audit_primitives(uint64_t seed);

// Module-level audits. These cross many kinks, so a fixed input can land a
// pre-activation inside the probe reach; attempts re-roll parameters and
// inputs until one configuration checks out. A wrong backward rule fails
// every attempt.
AuditEntry audit_weighted_sum(uint64_t seed);
AuditEntry audit_mscff(uint64_t seed);
AuditEntry audit_rhma(uint64_t seed);
AuditEntry audit_pipeline(const ModelConfig& base, uint64_t seed);

// The full battery in report order: primitives, then modules, then pipeline.
std::vector<AuditEntry> run_grad_audit(const ModelConfig& cfg, uint64_t seed);

}  // namespace cffma
