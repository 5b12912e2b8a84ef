#pragma once

#include "comac/config.hpp"
#include "comac/fusion.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace comac::selftest {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

/// CE, both contrastive forms and the combined loss on random small networks;
/// passes when every max relative error is below tol.
CheckResult check_gradients(int n_instances, std::uint64_t seed, double tol = 1e-4);

/// Scalar-loop re-implementation of raw/augmented weighting and cross-modal
/// fusion for one point set. Written against plain vectors so it shares no
/// code with the fusion module.
struct OracleInput {
    // [modality][point][class or feature]
    std::vector<std::vector<std::vector<double>>> p, p_aug, z, z_aug;
    // [modality][class][feature]
    std::vector<std::vector<std::vector<double>>> centroids;
};
struct OracleOutput {
    std::vector<std::vector<double>> p_xm;
    std::vector<int> labels;
};
OracleOutput fusion_oracle(const OracleInput& in);

/// Random instances (N <= 32, Nc <= 5) compared against the library pipeline.
CheckResult check_fusion_oracle(int n_instances, std::uint64_t seed, double tol = 1e-10);

/// Randomized enqueue/restore operations on one queue with restore_prob 0.5.
/// Checks capacity, FIFO tags, unit norms and that the restore count lies in
/// [lo, hi].
CheckResult check_queue(int n_ops, std::uint64_t seed, int lo = 4836, int hi = 5164);

/// Frozen student, n EMA steps at momentum m: teacher must equal the closed form.
CheckResult check_ema(int n_steps, double momentum, double tol = 1e-9);

/// Runs the first half of cfg's first seed stream from a fresh state and
/// compares its predictions with the first half of a full run.
CheckResult check_one_pass(const config::ExperimentConfig& cfg);

/// Runs cfg twice in-process and compares the summary CSV text.
CheckResult check_determinism(const config::ExperimentConfig& cfg);

/// Small world and short segments for fast end-to-end checks.
config::ExperimentConfig tiny_config();

/// Runs every check, printing one line each. Returns true if all passed.
bool run_all(std::ostream& os);

}  // namespace comac::selftest
