#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace deidvc::diag {

struct GradCheckRow {
    std::string loss;  // stage1 | stage2 | psg
    std::uint32_t seed = 0;
    double max_err = 0.0;  // worst scale-relative error over checked inputs
    bool pass = false;
};

// Finite-difference checks of the three training losses on micro-batches,
// one row per (loss, seed). Errors are normalized per input by the largest
// gradient component; `tol` is the pass threshold on that scale.
std::vector<GradCheckRow> grad_check_suite(std::uint32_t seed, int n_seeds, double tol);

}  // namespace deidvc::diag
