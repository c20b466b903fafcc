#pragma once
// Property suites run by `lns selftest`: corrected-loss unbiasedness,
// analytic gradient against finite differences, zero-noise reduction, and
// packed convolution against the dense ±1 convolution on every available ISA.

#include <cstdint>
#include <string>
#include <vector>

namespace lns {

struct SelfCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

std::vector<SelfCheck> run_selftest(std::uint64_t seed = 20240601);

}  // namespace lns
