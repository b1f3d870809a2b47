#ifndef SBDOT_ENSEMBLE_HPP
#define SBDOT_ENSEMBLE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "sbdot/core.hpp"

namespace sbdot {

/// Ordered collection of posterior sample fields with provenance.
struct SampleEnsemble {
    std::vector<Field> samples;
    std::string method;            // ucos | ucos-reg | dps | gaussian
    std::uint64_t master_seed = 0;
    std::string config_digest;     // hex digest of the originating run config
    std::vector<std::string> failures;  // diverged chains, if any

    void check_nonempty() const {
        if (samples.empty()) throw Error("ensemble is empty");
        for (const auto& s : samples) check_same_shape(samples.front(), s, "ensemble");
    }
};

}  // namespace sbdot

#endif
