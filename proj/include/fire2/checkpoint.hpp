#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fire2/autograd.hpp"
#include "fire2/tensor.hpp"

namespace fire2::checkpoint {

/// Everything needed to resume a run bit-for-bit: model + optimizer state,
/// the epoch-local attribute classifier, every RNG stream, and the exact
/// config echo. Host-endian binary; not meant to travel between machines of
/// different endianness.
struct Bundle {
    uint32_t version = 1;
    uint64_t config_hash = 0;
    std::string config_json;
    int epoch = 0;

    struct ParamState {
        std::string name;
        Tensor value;
        Tensor adam_m;
        Tensor adam_v;
        int64_t adam_step = 0;

        static ParamState from(const Parameter& p);
        void restore(Parameter& p) const;
    };
    std::vector<ParamState> params;       // backbone + identity classifier
    std::vector<ParamState> attr_params;  // attribute classifier (epoch-local)
    double attr_tau = 0.0;
    double attr_epsilon = 0.0;
    std::map<std::string, std::string> rng_states;
};

void save(const std::string& path, const Bundle& bundle);
Bundle load(const std::string& path);  // throws RuntimeAbort on malformed files

}  // namespace fire2::checkpoint
