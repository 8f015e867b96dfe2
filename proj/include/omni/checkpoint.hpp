#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "omni/layers.hpp"
#include "omni/tensor.hpp"

namespace omni {

// Checkpoint container: "OMCK", u32 version=1, string-pair metadata table,
// then a named-parameter table (length-prefixed UTF-8 name + OMTN tensor).
// Map ordering makes serialization deterministic.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::map<std::string, Tensor> params;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    static Checkpoint from_params(const ParamRefs& params);
    // loads values into matching parameters; names listed in
    // allow_missing_prefixes may be absent from the file (fresh layers)
    void apply_to(const ParamRefs& params,
                  const std::vector<std::string>& allow_missing_prefixes = {}) const;
};

// FNV-1a over the file bytes, as 16 hex characters
std::string file_hash(const std::string& path);

}  // namespace omni
