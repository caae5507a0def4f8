#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "parkcast/tensor.hpp"

namespace parkcast {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct Checkpoint {
    nlohmann::json meta;
    std::vector<NamedTensor> tensors;

    const Tensor* find(const std::string& name) const;
};

/// Writes the versioned binary container (fixed little-endian layout) plus a
/// `<path>.manifest.json` sidecar listing names/shapes and the metadata.
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& meta);

Checkpoint load_checkpoint(const std::string& path);

} // namespace parkcast
