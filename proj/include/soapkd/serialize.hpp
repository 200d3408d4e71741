#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "soapkd/tensor.hpp"

namespace soapkd {

// Checkpoint container: magic, length-prefixed JSON meta block, then raw
// float32 tensor data in meta-declared order. Output bytes are a pure
// function of (meta, tensors); no timestamps.
void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<const Tensorf*>& tensors);

// Reads only the meta block.
nlohmann::json load_checkpoint_meta(const std::string& path);

// Fills pre-shaped tensors, validating count and sizes against the file.
void load_checkpoint_tensors(const std::string& path,
                             const std::vector<Tensorf*>& tensors);

std::uint64_t file_fingerprint(const std::string& path);

}  // namespace soapkd
