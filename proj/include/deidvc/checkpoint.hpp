#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "deidvc/tensor.hpp"

namespace deidvc::ckpt {

inline constexpr std::uint32_t kVersion = 1;

// Binary model container shared by all model kinds; the kind lives in the
// metadata so freeze checks can diff raw bytes.
struct Checkpoint {
    nlohmann::json metadata;
    std::vector<std::pair<std::string, numcore::Tensor>> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace deidvc::ckpt
