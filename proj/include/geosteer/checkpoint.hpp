#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "geosteer/tensor.hpp"

namespace geosteer {

struct NamedArray {
    std::string name;
    Tensor tensor;
};

// Binary container shared by every module that persists parameters.
// Layout: magic "GEOSTEER1", u32 entry count, then per entry a name
// (u32 length + bytes), rank (u32) and extents (u64 each); after the manifest
// the arrays follow in manifest order as little-endian float64.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

const Tensor& find_array(const std::vector<NamedArray>& arrays, const std::string& name);
bool has_array(const std::vector<NamedArray>& arrays, const std::string& name);

}  // namespace geosteer
