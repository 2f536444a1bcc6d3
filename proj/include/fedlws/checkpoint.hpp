#pragma once

#include <filesystem>
#include <iosfwd>

#include "fedlws/tensor.hpp"

namespace fedlws {

// Layout (all integers u64 little-endian, payload IEEE-754 binary64 little-endian):
//   magic "FLWSCKP1"
//   group_count
//   per group: name_length, name bytes (UTF-8), tensor_count,
//              per tensor: rank, shape[rank], row-major payload
void write_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace fedlws
