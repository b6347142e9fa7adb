#pragma once

// Checkpoint format: magic "GDCK", u32 entry count, then per entry:
// u16 name length, UTF-8 name, u8 dtype tag (0 = f32), u8 ndim, ndim x u32
// dims, raw little-endian payload. Round trips are bit-exact.

#include <map>
#include <string>
#include <vector>

#include "gridda/graph.hpp"
#include "gridda/tensor.hpp"

namespace gridda::checkpoint {

void save(const std::string& path, const std::vector<ad::Parameter<float>*>& params);
std::map<std::string, ad::TensorF> load(const std::string& path);

// Assigns entries into params by name. Every param must be present unless its
// name starts with one of optional_prefixes; extra file entries are ignored
// when allow_extra is set (inference ignores training-only "da/" entries).
void assign(const std::vector<ad::Parameter<float>*>& params, const std::map<std::string, ad::TensorF>& entries,
            bool allow_extra, const std::vector<std::string>& optional_prefixes = {});

}  // namespace gridda::checkpoint
