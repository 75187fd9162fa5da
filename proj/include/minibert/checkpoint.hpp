#pragma once

#include <map>
#include <string>

#include "minibert/params.hpp"
#include "minibert/tensor.hpp"

namespace minibert {

// Checkpoint file layout:
//   minibert-checkpoint v1
//   tensor <name> <rank> <dim0> ... <byte_offset>
//   ...
//   data
//   <raw little-endian float32 payload>
// Offsets are relative to the byte after the "data" newline. Values are
// stored as float32; reading widens back to float64.

void write_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> read_checkpoint(const std::string& path);

void save_checkpoint(const std::string& path, const ParameterStore& params);

// strict: file and store must hold exactly the same names.
// Otherwise the intersection is loaded (shapes must still match), tensors
// only in the file are ignored, and parameters absent from the file keep
// their current values. Returns the names actually loaded.
std::vector<std::string> load_checkpoint(const std::string& path, ParameterStore& params,
                                         bool strict = true);

}  // namespace minibert
