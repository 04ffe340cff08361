#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ctxseg/tensor/tensor.hpp"

namespace ctxseg {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using ParameterList = std::vector<NamedTensor>;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat checkpoint layout:
//   u64 little-endian header length N
//   N bytes of JSON: {"<name>": {"dtype": "F64", "shape": [...], "data_offsets": [begin, end]}, ...}
//   raw little-endian float64 payload; offsets are relative to the payload start
// Tensors are written in list order. Names must be unique.
std::string serialize_checkpoint(const ParameterList& tensors);
std::map<std::string, Tensor> deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterList& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into existing tensors (shapes must match).
void assign_from_checkpoint(const ParameterList& targets, const std::map<std::string, Tensor>& values);

// FNV-1a over the serialized bytes.
std::uint64_t checkpoint_checksum(const ParameterList& tensors);

}  // namespace ctxseg
