#pragma once

// Checkpoint container, all integers and values little-endian:
//
//   "HGV1"
//   u32 config length, config text (key = value lines, including `model`)
//   u64 tensor count
//   per tensor: u32 name length, name, u32 rank, u64 dims[rank], f64 values
//
// Tensors are written in model order: parameters, then buffers.

#include "hgvae/model.hpp"

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

namespace hgvae {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Builds an untrained model of the kind named by `config["model"]`.
std::unique_ptr<GenerativeModel> make_model(const KeyValues& config, std::uint64_t seed);

std::string serialize_checkpoint(const GenerativeModel& model);
std::unique_ptr<GenerativeModel> deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const GenerativeModel& model);
std::unique_ptr<GenerativeModel> load_checkpoint(const std::filesystem::path& path);

}  // namespace hgvae
