#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nodebench/tensor.hpp"

namespace nodebench {

class Model;

/// Versioned little-endian binary container: string metadata plus named
/// tensors stored as shape + raw IEEE-754 doubles.
///
///   "NBCT" | u32 version | u32 n_meta | n_meta × (str key, str value)
///   | u32 n_tensors | n_tensors × (str name, u32 rank, rank × u64, f64 × numel)
///
/// where str is u32 length followed by bytes.
struct Container {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);

/// Saves weights, the model configuration and the generating run config.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& run_config = {});
/// Rebuilds the model from its stored configuration and copies the weights.
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path,
                                       std::string* run_config = nullptr);

}  // namespace nodebench
