#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpga/model.hpp"

namespace cpga {

// Checkpoint layout (little-endian):
//   "CPGA" | u32 version | u32 len + UTF-8 JSON metadata | u32 tensor count |
//   per tensor: u16 len + name, u8 ndim, u64 dims..., f32 payload, u32 CRC32(payload) |
//   u32 CRC32 of every preceding byte.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class CheckpointFormatError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class CheckpointChecksumError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class UnknownTensorError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class MissingTensorError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class TensorShapeMismatchError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct CheckpointFile {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<StoredTensor> tensors;

    const StoredTensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes to a temporary sibling and renames it into place.
void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

template <typename T>
std::vector<StoredTensor> export_tensors(const ParameterList<T>& params, const std::string& prefix = "");

/// Copies stored values into params. Every parameter must be present with a
/// matching shape; stored names under prefix that match no parameter are
/// rejected. Names outside prefix are ignored.
template <typename T>
void import_tensors(const ParameterList<T>& params, const CheckpointFile& file, const std::string& prefix = "");

/// Model weights live under "model."; the config under meta["model"].
template <typename T>
CheckpointFile make_model_checkpoint(const CPGANet<T>& model);

template <typename T>
void save_checkpoint(const CPGANet<T>& model, const std::filesystem::path& path);

template <typename T>
CPGANet<T> load_checkpoint(const std::filesystem::path& path);

template <typename T>
CPGANet<T> model_from_checkpoint(const CheckpointFile& file);

/// Loads weights into an already-built model; names and shapes must agree.
template <typename T>
void load_weights(const CPGANet<T>& model, const CheckpointFile& file);

}  // namespace cpga
