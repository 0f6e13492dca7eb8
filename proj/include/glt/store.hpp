#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "glt/embedding.hpp"
#include "glt/encoder.hpp"

namespace glt {

// Checkpoint: "GDFT", u32 version, encoder config, u64 step, tensors in
// declaration order (u32 rows, u32 cols, float32 values), u32 crc32 of all
// preceding bytes. Everything little-endian.
inline constexpr char kCheckpointMagic[4] = {'G', 'D', 'F', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EncoderParams params;
  std::uint64_t step = 0;
};

std::vector<std::uint8_t> serialize_checkpoint(const EncoderParams& params, std::uint64_t step);
/// Throws IntegrityError on a bad magic, version, checksum, or truncated data.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes through a temporary file and renames, so a failed write never
/// leaves a partial file behind. Throws IoError when the path is unwritable.
void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params,
                     std::uint64_t step);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters as they come back from a checkpoint (float32-rounded).
EncoderParams round_to_checkpoint_precision(const EncoderParams& params);

// Index: "LIGT", u32 version, u32 d, u32 n_docs, then per document u32
// page_id, u32 L_d, L_d x d float64 patch rows, d float64 global; u32 crc32
// of all preceding bytes.
inline constexpr char kIndexMagic[4] = {'L', 'I', 'G', 'T'};
inline constexpr std::uint32_t kIndexVersion = 1;
inline constexpr double kIndexNormTolerance = 1e-6;

/// Throws ArgumentError when any vector is not unit-norm, DimensionError on
/// mixed dimensions.
std::vector<std::uint8_t> serialize_index(std::span<const DocumentEmbedding> docs);
std::vector<DocumentEmbedding> deserialize_index(std::span<const std::uint8_t> bytes);

void save_index(const std::filesystem::path& path, std::span<const DocumentEmbedding> docs);
std::vector<DocumentEmbedding> load_index(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace glt
