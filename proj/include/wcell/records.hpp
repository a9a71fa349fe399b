#pragma once

#include "wcell/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wcell {

/// A named f32 tensor as stored in checkpoint and weight files.
struct NamedTensor {
  std::string name;
  TensorF tensor;
};

/// Header-level contents of a "WCNC" file.
struct RecordFile {
  std::uint16_t version = 1;
  std::uint16_t flags = 0;
  /// k, IF, B, h, w. All zero for plain weight files.
  std::uint32_t config[5] = {0, 0, 0, 0, 0};
  std::vector<NamedTensor> records;
};

inline constexpr char kCheckpointMagic[4] = {'W', 'C', 'N', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_record_file(const RecordFile& file);
RecordFile decode_record_file(const std::vector<std::uint8_t>& bytes);

void write_record_file(const std::filesystem::path& path, const RecordFile& file);
RecordFile read_record_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace wcell
