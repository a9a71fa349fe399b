#pragma once

#include "wcell/losses.hpp"
#include "wcell/model.hpp"
#include "wcell/optimizer.hpp"
#include "wcell/records.hpp"

#include <filesystem>

namespace wcell {

namespace checkpoint_flags {
inline constexpr std::uint16_t kOptimizerState = 1u << 0;
inline constexpr std::uint16_t kNearestUpsample = 1u << 1;
inline constexpr std::uint16_t kPointwiseHead = 1u << 2;
}  // namespace checkpoint_flags

/// Serializes every parameter and buffer (BN running statistics), plus Adam state if given.
RecordFile make_checkpoint(const WCellNet<float>& net, const AdamState<float>* adam = nullptr);
WCellNet<float> restore_checkpoint(const RecordFile& file, AdamState<float>* adam = nullptr);

void save_checkpoint(const WCellNet<float>& net, const std::filesystem::path& path,
                     const AdamState<float>* adam = nullptr);
/// Throws FormatError on bad magic/version, truncation, unknown or missing names.
WCellNet<float> load_checkpoint(const std::filesystem::path& path, AdamState<float>* adam = nullptr);

/// Reads a VGG16 conv1_1..conv5_3 weight file in the record format.
FeatureExtractor<float> load_vgg16_extractor(const std::filesystem::path& path);

}  // namespace wcell
