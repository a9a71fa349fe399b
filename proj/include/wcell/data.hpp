#pragma once

#include "wcell/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace wcell {

/// A grayscale time-lapse: n_frames x height x width 8-bit intensities, row-major.
struct VideoStack {
  Index frames = 0;
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> pixels;
  std::string source;

  std::uint8_t at(Index f, Index y, Index x) const {
    return pixels[static_cast<std::size_t>((f * height + y) * width + x)];
  }
  std::uint8_t& at(Index f, Index y, Index x) { return pixels[static_cast<std::size_t>((f * height + y) * width + x)]; }

  friend bool operator==(const VideoStack& a, const VideoStack& b) {
    return a.frames == b.frames && a.height == b.height && a.width == b.width && a.pixels == b.pixels;
  }
};

/// IF + 2 consecutive frames on the [0, 255] scale: first, IF intermediate targets, last.
struct FrameSample {
  TensorF frames;  ///< [IF + 2, h, w]
  std::size_t video = 0;
  Index start = 0;

  Index intermediate_count() const { return frames.dim(0) - 2; }
  Index height() const { return frames.dim(1); }
  Index width() const { return frames.dim(2); }
  /// Frame j of the window (0 = first, IF + 1 = last) as [h, w].
  TensorF frame(Index j) const;
};

/// Number of stride-1 windows of IF + 2 frames.
Index window_count(Index n_frames, Index intermediate);

/// Slides a window of IF + 2 frames with stride 1. Throws if the video is too short.
std::vector<FrameSample> extract_windows(const VideoStack& video, Index intermediate, std::size_t video_id = 0);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// 70-15-15 rule: validation and test get floor(0.15 N) each, training the remainder.
SplitSizes split_sizes(std::size_t n);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Seeded random permutation of 0..n-1 cut into train/val/test by split_sizes.
SplitIndices split_indices(std::size_t n, std::uint64_t seed);

template <typename T>
struct DatasetSplit {
  std::vector<T> train;
  std::vector<T> val;
  std::vector<T> test;
};

template <typename T>
DatasetSplit<T> split_dataset(const std::vector<T>& samples, std::uint64_t seed) {
  const SplitIndices idx = split_indices(samples.size(), seed);
  DatasetSplit<T> out;
  for (auto i : idx.train) out.train.push_back(samples[i]);
  for (auto i : idx.val) out.val.push_back(samples[i]);
  for (auto i : idx.test) out.test.push_back(samples[i]);
  return out;
}

struct AugmentParams {
  double brightness = 0.0;  ///< additive, as a fraction of the 255 dynamic range
  double contrast = 1.0;    ///< multiplicative about each frame's mean
  bool lr_flip = false;
  bool ud_flip = false;
};

/// Draws brightness in [-0.1, 0.1], contrast in [0.8, 1.2] and two fair-coin flips.
AugmentParams draw_augment(std::mt19937_64& rng);

/// Contrast, then brightness, then flips; identical parameters for every frame. Clamped to [0, 255].
FrameSample augment(const FrameSample& sample, const AugmentParams& params);

/// Knobs of the synthetic fluorescence generator.
struct SynthParams {
  double background = 20.0;
  double noise_gain = 1.0;        ///< shot-noise std = gain * sqrt(intensity)
  double blob_sigma_min = 2.0;
  double blob_sigma_max = 4.0;
  double peak_min = 80.0;
  double peak_max = 180.0;
  double drift_sigma = 0.5;       ///< Brownian centroid step (pixels / frame)
  double velocity_max = 0.0;      ///< per-cell constant velocity magnitude bound (pixels / frame)
  double bleach_rate = 0.002;     ///< intensity *= exp(-rate * t)
  double burst_probability = 0.01;
  double burst_min = 3.0;
  double burst_max = 10.0;
  Index burst_min_frames = 2;
  Index burst_max_frames = 5;
};

/// Deterministic synthetic time-lapses of Gaussian cells over a noisy background.
std::vector<VideoStack> synth_generate(std::size_t n_videos, Index n_frames, Index height, Index width,
                                       Index min_cells, Index max_cells, std::uint64_t seed,
                                       const SynthParams& params = {});

// CVIP stack format.
std::vector<std::uint8_t> encode_stack(const VideoStack& stack);
VideoStack decode_stack(const std::vector<std::uint8_t>& bytes);
void save_stack(const VideoStack& stack, const std::filesystem::path& path);
/// Reads a CVIP file, or a directory of 8-bit PGM frames in lexicographic order.
VideoStack load_stack(const std::filesystem::path& path);

/// Binary (P5) 8-bit PGM.
struct GrayImage {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> pixels;
};
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
VideoStack load_pgm_directory(const std::filesystem::path& dir);

/// All videos under `path`: a CVIP file, a directory of CVIP files, or a PGM directory.
std::vector<VideoStack> load_videos(const std::filesystem::path& path);

/// Windows of every video, tagged with the video index.
std::vector<FrameSample> build_samples(const std::vector<VideoStack>& videos, Index intermediate);

}  // namespace wcell
