#include "wcell/data.hpp"

#include "wcell/records.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace wcell {

TensorF FrameSample::frame(Index j) const {
  const Index plane = height() * width();
  std::vector<float> data(frames.data() + j * plane, frames.data() + (j + 1) * plane);
  return TensorF({height(), width()}, std::move(data));
}

Index window_count(Index n_frames, Index intermediate) {
  const Index window = intermediate + 2;
  return n_frames >= window ? n_frames - window + 1 : 0;
}

std::vector<FrameSample> extract_windows(const VideoStack& video, Index intermediate, std::size_t video_id) {
  if (intermediate < 1) throw std::invalid_argument("IF must be >= 1");
  const Index window = intermediate + 2;
  if (video.frames < window) {
    throw std::invalid_argument("video '" + video.source + "' has " + std::to_string(video.frames) +
                                " frames, fewer than the window of " + std::to_string(window));
  }
  const Index plane = video.height * video.width;
  std::vector<FrameSample> out;
  out.reserve(static_cast<std::size_t>(window_count(video.frames, intermediate)));
  for (Index start = 0; start + window <= video.frames; ++start) {
    FrameSample s;
    s.video = video_id;
    s.start = start;
    std::vector<float> data(static_cast<std::size_t>(window * plane));
    const std::uint8_t* src = video.pixels.data() + start * plane;
    std::transform(src, src + window * plane, data.begin(), [](std::uint8_t v) { return static_cast<float>(v); });
    s.frames = TensorF({window, video.height, video.width}, std::move(data));
    out.push_back(std::move(s));
  }
  return out;
}

SplitSizes split_sizes(std::size_t n) {
  SplitSizes s;
  s.val = n * 15 / 100;
  s.test = s.val;
  s.train = n - s.val - s.test;
  return s;
}

SplitIndices split_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const SplitSizes sizes = split_sizes(n);
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes.train));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes.train),
                 order.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.val));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.val), order.end());
  return out;
}

AugmentParams draw_augment(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> brightness(-0.1, 0.1);
  std::uniform_real_distribution<double> contrast(0.8, 1.2);
  std::bernoulli_distribution coin(0.5);
  AugmentParams p;
  p.brightness = brightness(rng);
  p.contrast = contrast(rng);
  p.lr_flip = coin(rng);
  p.ud_flip = coin(rng);
  return p;
}

FrameSample augment(const FrameSample& sample, const AugmentParams& params) {
  const Index n = sample.frames.dim(0), h = sample.height(), w = sample.width();
  const Index plane = h * w;
  FrameSample out = sample;
  const bool photometric = params.contrast != 1.0 || params.brightness != 0.0;
  for (Index f = 0; f < n; ++f) {
    const float* src = sample.frames.data() + f * plane;
    float* dst = out.frames.data() + f * plane;
    double mean = 0.0;
    if (params.contrast != 1.0) {
      for (Index i = 0; i < plane; ++i) mean += src[i];
      mean /= static_cast<double>(plane);
    }
    for (Index y = 0; y < h; ++y) {
      const Index sy = params.ud_flip ? h - 1 - y : y;
      for (Index x = 0; x < w; ++x) {
        const Index sx = params.lr_flip ? w - 1 - x : x;
        double v = src[sy * w + sx];
        if (photometric) {
          v = (v - mean) * params.contrast + mean + params.brightness * 255.0;
          v = std::clamp(v, 0.0, 255.0);
        }
        dst[y * w + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

namespace {

struct Cell {
  double x, y, vx, vy, sigma, peak;
  double burst_factor = 1.0;
  Index burst_left = 0;
};

}  // namespace

std::vector<VideoStack> synth_generate(std::size_t n_videos, Index n_frames, Index height, Index width,
                                       Index min_cells, Index max_cells, std::uint64_t seed,
                                       const SynthParams& params) {
  if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0) {
    throw std::invalid_argument("synthetic frame dims must be positive multiples of 16");
  }
  if (n_frames <= 0) throw std::invalid_argument("synthetic videos need at least one frame");
  if (min_cells < 0 || max_cells < min_cells) throw std::invalid_argument("invalid cell count range");

  std::vector<VideoStack> videos;
  videos.reserve(n_videos);
  for (std::size_t v = 0; v < n_videos; ++v) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(v)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    const Index cells = min_cells + static_cast<Index>(unit(rng) * static_cast<double>(max_cells - min_cells + 1));
    std::vector<Cell> pop;
    for (Index c = 0; c < std::min(cells, max_cells); ++c) {
      Cell cell{};
      cell.x = uniform(0.0, static_cast<double>(width - 1));
      cell.y = uniform(0.0, static_cast<double>(height - 1));
      const double angle = uniform(0.0, 2.0 * 3.14159265358979323846);
      const double speed = uniform(0.0, params.velocity_max);
      cell.vx = speed * std::cos(angle);
      cell.vy = speed * std::sin(angle);
      cell.sigma = uniform(params.blob_sigma_min, params.blob_sigma_max);
      cell.peak = uniform(params.peak_min, params.peak_max);
      pop.push_back(cell);
    }

    VideoStack stack;
    stack.frames = n_frames;
    stack.height = height;
    stack.width = width;
    stack.source = "synth_" + std::to_string(v);
    stack.pixels.resize(static_cast<std::size_t>(n_frames * height * width));
    std::vector<double> canvas(static_cast<std::size_t>(height * width));

    for (Index t = 0; t < n_frames; ++t) {
      std::fill(canvas.begin(), canvas.end(), params.background);
      const double bleach = std::exp(-params.bleach_rate * static_cast<double>(t));
      for (Cell& cell : pop) {
        if (cell.burst_left == 0 && params.burst_probability > 0 && unit(rng) < params.burst_probability) {
          cell.burst_factor = uniform(params.burst_min, params.burst_max);
          cell.burst_left = params.burst_min_frames +
                            static_cast<Index>(unit(rng) * static_cast<double>(params.burst_max_frames -
                                                                              params.burst_min_frames + 1));
        }
        const double amplitude = cell.peak * bleach * (cell.burst_left > 0 ? cell.burst_factor : 1.0);
        if (cell.burst_left > 0) --cell.burst_left;
        const double reach = 4.0 * cell.sigma;
        const Index y0 = std::max<Index>(0, static_cast<Index>(std::floor(cell.y - reach)));
        const Index y1 = std::min<Index>(height - 1, static_cast<Index>(std::ceil(cell.y + reach)));
        const Index x0 = std::max<Index>(0, static_cast<Index>(std::floor(cell.x - reach)));
        const Index x1 = std::min<Index>(width - 1, static_cast<Index>(std::ceil(cell.x + reach)));
        const double inv = 1.0 / (2.0 * cell.sigma * cell.sigma);
        for (Index y = y0; y <= y1; ++y) {
          for (Index x = x0; x <= x1; ++x) {
            const double dx = static_cast<double>(x) - cell.x, dy = static_cast<double>(y) - cell.y;
            canvas[static_cast<std::size_t>(y * width + x)] += amplitude * std::exp(-(dx * dx + dy * dy) * inv);
          }
        }
      }
      std::uint8_t* out = stack.pixels.data() + t * height * width;
      for (Index i = 0; i < height * width; ++i) {
        double value = canvas[static_cast<std::size_t>(i)];
        if (params.noise_gain > 0) value += params.noise_gain * std::sqrt(std::max(value, 0.0)) * normal(rng);
        out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 255.0)));
      }
      for (Cell& cell : pop) {
        cell.x += cell.vx + params.drift_sigma * normal(rng);
        cell.y += cell.vy + params.drift_sigma * normal(rng);
        // Reflect at the borders so cells stay in view.
        const double max_x = static_cast<double>(width - 1), max_y = static_cast<double>(height - 1);
        if (cell.x < 0) { cell.x = -cell.x; cell.vx = -cell.vx; }
        if (cell.x > max_x) { cell.x = 2 * max_x - cell.x; cell.vx = -cell.vx; }
        if (cell.y < 0) { cell.y = -cell.y; cell.vy = -cell.vy; }
        if (cell.y > max_y) { cell.y = 2 * max_y - cell.y; cell.vy = -cell.vy; }
      }
    }
    videos.push_back(std::move(stack));
  }
  return videos;
}

namespace {

constexpr char kStackMagic[4] = {'C', 'V', 'I', 'P'};
constexpr std::size_t kStackHeader = 20;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

std::vector<std::uint8_t> encode_stack(const VideoStack& stack) {
  std::vector<std::uint8_t> out;
  out.reserve(kStackHeader + stack.pixels.size());
  out.insert(out.end(), kStackMagic, kStackMagic + 4);
  out.push_back(1);  // version, little-endian u16
  out.push_back(0);
  out.push_back(0);  // dtype u8
  out.push_back(0);  // reserved
  put_u32(out, static_cast<std::uint32_t>(stack.frames));
  put_u32(out, static_cast<std::uint32_t>(stack.height));
  put_u32(out, static_cast<std::uint32_t>(stack.width));
  out.insert(out.end(), stack.pixels.begin(), stack.pixels.end());
  return out;
}

VideoStack decode_stack(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kStackMagic, 4) != 0) throw FormatError("not a CVIP stack (bad magic)");
  if (bytes.size() < kStackHeader) throw FormatError("CVIP header truncated");
  const unsigned version = bytes[4] | (bytes[5] << 8);
  if (version != 1) throw FormatError("unsupported CVIP version " + std::to_string(version));
  if (bytes[6] != 0) throw FormatError("unsupported CVIP dtype " + std::to_string(bytes[6]));
  VideoStack s;
  s.frames = get_u32(bytes.data() + 8);
  s.height = get_u32(bytes.data() + 12);
  s.width = get_u32(bytes.data() + 16);
  const auto payload = static_cast<std::size_t>(s.frames * s.height * s.width);
  if (bytes.size() - kStackHeader != payload) {
    throw FormatError("CVIP payload has " + std::to_string(bytes.size() - kStackHeader) + " bytes, expected " +
                      std::to_string(payload));
  }
  s.pixels.assign(bytes.begin() + kStackHeader, bytes.end());
  return s;
}

void save_stack(const VideoStack& stack, const std::filesystem::path& path) { write_file_bytes(path, encode_stack(stack)); }

namespace {

// Next whitespace-delimited PGM header token, skipping '#' comments.
std::string pgm_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') tok.push_back(static_cast<char>(bytes[pos++]));
  if (tok.empty()) throw FormatError("PGM header truncated");
  return tok;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  if (pgm_token(bytes, pos) != "P5") throw FormatError(path.string() + ": not a binary PGM (P5)");
  GrayImage img;
  try {
    img.width = std::stol(pgm_token(bytes, pos));
    img.height = std::stol(pgm_token(bytes, pos));
    const long maxval = std::stol(pgm_token(bytes, pos));
    if (maxval <= 0 || maxval > 255) throw FormatError(path.string() + ": only 8-bit PGM is supported");
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed PGM header");
  }
  if (img.width <= 0 || img.height <= 0) throw FormatError(path.string() + ": invalid PGM dims");
  ++pos;  // single whitespace after maxval
  const auto n = static_cast<std::size_t>(img.width * img.height);
  if (pos > bytes.size() || bytes.size() - pos < n) throw FormatError(path.string() + ": PGM payload truncated");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ostringstream header;
  header << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  bytes.insert(bytes.end(), image.pixels.begin(), image.pixels.end());
  write_file_bytes(path, bytes);
}

namespace {

std::vector<std::filesystem::path> sorted_files(const std::filesystem::path& dir, const std::string& ext) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

VideoStack load_pgm_directory(const std::filesystem::path& dir) {
  const auto files = sorted_files(dir, ".pgm");
  if (files.empty()) throw FormatError(dir.string() + ": no .pgm frames");
  VideoStack s;
  s.source = dir.string();
  for (const auto& f : files) {
    GrayImage img = read_pgm(f);
    if (s.frames == 0) {
      s.height = img.height;
      s.width = img.width;
    } else if (img.height != s.height || img.width != s.width) {
      throw FormatError(f.string() + ": PGM dims differ from the first frame");
    }
    s.pixels.insert(s.pixels.end(), img.pixels.begin(), img.pixels.end());
    ++s.frames;
  }
  return s;
}

VideoStack load_stack(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return load_pgm_directory(path);
  VideoStack s = decode_stack(read_file_bytes(path));
  s.source = path.string();
  return s;
}

std::vector<VideoStack> load_videos(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("data path does not exist: " + path.string());
  if (!std::filesystem::is_directory(path)) return {load_stack(path)};
  const auto stacks = sorted_files(path, ".cvip");
  if (stacks.empty()) return {load_pgm_directory(path)};
  std::vector<VideoStack> out;
  for (const auto& f : stacks) out.push_back(load_stack(f));
  return out;
}

std::vector<FrameSample> build_samples(const std::vector<VideoStack>& videos, Index intermediate) {
  std::vector<FrameSample> all;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    auto w = extract_windows(videos[v], intermediate, v);
    all.insert(all.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return all;
}

}  // namespace wcell
