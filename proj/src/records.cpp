#include "wcell/records.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace wcell {

namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v = static_cast<std::uint16_t>(v | (bytes_[pos_++] << (8 * i)));
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("record file truncated");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_record_file(const RecordFile& file) {
  ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u16(file.version);
  w.u16(file.flags);
  for (std::uint32_t v : file.config) w.u32(v);
  w.u32(static_cast<std::uint32_t>(file.records.size()));
  for (const auto& rec : file.records) {
    if (rec.name.size() > 0xFFFF) throw FormatError("record name too long: " + rec.name);
    w.u16(static_cast<std::uint16_t>(rec.name.size()));
    w.raw(rec.name.data(), rec.name.size());
    w.u8(static_cast<std::uint8_t>(rec.tensor.rank()));
    for (Index d : rec.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : rec.tensor.span()) w.f32(v);
  }
  return w.take();
}

RecordFile decode_record_file(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("not a WCNC file (bad magic)");
  }
  r.str(4);
  RecordFile file;
  file.version = r.u16();
  if (file.version != kCheckpointVersion) {
    throw FormatError("unsupported WCNC version " + std::to_string(file.version));
  }
  file.flags = r.u16();
  for (auto& v : file.config) v = r.u32();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor rec;
    rec.name = r.str(r.u16());
    const std::uint8_t rank = r.u8();
    if (rank > kMaxRank) throw FormatError("record " + rec.name + " has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) throw FormatError("record " + rec.name + " has a zero dimension");
    }
    const Index n = element_count(shape);
    std::vector<float> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = r.f32();
    rec.tensor = TensorF(std::move(shape), std::move(data));
    file.records.push_back(std::move(rec));
  }
  if (!r.done()) throw FormatError("trailing bytes after WCNC records");
  return file;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_record_file(const std::filesystem::path& path, const RecordFile& file) {
  write_file_bytes(path, encode_record_file(file));
}

RecordFile read_record_file(const std::filesystem::path& path) { return decode_record_file(read_file_bytes(path)); }

}  // namespace wcell
