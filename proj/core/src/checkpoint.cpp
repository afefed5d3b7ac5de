#include "mmdl/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>

namespace mmdl {

namespace wire {

void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<unsigned char>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<unsigned char>& b, float v) { put_u32(b, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::vector<unsigned char>& b, double v) { put_u64(b, std::bit_cast<std::uint64_t>(v)); }

void Reader::need(std::size_t n) {
  if (pos_ + n > size_)
    throw Error(ErrorCategory::format,
                "truncated file: need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                    ", have " + std::to_string(size_ - pos_));
}

std::uint16_t Reader::u16() {
  need(2);
  std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
  pos_ += 8;
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }
double Reader::f64() { return std::bit_cast<double>(u64()); }

void Reader::bytes(unsigned char* out, std::size_t n) {
  need(n);
  std::memcpy(out, data_ + pos_, n);
  pos_ += n;
}

std::string Reader::str(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
  pos_ += n;
  return s;
}

void Reader::expect_end(const char* what) const {
  if (pos_ != size_)
    throw Error(ErrorCategory::format, std::string(what) + ": " + std::to_string(size_ - pos_) +
                                           " trailing bytes at offset " + std::to_string(pos_));
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw Error(ErrorCategory::io, "cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<unsigned char> out(static_cast<std::size_t>(size < 0 ? 0 : size));
  if (!out.empty() && std::fread(out.data(), 1, out.size(), f) != out.size()) {
    std::fclose(f);
    throw Error(ErrorCategory::io, "short read on " + path);
  }
  std::fclose(f);
  return out;
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error(ErrorCategory::io, "cannot open " + path + " for writing");
  if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
    std::fclose(f);
    throw Error(ErrorCategory::io, "short write on " + path);
  }
  std::fclose(f);
}

}  // namespace wire

namespace {
constexpr char kMagic[4] = {'M', 'M', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::vector<unsigned char> b;
  b.insert(b.end(), kMagic, kMagic + 4);
  wire::put_u32(b, kVersion);
  wire::put_u32(b, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    wire::put_u32(b, static_cast<std::uint32_t>(nt.name.size()));
    b.insert(b.end(), nt.name.begin(), nt.name.end());
    wire::put_u32(b, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (int i = 0; i < nt.tensor.rank(); ++i)
      wire::put_u64(b, static_cast<std::uint64_t>(nt.tensor.dim(i)));
    for (double v : nt.tensor.data()) wire::put_f64(b, v);
  }
  wire::write_file(path, b);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  auto bytes = wire::read_file(path);
  wire::Reader r(bytes.data(), bytes.size());
  char magic[4];
  r.bytes(reinterpret_cast<unsigned char*>(magic), 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw Error(ErrorCategory::format, "bad checkpoint magic in " + path);
  if (auto v = r.u32(); v != kVersion)
    throw Error(ErrorCategory::format, "unsupported checkpoint version " + std::to_string(v));
  auto count = r.u32();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = r.u32();
    std::string name = r.str(name_len);
    auto rank = r.u32();
    if (rank > 8) throw Error(ErrorCategory::format, "implausible tensor rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::int64_t>(r.u64()));
    auto n = static_cast<std::size_t>(shape_numel(shape));
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  r.expect_end("checkpoint");
  return out;
}

}  // namespace mmdl
