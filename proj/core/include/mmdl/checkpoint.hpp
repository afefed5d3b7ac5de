#pragma once

#include <string>
#include <vector>

#include "mmdl/tensor.hpp"

namespace mmdl {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Parameter container: little-endian, magic "MMDL", version u32, count u32,
// then per entry (name_len u32, name bytes, rank u32, dims u64 each, values
// f64). Round-trips byte-exactly.
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

// Little-endian buffer primitives shared by the container formats.
namespace wire {

void put_u16(std::vector<unsigned char>& b, std::uint16_t v);
void put_u32(std::vector<unsigned char>& b, std::uint32_t v);
void put_u64(std::vector<unsigned char>& b, std::uint64_t v);
void put_f32(std::vector<unsigned char>& b, float v);
void put_f64(std::vector<unsigned char>& b, double v);

// Cursor over an in-memory file image; throws format errors naming the
// byte offset on truncation.
class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  void bytes(unsigned char* out, std::size_t n);
  std::string str(std::size_t n);
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }
  void expect_end(const char* what) const;

 private:
  void need(std::size_t n);
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<unsigned char>& bytes);

}  // namespace wire

}  // namespace mmdl
