#include "ltsfs/util.hpp"

#include <array>
#include <cstdio>
#include <cstring>

namespace ltsfs {

namespace {

std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> table{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t n, uint32_t seed) {
  static const std::array<uint32_t, 256> table = make_crc_table();
  uint32_t c = seed ^ 0xffffffffu;
  for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

uint64_t fnv1a64(const uint8_t* data, size_t n) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw FormatError("cannot open file: " + path);
  std::fseek(f, 0, SEEK_END);
  long n = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> bytes(n > 0 ? size_t(n) : 0);
  if (n > 0 && std::fread(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
    std::fclose(f);
    throw FormatError("short read: " + path);
  }
  std::fclose(f);
  return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw FormatError("cannot write file: " + path);
  if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
    std::fclose(f);
    throw FormatError("short write: " + path);
  }
  std::fclose(f);
}

std::string file_hash_hex(const std::string& path) {
  auto bytes = read_file_bytes(path);
  return hash_hex(fnv1a64(bytes.data(), bytes.size()));
}

void ByteWriter::u16(uint16_t v) {
  bytes.push_back(uint8_t(v & 0xff));
  bytes.push_back(uint8_t(v >> 8));
}

void ByteWriter::u32(uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes.push_back(uint8_t((v >> (8 * i)) & 0xff));
}

void ByteWriter::f32(float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  u32(u);
}

void ByteWriter::raw(const void* p, size_t n) {
  const uint8_t* b = static_cast<const uint8_t*>(p);
  bytes.insert(bytes.end(), b, b + n);
}

uint8_t ByteReader::u8() {
  if (pos + 1 > bytes.size()) throw FormatError("truncated file");
  return bytes[pos++];
}

uint16_t ByteReader::u16() {
  uint16_t lo = u8();
  uint16_t hi = u8();
  return uint16_t(lo | (hi << 8));
}

uint32_t ByteReader::u32() {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(u8()) << (8 * i);
  return v;
}

float ByteReader::f32() {
  uint32_t u = u32();
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

void ByteReader::raw(void* p, size_t n) {
  if (pos + n > bytes.size()) throw FormatError("truncated file");
  std::memcpy(p, bytes.data() + pos, n);
  pos += n;
}

void write_tensor(ByteWriter& w, const NamedTensor& t) {
  w.u16(uint16_t(t.name.size()));
  w.raw(t.name.data(), t.name.size());
  w.u8(uint8_t(t.dims.size()));
  size_t n = 1;
  for (uint32_t d : t.dims) {
    w.u32(d);
    n *= d;
  }
  if (n != t.data.size()) throw InternalError("tensor size mismatch: " + t.name);
  w.raw(t.data.data(), t.data.size() * 4);
}

NamedTensor read_tensor(ByteReader& r) {
  NamedTensor t;
  uint16_t name_len = r.u16();
  t.name.resize(name_len);
  r.raw(t.name.data(), name_len);
  uint8_t rank = r.u8();
  size_t n = 1;
  for (int i = 0; i < rank; ++i) {
    t.dims.push_back(r.u32());
    n *= t.dims.back();
  }
  if (n > (1u << 28)) throw FormatError("tensor too large: " + t.name);
  t.data.resize(n);
  r.raw(t.data.data(), n * 4);
  return t;
}

}  // namespace ltsfs
