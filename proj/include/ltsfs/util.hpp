#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ltsfs {

// Error taxonomy. The CLI maps these onto exit codes: validation-type errors
// exit 1, staleness exits 2, anything else exits 3.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityError : InputError {
  using InputError::InputError;
};
struct FormatError : InputError {
  using InputError::InputError;
};
struct ValidationError : InputError {
  using InputError::InputError;
};
struct SplitError : InputError {
  using InputError::InputError;
};
struct PoolingError : InputError {
  using InputError::InputError;
};
struct ConstructionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GenerationExhaustedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InsufficientCalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StalenessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InternalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// CRC32 (IEEE 802.3 polynomial, reflected), used by the weight container.
uint32_t crc32(const uint8_t* data, size_t n, uint32_t seed = 0);

// FNV-1a 64-bit content hash, used for the provenance ledger.
uint64_t fnv1a64(const uint8_t* data, size_t n);
std::string hash_hex(uint64_t h);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
std::string file_hash_hex(const std::string& path);

// Little-endian binary cursor helpers for the container formats.
struct ByteWriter {
  std::vector<uint8_t> bytes;
  void u8(uint8_t v) { bytes.push_back(v); }
  void u16(uint16_t v);
  void u32(uint32_t v);
  void f32(float v);
  void raw(const void* p, size_t n);
};

struct ByteReader {
  std::span<const uint8_t> bytes;
  size_t pos = 0;
  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  float f32();
  void raw(void* p, size_t n);
  bool done() const { return pos >= bytes.size(); }
  size_t remaining() const { return bytes.size() - pos; }
};

// Named-tensor container shared by the weight file and steering payloads.
// Layout: 8-byte magic, caller-defined header bytes, then tensors as
// (u16 name length, name, u8 rank, u32 dims..., row-major f32 payload),
// closed by a CRC32 over everything after the magic.
struct NamedTensor {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> data;
};

void write_tensor(ByteWriter& w, const NamedTensor& t);
NamedTensor read_tensor(ByteReader& r);

}  // namespace ltsfs
