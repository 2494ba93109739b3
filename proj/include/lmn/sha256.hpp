#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace lmn {

// Minimal SHA-256 (FIPS 180-4), used to fingerprint output files in the run
// manifest. Streaming interface so large files can be hashed in chunks.
class Sha256 {
 public:
  Sha256() { reset(); }

  void reset();
  void update(const void* data, size_t len);
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::array<uint8_t, 32> finish();

  static std::string hex_digest(std::string_view data);
  static std::string hex_digest_file(const std::string& path);

 private:
  void process_block(const uint8_t* block);

  uint32_t state_[8];
  uint64_t bit_count_ = 0;
  uint8_t buffer_[64];
  size_t buffer_len_ = 0;
};

std::string to_hex(const std::array<uint8_t, 32>& digest);

}  // namespace lmn
