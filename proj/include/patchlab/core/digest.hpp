#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace patchlab {

// 64-bit FNV-1a. Used for provenance digests, not for security.
class fnv1a64 {
 public:
  void update(std::span<const std::byte> bytes) noexcept {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= 0x100000001B3ULL;
    }
  }
  void update(std::string_view s) noexcept {
    update(std::as_bytes(std::span<const char>(s.data(), s.size())));
  }
  std::uint64_t value() const noexcept { return state_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::string digest_hex(std::string_view s) {
  fnv1a64 h;
  h.update(s);
  return h.hex();
}

}  // namespace patchlab
