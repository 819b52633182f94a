#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "lmboost/errors.hpp"

namespace lmboost {

/// Fixed-length binary descriptor compared by Hamming distance.
///
/// Bits are stored LSB-first inside 64-bit words: bit i lives in word i/64 at
/// position i%64. Unused tail bits of the last word are kept zero so that
/// popcount-based distances and equality stay exact.
class BinaryDescriptor {
 public:
  BinaryDescriptor() = default;

  explicit BinaryDescriptor(std::uint32_t bits)
      : bits_(bits), words_((bits + 63) / 64, 0) {}

  std::uint32_t size_bits() const { return bits_; }
  bool empty() const { return bits_ == 0; }

  bool get(std::uint32_t i) const {
    return (words_[i >> 6] >> (i & 63)) & 1ull;
  }

  void set(std::uint32_t i, bool value) {
    const std::uint64_t mask = 1ull << (i & 63);
    if (value)
      words_[i >> 6] |= mask;
    else
      words_[i >> 6] &= ~mask;
  }

  void flip(std::uint32_t i) { words_[i >> 6] ^= 1ull << (i & 63); }

  const std::vector<std::uint64_t>& words() const { return words_; }

  friend bool operator==(const BinaryDescriptor& a, const BinaryDescriptor& b) {
    return a.bits_ == b.bits_ && a.words_ == b.words_;
  }

  /// Bytewise hex, two nibbles per byte, byte k = bits [8k, 8k+8) LSB-first.
  std::string to_hex() const {
    static const char* digits = "0123456789abcdef";
    const std::uint32_t n_bytes = (bits_ + 7) / 8;
    std::string out(2 * n_bytes, '0');
    for (std::uint32_t k = 0; k < n_bytes; ++k) {
      const std::uint32_t byte =
          static_cast<std::uint32_t>(words_[k >> 3] >> ((k & 7) * 8)) & 0xff;
      out[2 * k] = digits[byte >> 4];
      out[2 * k + 1] = digits[byte & 0xf];
    }
    return out;
  }

  static BinaryDescriptor from_hex(const std::string& hex, std::uint32_t bits) {
    const std::uint32_t n_bytes = (bits + 7) / 8;
    if (hex.size() != 2 * n_bytes)
      throw ParseError("descriptor hex length " + std::to_string(hex.size()) +
                       " does not match " + std::to_string(bits) + " bits");
    BinaryDescriptor d(bits);
    for (std::uint32_t k = 0; k < n_bytes; ++k) {
      const int hi = hex_nibble(hex[2 * k]);
      const int lo = hex_nibble(hex[2 * k + 1]);
      const std::uint64_t byte = static_cast<std::uint64_t>((hi << 4) | lo);
      d.words_[k >> 3] |= byte << ((k & 7) * 8);
    }
    if (bits % 64 != 0) {
      const std::uint64_t tail_mask = (1ull << (bits % 64)) - 1;
      if ((d.words_.back() & ~tail_mask) != 0)
        throw ParseError("descriptor hex has bits set beyond " +
                         std::to_string(bits));
    }
    return d;
  }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull ^ bits_;
    for (std::uint64_t w : words_) {
      h ^= w;
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  static int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw ParseError(std::string("invalid hex character '") + c + "'");
  }

  std::uint32_t bits_ = 0;
  std::vector<std::uint64_t> words_;
};

inline std::uint32_t hamming_distance(const BinaryDescriptor& a,
                                      const BinaryDescriptor& b) {
  if (a.size_bits() != b.size_bits())
    throw Error("hamming_distance: descriptor lengths differ (" +
                std::to_string(a.size_bits()) + " vs " +
                std::to_string(b.size_bits()) + ")");
  std::uint32_t d = 0;
  const auto& wa = a.words();
  const auto& wb = b.words();
  for (std::size_t i = 0; i < wa.size(); ++i)
    d += static_cast<std::uint32_t>(std::popcount(wa[i] ^ wb[i]));
  return d;
}

}  // namespace lmboost
