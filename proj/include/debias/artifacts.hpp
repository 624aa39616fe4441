#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace debias {

inline constexpr std::size_t kNumArtifacts = 7;

/// Column order used everywhere: CSV schema, bitmask bits, reports.
inline constexpr std::array<std::string_view, kNumArtifacts> kArtifactNames = {
    "dark_corner", "hair", "gel_border", "gel_bubble", "ruler", "ink", "patches"};

enum class Artifact : std::uint8_t {
  DarkCorner = 0,
  Hair = 1,
  GelBorder = 2,
  GelBubble = 3,
  Ruler = 4,
  Ink = 5,
  Patches = 6,
};

/// Presence flags of the seven artifact types. Bit i of the mask is flag i.
class ArtifactVector {
 public:
  constexpr ArtifactVector() = default;
  constexpr explicit ArtifactVector(std::array<bool, kNumArtifacts> flags) {
    for (std::size_t i = 0; i < kNumArtifacts; ++i) set(i, flags[i]);
  }

  static constexpr ArtifactVector from_bitmask(std::uint8_t mask) {
    ArtifactVector v;
    v.bits_ = mask & 0x7Fu;
    return v;
  }

  constexpr bool operator[](std::size_t i) const { return (bits_ >> i) & 1u; }
  constexpr bool has(Artifact a) const { return (*this)[static_cast<std::size_t>(a)]; }
  constexpr void set(std::size_t i, bool on) {
    if (on)
      bits_ = static_cast<std::uint8_t>(bits_ | (1u << i));
    else
      bits_ = static_cast<std::uint8_t>(bits_ & ~(1u << i));
  }
  constexpr std::uint8_t bitmask() const { return bits_; }
  constexpr int count() const { return __builtin_popcount(bits_); }

  friend constexpr bool operator==(ArtifactVector, ArtifactVector) = default;

 private:
  std::uint8_t bits_ = 0;
};

/// Index of `name` in kArtifactNames, or -1.
constexpr int artifact_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumArtifacts; ++i)
    if (kArtifactNames[i] == name) return static_cast<int>(i);
  return -1;
}

}  // namespace debias
