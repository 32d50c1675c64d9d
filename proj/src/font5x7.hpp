#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace uisim::font {

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
inline constexpr int kAdvance = 6;

using Glyph = std::array<std::uint8_t, kGlyphHeight>;

// Non-ASCII code points render as a hollow box.
const Glyph& glyph(char32_t cp);

std::vector<char32_t> decode_utf8(std::string_view text);

}  // namespace uisim::font
