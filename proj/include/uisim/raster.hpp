#pragma once

// Deterministic layout rasterizer. Flat fills, 1px borders and a built-in
// 5x7 bitmap font; output is byte-identical across platforms.

#include <array>
#include <string>
#include <vector>

#include "uisim/image.hpp"
#include "uisim/layout.hpp"

namespace uisim {

inline constexpr int kMinResolution = 16;
inline constexpr int kMaxResolution = 4096;
inline constexpr int kDefaultWidth = 1080;
inline constexpr int kDefaultHeight = 2400;

struct ClassStyle {
  Rgb fill;
  Rgb border;
  bool filled = true;
};

struct Theme {
  std::string name;
  Rgb background;
  Rgb text_color;
  std::array<ClassStyle, 12> styles{};  // indexed by ElementClass
  int corner_radius_px = 0;
  std::string font = "5x7";
  int font_scale = 1;
  // Height of the indicator band drawn inside STATUSBAR elements, as a
  // fraction of the image height.
  double statusbar_height_frac = 0.03;

  const ClassStyle& style(ElementClass cls) const {
    return styles[static_cast<std::size_t>(cls)];
  }
};

Theme light_theme();
Theme dark_theme();
std::vector<std::string> theme_names();
// Throws ConfigError for unknown names.
Theme theme_by_name(const std::string& name);
void validate_theme(const Theme& theme);

// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool empty() const { return x0 >= x1 || y0 >= y1; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

// Maps a normalized box to pixels with round-half-up on the 1e-4 grid.
PixelRect pixel_rect(const BoundingBox& box, int width, int height);

// Throws ResolutionError when width/height fall outside [16, 4096].
Image render(const ScreenLayout& layout, const Theme& theme, int width, int height);

// Copy of `image` with element outlines and class labels drawn on top.
Image overlay_layout(const Image& image, const ScreenLayout& layout, const Theme& theme);

}  // namespace uisim
