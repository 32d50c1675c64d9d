#include "uisim/raster.hpp"

#include <algorithm>

#include "font5x7.hpp"
#include "uisim/error.hpp"

namespace uisim {
namespace {

constexpr std::size_t idx(ElementClass c) { return static_cast<std::size_t>(c); }

// Drawing target that discards writes outside a clip rectangle.
class Canvas {
 public:
  Canvas(Image& image, PixelRect clip) : image_(image), clip_(clip) {}

  void put(int x, int y, Rgb c) {
    if (clip_.contains(x, y)) image_.set(x, y, c);
  }

  void fill(const PixelRect& r, Rgb c) {
    for (int y = std::max(r.y0, clip_.y0); y < std::min(r.y1, clip_.y1); ++y)
      for (int x = std::max(r.x0, clip_.x0); x < std::min(r.x1, clip_.x1); ++x) image_.set(x, y, c);
  }

  // Draws `text` starting at (x, y); returns the x after the last glyph.
  int text(int x, int y, std::string_view text, Rgb c, int scale) {
    for (char32_t cp : font::decode_utf8(text)) {
      const auto& g = font::glyph(cp);
      for (int row = 0; row < font::kGlyphHeight; ++row) {
        for (int col = 0; col < font::kGlyphWidth; ++col) {
          if (!(g[row] & (0x10 >> col))) continue;
          for (int sy = 0; sy < scale; ++sy)
            for (int sx = 0; sx < scale; ++sx) put(x + col * scale + sx, y + row * scale + sy, c);
        }
      }
      x += font::kAdvance * scale;
      if (x >= clip_.x1) break;
    }
    return x;
  }

 private:
  Image& image_;
  PixelRect clip_;
};

int text_width(std::string_view text, int scale) {
  const auto n = static_cast<int>(font::decode_utf8(text).size());
  return n == 0 ? 0 : (n * font::kAdvance - 1) * scale;
}

// Rounded-rectangle membership; `r` is the effective corner radius.
bool inside_shape(const PixelRect& rect, int r, int x, int y) {
  if (!rect.contains(x, y)) return false;
  if (r <= 0) return true;
  const int cx = x < rect.x0 + r ? rect.x0 + r : x >= rect.x1 - r ? rect.x1 - r - 1 : x;
  const int cy = y < rect.y0 + r ? rect.y0 + r : y >= rect.y1 - r ? rect.y1 - r - 1 : y;
  const int dx = x - cx, dy = y - cy;
  return dx * dx + dy * dy <= r * r;
}

void draw_box(Canvas& canvas, const PixelRect& rect, const ClassStyle& style, int radius) {
  const int r = std::min({radius, (rect.x1 - rect.x0) / 2, (rect.y1 - rect.y0) / 2});
  for (int y = rect.y0; y < rect.y1; ++y) {
    for (int x = rect.x0; x < rect.x1; ++x) {
      if (!inside_shape(rect, r, x, y)) continue;
      const bool edge = !inside_shape(rect, r, x - 1, y) || !inside_shape(rect, r, x + 1, y) ||
                        !inside_shape(rect, r, x, y - 1) || !inside_shape(rect, r, x, y + 1);
      if (edge)
        canvas.put(x, y, style.border);
      else if (style.filled)
        canvas.put(x, y, style.fill);
    }
  }
}

void draw_decoration(Canvas& canvas, const UiElement& e, const PixelRect& rect,
                     const Theme& theme, int image_height) {
  const int w = rect.x1 - rect.x0, h = rect.y1 - rect.y0;
  const Rgb accent = theme.style(e.element_class).border;
  switch (e.element_class) {
    case ElementClass::kImage:
      // Placeholder cross.
      for (int i = 0; i < std::max(w, h); ++i) {
        const int x = rect.x0 + i * w / std::max(w, h);
        const int y = rect.y0 + i * h / std::max(w, h);
        canvas.put(x, y, accent);
        canvas.put(rect.x1 - 1 - (x - rect.x0), y, accent);
      }
      break;
    case ElementClass::kIcon:
    case ElementClass::kCheckbox:
      if (w >= 6 && h >= 6) canvas.fill({rect.x0 + 2, rect.y0 + 2, rect.x1 - 2, rect.y1 - 2}, accent);
      break;
    case ElementClass::kSwitch:
      if (w >= 4 && h >= 4) {
        const int knob = std::min(w / 2, h) - 2;
        canvas.fill({rect.x1 - 2 - knob, rect.y0 + 2, rect.x1 - 2, rect.y0 + 2 + knob}, accent);
      }
      break;
    case ElementClass::kTextField:
      if (h >= 4) canvas.fill({rect.x0 + 1, rect.y1 - 3, rect.x1 - 1, rect.y1 - 2}, accent);
      break;
    case ElementClass::kStatusbar: {
      // Battery indicator in the top band.
      const int band = std::max(1, static_cast<int>(theme.statusbar_height_frac * image_height));
      const int bh = std::min(band, h) - 2;
      if (bh >= 2 && w >= 12) {
        const int bw = std::max(4, bh * 2);
        canvas.fill({rect.x1 - 3 - bw, rect.y0 + 1, rect.x1 - 3, rect.y0 + 1 + bh}, theme.text_color);
      }
      break;
    }
    default:
      break;
  }
}

void draw_text(Canvas& canvas, const UiElement& e, const PixelRect& rect, const Theme& theme) {
  if (!e.text_content || e.text_content->empty()) return;
  const int scale = theme.font_scale;
  const int th = font::kGlyphHeight * scale;
  const int y = rect.y0 + ((rect.y1 - rect.y0) - th) / 2;
  int x = rect.x0 + 2;
  if (e.element_class == ElementClass::kButton) {
    const int tw = text_width(*e.text_content, scale);
    x = std::max(rect.x0 + 2, rect.x0 + ((rect.x1 - rect.x0) - tw) / 2);
  }
  canvas.text(x, y, *e.text_content, theme.text_color, scale);
}

void render_element(Image& image, const UiElement& e, const Theme& theme, bool is_root) {
  if (!is_root) {
    const PixelRect rect = pixel_rect(e.bbox, image.width, image.height);
    if (!rect.empty()) {
      Canvas canvas(image, rect);
      draw_box(canvas, rect, theme.style(e.element_class), theme.corner_radius_px);
      draw_decoration(canvas, e, rect, theme, image.height);
      draw_text(canvas, e, rect, theme);
    }
  }
  for (const auto& child : e.children) render_element(image, child, theme, false);
}

ClassStyle style(Rgb fill, Rgb border, bool filled = true) { return {fill, border, filled}; }

void check_resolution(int width, int height) {
  if (width < kMinResolution || width > kMaxResolution || height < kMinResolution ||
      height > kMaxResolution)
    throw Error(ErrorCode::kResolutionError,
                "resolution " + std::to_string(width) + "x" + std::to_string(height) +
                    " outside [16, 4096]");
}

// Overlay palette indexed by ElementClass.
constexpr std::array<Rgb, 12> kOverlayPalette = {{
    {230, 25, 75},   {60, 180, 75},  {255, 160, 0},  {0, 130, 200},
    {145, 30, 180},  {70, 200, 200}, {240, 50, 230}, {128, 128, 0},
    {0, 0, 128},     {128, 0, 0},    {255, 0, 255},  {64, 64, 64},
}};

}  // namespace

Theme light_theme() {
  Theme t;
  t.name = "light";
  t.background = {250, 250, 250};
  t.text_color = {33, 33, 33};
  t.corner_radius_px = 2;
  t.font_scale = 1;
  t.statusbar_height_frac = 0.03;
  t.styles[idx(ElementClass::kButton)] = style({25, 118, 210}, {13, 71, 161});
  t.styles[idx(ElementClass::kText)] = style({250, 250, 250}, {250, 250, 250}, false);
  t.styles[idx(ElementClass::kTextField)] = style({255, 255, 255}, {158, 158, 158});
  t.styles[idx(ElementClass::kImage)] = style({207, 216, 220}, {120, 144, 156});
  t.styles[idx(ElementClass::kIcon)] = style({236, 239, 241}, {96, 125, 139});
  t.styles[idx(ElementClass::kCheckbox)] = style({255, 255, 255}, {56, 142, 60});
  t.styles[idx(ElementClass::kSwitch)] = style({200, 230, 201}, {46, 125, 50});
  t.styles[idx(ElementClass::kListItem)] = style({255, 255, 255}, {224, 224, 224});
  t.styles[idx(ElementClass::kNavbar)] = style({238, 238, 238}, {189, 189, 189});
  t.styles[idx(ElementClass::kStatusbar)] = style({224, 224, 224}, {224, 224, 224});
  t.styles[idx(ElementClass::kContainer)] = style({245, 245, 245}, {230, 230, 230});
  t.styles[idx(ElementClass::kOther)] = style({255, 243, 224}, {255, 183, 77});
  return t;
}

Theme dark_theme() {
  Theme t;
  t.name = "dark";
  t.background = {18, 18, 18};
  t.text_color = {236, 236, 236};
  t.corner_radius_px = 3;
  t.font_scale = 1;
  t.statusbar_height_frac = 0.03;
  t.styles[idx(ElementClass::kButton)] = style({144, 202, 249}, {100, 181, 246});
  t.styles[idx(ElementClass::kText)] = style({18, 18, 18}, {18, 18, 18}, false);
  t.styles[idx(ElementClass::kTextField)] = style({33, 33, 33}, {117, 117, 117});
  t.styles[idx(ElementClass::kImage)] = style({55, 71, 79}, {96, 125, 139});
  t.styles[idx(ElementClass::kIcon)] = style({38, 50, 56}, {144, 164, 174});
  t.styles[idx(ElementClass::kCheckbox)] = style({33, 33, 33}, {129, 199, 132});
  t.styles[idx(ElementClass::kSwitch)] = style({27, 94, 32}, {129, 199, 132});
  t.styles[idx(ElementClass::kListItem)] = style({30, 30, 30}, {48, 48, 48});
  t.styles[idx(ElementClass::kNavbar)] = style({28, 28, 28}, {66, 66, 66});
  t.styles[idx(ElementClass::kStatusbar)] = style({0, 0, 0}, {0, 0, 0});
  t.styles[idx(ElementClass::kContainer)] = style({24, 24, 24}, {40, 40, 40});
  t.styles[idx(ElementClass::kOther)] = style({62, 39, 35}, {255, 138, 101});
  return t;
}

std::vector<std::string> theme_names() { return {"light", "dark"}; }

Theme theme_by_name(const std::string& name) {
  if (name == "light") return light_theme();
  if (name == "dark") return dark_theme();
  throw Error(ErrorCode::kConfigError, "unknown theme '" + name + "'");
}

void validate_theme(const Theme& theme) {
  if (theme.corner_radius_px < 0) throw Error(ErrorCode::kConfigError, "negative corner radius");
  if (theme.font != "5x7") throw Error(ErrorCode::kConfigError, "unknown font '" + theme.font + "'");
  if (theme.font_scale < 1) throw Error(ErrorCode::kConfigError, "font_scale must be >= 1");
  if (!(theme.statusbar_height_frac >= 0 && theme.statusbar_height_frac <= 0.1))
    throw Error(ErrorCode::kConfigError, "statusbar_height_frac outside [0, 0.1]");
}

PixelRect pixel_rect(const BoundingBox& box, int width, int height) {
  const auto map = [](double v, int extent) {
    const std::int64_t q = std::clamp(quantize_coord(v), 0, kCoordScale);
    return static_cast<int>((q * extent + kCoordScale / 2) / kCoordScale);
  };
  return {map(box.x0, width), map(box.y0, height), map(box.x1, width), map(box.y1, height)};
}

Image render(const ScreenLayout& layout, const Theme& theme, int width, int height) {
  check_resolution(width, height);
  validate_theme(theme);
  Image image(width, height, theme.background);
  render_element(image, layout.root, theme, true);
  return image;
}

Image overlay_layout(const Image& image, const ScreenLayout& layout, const Theme& theme) {
  if (!image.valid() || image.width < kMinResolution || image.height < kMinResolution)
    throw Error(ErrorCode::kResolutionError, "overlay needs an image of at least 16x16");
  validate_theme(theme);
  Image out = image;
  Canvas canvas(out, {0, 0, out.width, out.height});
  for (const auto& fe : preorder(layout)) {
    const auto& e = *fe.element;
    const Rgb color = kOverlayPalette[idx(e.element_class)];
    PixelRect r = pixel_rect(e.bbox, out.width, out.height);
    // Degenerate boxes still get a visible 1px mark.
    r.x1 = std::max(r.x1, r.x0 + 1);
    r.y1 = std::max(r.y1, r.y0 + 1);
    r.x0 = std::min(r.x0, out.width - 1);
    r.y0 = std::min(r.y0, out.height - 1);
    r.x1 = std::min(r.x1, out.width);
    r.y1 = std::min(r.y1, out.height);
    canvas.fill({r.x0, r.y0, r.x1, r.y0 + 1}, color);
    canvas.fill({r.x0, r.y1 - 1, r.x1, r.y1}, color);
    canvas.fill({r.x0, r.y0, r.x0 + 1, r.y1}, color);
    canvas.fill({r.x1 - 1, r.y0, r.x1, r.y1}, color);
    if (fe.depth > 0 && r.x1 - r.x0 >= 8 && r.y1 - r.y0 >= 10) {
      Canvas label(out, {r.x0 + 1, r.y0 + 1, r.x1 - 1, r.y1 - 1});
      label.text(r.x0 + 2, r.y0 + 2, e.class_label(), color, 1);
    }
  }
  return out;
}

}  // namespace uisim
