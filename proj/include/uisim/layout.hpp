#pragma once

// Structured screen layouts and their canonical text format.
//
// A layout is a tree of UI elements with normalized bounding boxes. The text
// format ("layout DSL", extension .uil) is line based; indentation (two spaces
// per level) defines nesting:
//
//   @screen inbox
//   CONTAINER root (0.0000,0.0000,1.0000,1.0000)
//     BUTTON send 'Send' (0.1000,0.8000,0.9000,0.9000) "sends the draft"
//
// Each element line is `CLASS name ['text'] (x0,y0,x1,y1) ["description"]`.
// Optional `@source` / `@screen` directives precede the root; `#` starts a
// comment line. Coordinates are kept at 1e-4 resolution: equality of boxes is
// defined on that grid, which is what the serializer prints.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace uisim {

inline constexpr double kBoundsTolerance = 1e-6;
inline constexpr double kContainTolerance = 0.01;
inline constexpr int kMaxDepth = 32;
inline constexpr std::size_t kMaxElements = 4096;
inline constexpr std::size_t kMaxLayoutBytes = 1 << 20;
inline constexpr int kCoordScale = 10000;

enum class ElementClass {
  kButton,
  kText,
  kTextField,
  kImage,
  kIcon,
  kCheckbox,
  kSwitch,
  kListItem,
  kNavbar,
  kStatusbar,
  kContainer,
  kOther,
};

std::string_view element_class_name(ElementClass cls);
// Unknown tokens map to kOther.
ElementClass element_class_from_token(std::string_view token);

// Quantizes a normalized coordinate onto the 1e-4 grid.
inline std::int32_t quantize_coord(double v) {
  return static_cast<std::int32_t>(v * kCoordScale + (v < 0 ? -0.5 : 0.5));
}

struct BoundingBox {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  bool degenerate() const { return x0 == x1 || y0 == y1; }
  bool valid() const {
    return 0 <= x0 && x0 <= x1 && x1 <= 1 && 0 <= y0 && y0 <= y1 && y1 <= 1;
  }

  // Equality on the 1e-4 coordinate grid.
  friend bool operator==(const BoundingBox& a, const BoundingBox& b) {
    return quantize_coord(a.x0) == quantize_coord(b.x0) &&
           quantize_coord(a.y0) == quantize_coord(b.y0) &&
           quantize_coord(a.x1) == quantize_coord(b.x1) &&
           quantize_coord(a.y1) == quantize_coord(b.y1);
  }
};

inline constexpr BoundingBox kUnitBox{0, 0, 1, 1};

struct UiElement {
  ElementClass element_class = ElementClass::kOther;
  // Original token for kOther elements parsed from an unknown class name;
  // empty means the literal OTHER.
  std::string class_token;
  std::string name;
  std::string description;
  std::optional<std::string> text_content;
  BoundingBox bbox;
  std::vector<UiElement> children;

  // Class as written in the DSL.
  std::string class_label() const;

  friend bool operator==(const UiElement&, const UiElement&) = default;
};

enum class LayoutSource { kAnnotated, kAnnotatedAbsent, kPredicted, kScripted };

std::string_view layout_source_name(LayoutSource source);
std::optional<LayoutSource> layout_source_from_name(std::string_view name);

struct ScreenLayout {
  UiElement root = make_root();
  LayoutSource source = LayoutSource::kAnnotated;
  std::optional<std::string> screen_id;

  static UiElement make_root(std::string name = "root");

  friend bool operator==(const ScreenLayout&, const ScreenLayout&) = default;
};

// Root-only placeholder layout.
ScreenLayout placeholder_layout(LayoutSource source = LayoutSource::kAnnotatedAbsent);

// Elements in pre-order together with their depth (root has depth 0).
struct FlatElement {
  const UiElement* element;
  int depth;
};
std::vector<FlatElement> preorder(const ScreenLayout& layout);
std::size_t element_count(const ScreenLayout& layout);
int max_depth(const ScreenLayout& layout);

// Throws SyntaxError, BoundsError, DepthError or LayoutTooLarge.
ScreenLayout parse_layout(std::string_view text);
std::string serialize_layout(const ScreenLayout& layout);

// Checks every type invariant; throws the same errors parse_layout would.
void validate_layout(const ScreenLayout& layout);

double layout_iou(const BoundingBox& a, const BoundingBox& b);

struct ClassMatchCounts {
  std::size_t predicted = 0;
  std::size_t truth = 0;
  std::size_t matched = 0;
  friend bool operator==(const ClassMatchCounts&, const ClassMatchCounts&) = default;
};

struct LayoutMatchReport {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t matched = 0;
  std::size_t predicted = 0;
  std::size_t truth = 0;
  std::map<std::string, ClassMatchCounts> per_class;
};

// Greedy one-to-one matching of same-class elements by descending IoU.
LayoutMatchReport match_layouts(const ScreenLayout& pred, const ScreenLayout& truth,
                                double iou_threshold);

// JSON mirror of the layout schema (same field names as the types above).
nlohmann::json layout_to_json(const ScreenLayout& layout);
ScreenLayout layout_from_json(const nlohmann::json& j);
// A flat element list (no root) becomes the children of a unit-square root.
ScreenLayout layout_from_flat_json(const nlohmann::json& elements);

}  // namespace uisim
