#include "uisim/layout.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <tuple>

#include "uisim/error.hpp"

namespace uisim {
namespace {

constexpr std::array<std::string_view, 12> kClassNames = {
    "BUTTON",    "TEXT",     "TEXT_FIELD", "IMAGE",     "ICON",      "CHECKBOX",
    "SWITCH",    "LIST_ITEM", "NAVBAR",    "STATUSBAR", "CONTAINER", "OTHER",
};

constexpr std::array<std::string_view, 4> kSourceNames = {
    "annotated", "annotated:absent", "predicted", "scripted"};

bool is_ident_start(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_';
}
bool is_ident_char(char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }

bool is_name_char(char c) {
  return static_cast<unsigned char>(c) > ' ' && c != '\'' && c != '"' && c != '(' &&
         c != ')' && c != 0x7f;
}

// Returns the byte offset of the first invalid UTF-8 sequence, or npos.
std::size_t find_invalid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xe0) == 0xc0) {
      len = 2;
      cp = c & 0x1f;
    } else if ((c & 0xf0) == 0xe0) {
      len = 3;
      cp = c & 0x0f;
    } else if ((c & 0xf8) == 0xf0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return i;
    }
    if (i + len > s.size()) return i;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xc0) != 0x80) return i;
      cp = (cp << 6) | (cc & 0x3f);
    }
    const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
                          (len == 4 && cp < 0x10000);
    if (overlong || cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return i;
    i += len;
  }
  return std::string_view::npos;
}

bool is_other_literal(std::string_view token) {
  return token.size() == 5 && std::equal(token.begin(), token.end(), "OTHER", [](char a, char b) {
           return (a >= 'a' && a <= 'z' ? static_cast<char>(a - 'a' + 'A') : a) == b;
         });
}

Error bounds_error(const std::string& msg) { return Error(ErrorCode::kBoundsError, msg); }

std::string format_coord(double v) {
  const std::int32_t q = std::clamp(quantize_coord(v), 0, kCoordScale);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%d.%04d", q / kCoordScale, q % kCoordScale);
  return buf;
}

void append_quoted(std::string& out, std::string_view s, char quote) {
  out.push_back(quote);
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c == quote) {
          out.push_back('\\');
          out.push_back(c);
        } else if (static_cast<unsigned char>(c) < 0x20 || c == 0x7f) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\x%02x", static_cast<unsigned char>(c));
          out += buf;
        } else {
          out.push_back(c);
        }
    }
  }
  out.push_back(quote);
}

void serialize_element(std::string& out, const UiElement& e, int depth) {
  out.append(static_cast<std::size_t>(depth) * 2, ' ');
  out += e.class_label();
  out.push_back(' ');
  out += e.name;
  if (e.text_content) {
    out.push_back(' ');
    append_quoted(out, *e.text_content, '\'');
  }
  out += " (";
  out += format_coord(e.bbox.x0);
  out.push_back(',');
  out += format_coord(e.bbox.y0);
  out.push_back(',');
  out += format_coord(e.bbox.x1);
  out.push_back(',');
  out += format_coord(e.bbox.y1);
  out.push_back(')');
  if (!e.description.empty()) {
    out.push_back(' ');
    append_quoted(out, e.description, '"');
  }
  out.push_back('\n');
  for (const auto& child : e.children) serialize_element(out, child, depth + 1);
}

bool contained(const BoundingBox& child, const BoundingBox& parent) {
  constexpr int slack = static_cast<int>(kContainTolerance * kCoordScale);
  return quantize_coord(child.x0) >= quantize_coord(parent.x0) - slack &&
         quantize_coord(child.y0) >= quantize_coord(parent.y0) - slack &&
         quantize_coord(child.x1) <= quantize_coord(parent.x1) + slack &&
         quantize_coord(child.y1) <= quantize_coord(parent.y1) + slack;
}

// Cursor over one element line.
class LineParser {
 public:
  LineParser(std::string_view line, int line_no, std::size_t start)
      : line_(line), line_no_(line_no), pos_(start) {}

  UiElement parse() {
    UiElement e;
    const std::size_t class_start = pos_;
    if (pos_ >= line_.size() || !is_ident_start(line_[pos_])) fail("expected element class");
    while (pos_ < line_.size() && is_ident_char(line_[pos_])) ++pos_;
    const std::string_view token = line_.substr(class_start, pos_ - class_start);
    e.element_class = element_class_from_token(token);
    if (e.element_class == ElementClass::kOther && !is_other_literal(token))
      e.class_token = std::string(token);

    skip_required_space("after element class");
    const std::size_t name_start = pos_;
    while (pos_ < line_.size() && is_name_char(line_[pos_])) ++pos_;
    if (pos_ == name_start) fail("expected element name");
    e.name = std::string(line_.substr(name_start, pos_ - name_start));

    skip_required_space("after element name");
    if (peek() == '\'') {
      e.text_content = parse_quoted('\'');
      skip_required_space("after text");
    }
    e.bbox = parse_bbox();
    skip_space();
    if (peek() == '"') {
      e.description = parse_quoted('"');
      skip_space();
    }
    if (pos_ != line_.size()) fail("unexpected trailing characters");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw SyntaxError(msg, line_no_, static_cast<int>(pos_) + 1);
  }

  char peek() const { return pos_ < line_.size() ? line_[pos_] : '\0'; }

  void skip_space() {
    while (pos_ < line_.size() && line_[pos_] == ' ') ++pos_;
  }

  void skip_required_space(const char* where) {
    if (peek() != ' ') fail(std::string("expected space ") + where);
    skip_space();
  }

  std::string parse_quoted(char quote) {
    ++pos_;
    std::string out;
    while (true) {
      if (pos_ >= line_.size()) fail("unterminated string");
      const char c = line_[pos_++];
      if (c == quote) return out;
      if (c != '\\') {
        out.push_back(c);
        continue;
      }
      if (pos_ >= line_.size()) fail("unterminated escape");
      const char esc = line_[pos_++];
      switch (esc) {
        case '\\': out.push_back('\\'); break;
        case '\'': out.push_back('\''); break;
        case '"': out.push_back('"'); break;
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        case 'x': {
          unsigned value = 0;
          if (pos_ + 2 > line_.size()) fail("truncated \\x escape");
          auto [ptr, ec] =
              std::from_chars(line_.data() + pos_, line_.data() + pos_ + 2, value, 16);
          if (ec != std::errc() || ptr != line_.data() + pos_ + 2) fail("bad \\x escape");
          pos_ += 2;
          out.push_back(static_cast<char>(value));
          break;
        }
        default:
          --pos_;
          fail("unknown escape");
      }
    }
  }

  double parse_number() {
    skip_space();
    const char* begin = line_.data() + pos_;
    const char* end = line_.data() + line_.size();
    double v = 0;
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || !std::isfinite(v)) fail("expected coordinate");
    pos_ += static_cast<std::size_t>(ptr - begin);
    skip_space();
    return v;
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  BoundingBox parse_bbox() {
    expect('(');
    std::array<double, 4> v{};
    for (int i = 0; i < 4; ++i) {
      v[i] = parse_number();
      expect(i < 3 ? ',' : ')');
    }
    for (double& c : v) {
      if (c < -kBoundsTolerance || c > 1 + kBoundsTolerance)
        throw bounds_error("line " + std::to_string(line_no_) +
                           ": coordinate outside [0,1]");
      c = std::clamp(c, 0.0, 1.0);
    }
    if (v[2] < v[0] - kBoundsTolerance || v[3] < v[1] - kBoundsTolerance)
      throw bounds_error("line " + std::to_string(line_no_) + ": inverted bounding box");
    v[2] = std::max(v[2], v[0]);
    v[3] = std::max(v[3], v[1]);
    BoundingBox b;
    b.x0 = quantize_coord(v[0]) / double(kCoordScale);
    b.y0 = quantize_coord(v[1]) / double(kCoordScale);
    b.x1 = quantize_coord(v[2]) / double(kCoordScale);
    b.y1 = quantize_coord(v[3]) / double(kCoordScale);
    return b;
  }

  std::string_view line_;
  int line_no_;
  std::size_t pos_;
};

void check_root(const UiElement& root, int line_no) {
  if (root.element_class != ElementClass::kContainer || !root.class_token.empty())
    throw SyntaxError("root element must be a CONTAINER", line_no, 1);
  if (!(root.bbox == kUnitBox))
    throw bounds_error("line " + std::to_string(line_no) +
                       ": root bounding box must be (0,0,1,1)");
}

void validate_element(const UiElement& e, const UiElement* parent, int depth,
                      std::size_t& count) {
  if (depth > kMaxDepth)
    throw Error(ErrorCode::kDepthError, "nesting exceeds " + std::to_string(kMaxDepth));
  if (++count > kMaxElements)
    throw Error(ErrorCode::kLayoutTooLarge,
                "layout exceeds " + std::to_string(kMaxElements) + " elements");
  if (!e.class_token.empty()) {
    const bool ident = is_ident_start(e.class_token.front()) &&
                       std::all_of(e.class_token.begin(), e.class_token.end(), is_ident_char);
    if (e.element_class != ElementClass::kOther || !ident ||
        element_class_from_token(e.class_token) != ElementClass::kOther ||
        is_other_literal(e.class_token))
      throw Error(ErrorCode::kSyntaxError, "invalid class token '" + e.class_token + "'");
  }
  if (e.name.empty() || !std::all_of(e.name.begin(), e.name.end(), is_name_char))
    throw Error(ErrorCode::kSyntaxError, "invalid element name '" + e.name + "'");
  if (find_invalid_utf8(e.name) != std::string_view::npos ||
      find_invalid_utf8(e.description) != std::string_view::npos ||
      (e.text_content && find_invalid_utf8(*e.text_content) != std::string_view::npos))
    throw Error(ErrorCode::kSyntaxError, "element '" + e.name + "' has invalid UTF-8");
  const auto& b = e.bbox;
  for (double c : {b.x0, b.y0, b.x1, b.y1}) {
    if (!std::isfinite(c) || c < -kBoundsTolerance || c > 1 + kBoundsTolerance)
      throw bounds_error("element '" + e.name + "': coordinate outside [0,1]");
  }
  if (b.x1 < b.x0 - kBoundsTolerance || b.y1 < b.y0 - kBoundsTolerance)
    throw bounds_error("element '" + e.name + "': inverted bounding box");
  if (parent != nullptr && !contained(b, parent->bbox))
    throw bounds_error("element '" + e.name + "' overflows its parent '" + parent->name + "'");
  for (const auto& child : e.children) validate_element(child, &e, depth + 1, count);
}

void flatten(const UiElement& e, int depth, std::vector<FlatElement>& out) {
  out.push_back({&e, depth});
  for (const auto& c : e.children) flatten(c, depth + 1, out);
}

nlohmann::json element_to_json(const UiElement& e) {
  nlohmann::json children = nlohmann::json::array();
  for (const auto& c : e.children) children.push_back(element_to_json(c));
  return {
      {"element_class", e.class_label()},
      {"name", e.name},
      {"description", e.description},
      {"text_content", e.text_content ? nlohmann::json(*e.text_content) : nlohmann::json()},
      {"bbox", {{"x0", e.bbox.x0}, {"y0", e.bbox.y0}, {"x1", e.bbox.x1}, {"y1", e.bbox.y1}}},
      {"children", std::move(children)},
  };
}

UiElement element_from_json(const nlohmann::json& j, int depth) {
  if (depth > kMaxDepth)
    throw Error(ErrorCode::kDepthError, "nesting exceeds " + std::to_string(kMaxDepth));
  UiElement e;
  const auto token = j.at("element_class").get<std::string>();
  e.element_class = element_class_from_token(token);
  if (e.element_class == ElementClass::kOther && !is_other_literal(token)) e.class_token = token;
  e.name = j.at("name").get<std::string>();
  e.description = j.value("description", std::string());
  if (j.contains("text_content") && !j["text_content"].is_null())
    e.text_content = j["text_content"].get<std::string>();
  const auto& b = j.at("bbox");
  e.bbox = {b.at("x0").get<double>(), b.at("y0").get<double>(), b.at("x1").get<double>(),
            b.at("y1").get<double>()};
  if (j.contains("children"))
    for (const auto& c : j["children"]) e.children.push_back(element_from_json(c, depth + 1));
  return e;
}

}  // namespace

std::string_view element_class_name(ElementClass cls) {
  return kClassNames[static_cast<std::size_t>(cls)];
}

ElementClass element_class_from_token(std::string_view token) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i) {
    const auto name = kClassNames[i];
    if (name.size() == token.size() &&
        std::equal(name.begin(), name.end(), token.begin(), [](char a, char b) {
          return a == (b >= 'a' && b <= 'z' ? static_cast<char>(b - 'a' + 'A') : b);
        }))
      return static_cast<ElementClass>(i);
  }
  return ElementClass::kOther;
}

std::string UiElement::class_label() const {
  if (element_class == ElementClass::kOther && !class_token.empty()) return class_token;
  return std::string(element_class_name(element_class));
}

std::string_view layout_source_name(LayoutSource source) {
  return kSourceNames[static_cast<std::size_t>(source)];
}

std::optional<LayoutSource> layout_source_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kSourceNames.size(); ++i)
    if (kSourceNames[i] == name) return static_cast<LayoutSource>(i);
  return std::nullopt;
}

UiElement ScreenLayout::make_root(std::string name) {
  UiElement root;
  root.element_class = ElementClass::kContainer;
  root.name = std::move(name);
  root.bbox = kUnitBox;
  return root;
}

ScreenLayout placeholder_layout(LayoutSource source) {
  ScreenLayout layout;
  layout.source = source;
  return layout;
}

std::vector<FlatElement> preorder(const ScreenLayout& layout) {
  std::vector<FlatElement> out;
  flatten(layout.root, 0, out);
  return out;
}

std::size_t element_count(const ScreenLayout& layout) { return preorder(layout).size(); }

int max_depth(const ScreenLayout& layout) {
  int d = 0;
  for (const auto& fe : preorder(layout)) d = std::max(d, fe.depth);
  return d;
}

ScreenLayout parse_layout(std::string_view text) {
  if (text.size() > kMaxLayoutBytes)
    throw Error(ErrorCode::kLayoutTooLarge, "layout text exceeds 1 MiB");
  if (const auto bad = find_invalid_utf8(text); bad != std::string_view::npos) {
    const auto before = text.substr(0, bad);
    const int line = 1 + static_cast<int>(std::count(before.begin(), before.end(), '\n'));
    const auto nl = before.rfind('\n');
    const int col = static_cast<int>(nl == std::string_view::npos ? bad : bad - nl - 1) + 1;
    throw SyntaxError("invalid UTF-8", line, col);
  }

  ScreenLayout layout;
  bool have_root = false;
  std::vector<UiElement*> path;
  std::size_t count = 0;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    std::size_t indent = 0;
    while (indent < line.size() && line[indent] == ' ') ++indent;
    if (indent == line.size()) continue;
    if (line[indent] == '\t')
      throw SyntaxError("tabs are not allowed in indentation", line_no,
                        static_cast<int>(indent) + 1);
    if (line[indent] == '#') continue;

    if (line[indent] == '@') {
      if (indent != 0 || have_root)
        throw SyntaxError("directives must precede the root element", line_no,
                          static_cast<int>(indent) + 1);
      const auto sp = line.find(' ');
      const auto key = line.substr(1, sp == std::string_view::npos ? line.size() - 1 : sp - 1);
      std::string_view value;
      if (sp != std::string_view::npos) {
        value = line.substr(sp + 1);
        while (!value.empty() && value.back() == ' ') value.remove_suffix(1);
      }
      if (value.empty() || value.find(' ') != std::string_view::npos)
        throw SyntaxError("directive needs a single value", line_no, 2);
      if (key == "source") {
        const auto src = layout_source_from_name(value);
        if (!src) throw SyntaxError("unknown source '" + std::string(value) + "'", line_no, 9);
        layout.source = *src;
      } else if (key == "screen") {
        layout.screen_id = std::string(value);
      } else {
        throw SyntaxError("unknown directive '@" + std::string(key) + "'", line_no, 1);
      }
      continue;
    }

    if (indent % 2 != 0)
      throw SyntaxError("indentation must be a multiple of two spaces", line_no,
                        static_cast<int>(indent) + 1);
    const int depth = static_cast<int>(indent / 2);
    if (depth > kMaxDepth)
      throw Error(ErrorCode::kDepthError, "line " + std::to_string(line_no) +
                                              ": nesting exceeds " +
                                              std::to_string(kMaxDepth));

    UiElement element = LineParser(line, line_no, indent).parse();
    if (++count > kMaxElements)
      throw Error(ErrorCode::kLayoutTooLarge,
                  "layout exceeds " + std::to_string(kMaxElements) + " elements");

    if (depth == 0) {
      if (have_root) throw SyntaxError("multiple root elements", line_no, 1);
      check_root(element, line_no);
      layout.root = std::move(element);
      have_root = true;
      path.assign(1, &layout.root);
      continue;
    }
    if (!have_root) throw SyntaxError("first element must be at column 1", line_no, 1);
    if (static_cast<std::size_t>(depth) > path.size())
      throw SyntaxError("indentation skips a level", line_no, static_cast<int>(indent) + 1);
    path.resize(static_cast<std::size_t>(depth));
    UiElement* parent = path.back();
    if (!contained(element.bbox, parent->bbox))
      throw bounds_error("line " + std::to_string(line_no) + ": element '" + element.name +
                         "' overflows its parent '" + parent->name + "'");
    parent->children.push_back(std::move(element));
    path.push_back(&parent->children.back());
  }
  if (!have_root) throw SyntaxError("empty layout document", line_no + 1, 1);
  return layout;
}

std::string serialize_layout(const ScreenLayout& layout) {
  std::string out;
  if (layout.source != LayoutSource::kAnnotated) {
    out += "@source ";
    out += layout_source_name(layout.source);
    out.push_back('\n');
  }
  if (layout.screen_id) {
    out += "@screen ";
    out += *layout.screen_id;
    out.push_back('\n');
  }
  serialize_element(out, layout.root, 0);
  return out;
}

void validate_layout(const ScreenLayout& layout) {
  if (layout.screen_id &&
      (layout.screen_id->empty() ||
       !std::all_of(layout.screen_id->begin(), layout.screen_id->end(), is_name_char)))
    throw Error(ErrorCode::kSyntaxError, "invalid screen id '" + *layout.screen_id + "'");
  std::size_t count = 0;
  validate_element(layout.root, nullptr, 0, count);
  check_root(layout.root, 1);
}

double layout_iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) {
    return a.x0 == b.x0 && a.y0 == b.y0 && a.x1 == b.x1 && a.y1 == b.y1 ? 1.0 : 0.0;
  }
  return inter / uni;
}

LayoutMatchReport match_layouts(const ScreenLayout& pred, const ScreenLayout& truth,
                                double iou_threshold) {
  if (!(iou_threshold > 0 && iou_threshold <= 1))
    throw Error(ErrorCode::kInvalidRequest, "iou_threshold must be in (0,1]");
  const auto p = preorder(pred);
  const auto t = preorder(truth);

  struct Candidate {
    double iou;
    std::size_t truth_idx;
    std::size_t pred_idx;
  };
  std::vector<std::string> p_labels, t_labels;
  for (const auto& fe : p) p_labels.push_back(fe.element->class_label());
  for (const auto& fe : t) t_labels.push_back(fe.element->class_label());

  std::vector<Candidate> candidates;
  for (std::size_t ti = 0; ti < t.size(); ++ti) {
    for (std::size_t pi = 0; pi < p.size(); ++pi) {
      if (t_labels[ti] != p_labels[pi]) continue;
      const double iou = layout_iou(p[pi].element->bbox, t[ti].element->bbox);
      if (iou >= iou_threshold) candidates.push_back({iou, ti, pi});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    return std::tie(a.truth_idx, a.pred_idx) < std::tie(b.truth_idx, b.pred_idx);
  });

  LayoutMatchReport report;
  report.predicted = p.size();
  report.truth = t.size();
  std::vector<bool> t_used(t.size()), p_used(p.size());
  for (const auto& c : candidates) {
    if (t_used[c.truth_idx] || p_used[c.pred_idx]) continue;
    t_used[c.truth_idx] = p_used[c.pred_idx] = true;
    ++report.matched;
    ++report.per_class[t_labels[c.truth_idx]].matched;
  }
  for (const auto& l : p_labels) ++report.per_class[l].predicted;
  for (const auto& l : t_labels) ++report.per_class[l].truth;

  report.precision = p.empty() ? 0.0 : double(report.matched) / double(p.size());
  report.recall = t.empty() ? 0.0 : double(report.matched) / double(t.size());
  const double denom = report.precision + report.recall;
  report.f1 = denom > 0 ? 2 * report.precision * report.recall / denom : 0.0;
  return report;
}

nlohmann::json layout_to_json(const ScreenLayout& layout) {
  return {
      {"source", std::string(layout_source_name(layout.source))},
      {"screen_id", layout.screen_id ? nlohmann::json(*layout.screen_id) : nlohmann::json()},
      {"root", element_to_json(layout.root)},
  };
}

ScreenLayout layout_from_flat_json(const nlohmann::json& elements) {
  if (!elements.is_array()) throw Error(ErrorCode::kSyntaxError, "flat layout must be a JSON array");
  ScreenLayout layout;
  try {
    for (const auto& e : elements) layout.root.children.push_back(element_from_json(e, 1));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kSyntaxError, std::string("malformed layout JSON: ") + e.what());
  }
  validate_layout(layout);
  return parse_layout(serialize_layout(layout));
}

ScreenLayout layout_from_json(const nlohmann::json& j) {
  ScreenLayout layout;
  try {
    if (j.contains("source")) {
      const auto src = layout_source_from_name(j["source"].get<std::string>());
      if (!src) throw Error(ErrorCode::kSyntaxError, "unknown layout source");
      layout.source = *src;
    }
    if (j.contains("screen_id") && !j["screen_id"].is_null())
      layout.screen_id = j["screen_id"].get<std::string>();
    layout.root = element_from_json(j.at("root"), 0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kSyntaxError, std::string("malformed layout JSON: ") + e.what());
  }
  // Canonicalize onto the coordinate grid, as parse_layout does.
  validate_layout(layout);
  return parse_layout(serialize_layout(layout));
}

}  // namespace uisim
