#pragma once

// Vector-figure ingestion: a small XML reader sufficient for SVG plots,
// affine transform handling, straight-segment path-data parsing, and
// selector-based extraction of curve geometry in absolute pixel space.
// Curved path commands are a hard error; figures must be pre-flattened.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "synthipd/common.hpp"

namespace synthipd {

struct XmlNode {
  std::string name;  // local name, namespace prefix stripped
  std::vector<std::pair<std::string, std::string>> attrs;
  std::vector<XmlNode> children;
  std::string text;

  const std::string* attr(const std::string& key) const {
    for (const auto& [k, v] : attrs)
      if (k == key) return &v;
    return nullptr;
  }
};

namespace detail {

inline std::string decode_entities(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    if (s[i] != '&') {
      out.push_back(s[i++]);
      continue;
    }
    const std::size_t end = s.find(';', i);
    if (end == std::string::npos) {
      out.push_back(s[i++]);
      continue;
    }
    const std::string ent = s.substr(i + 1, end - i - 1);
    if (ent == "amp") out.push_back('&');
    else if (ent == "lt") out.push_back('<');
    else if (ent == "gt") out.push_back('>');
    else if (ent == "quot") out.push_back('"');
    else if (ent == "apos") out.push_back('\'');
    else if (!ent.empty() && ent[0] == '#') {
      long code = std::strtol(ent.c_str() + 1,
                              nullptr, ent.size() > 1 && ent[1] == 'x' ? 0 : 10);
      if (code > 0 && code < 128) out.push_back(char(code));
    } else {
      out.append(s, i, end - i + 1);
    }
    i = end + 1;
  }
  return out;
}

class XmlParser {
 public:
  explicit XmlParser(const std::string& doc) : doc_(doc) {}

  XmlNode parse() {
    skip_misc();
    if (pos_ >= doc_.size() || doc_[pos_] != '<')
      throw Error("svg parse: no root element");
    XmlNode root = parse_element();
    return root;
  }

 private:
  void skip_ws() {
    while (pos_ < doc_.size() && std::isspace(uchar(doc_[pos_]))) ++pos_;
  }

  static unsigned char uchar(char c) { return static_cast<unsigned char>(c); }

  bool starts_with(const char* s) const {
    return doc_.compare(pos_, std::char_traits<char>::length(s), s) == 0;
  }

  // Skips whitespace, XML declarations, processing instructions, comments,
  // and DOCTYPE (possibly with an internal subset).
  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts_with("<?")) {
        pos_ = expect_find("?>") + 2;
      } else if (starts_with("<!--")) {
        pos_ = expect_find("-->") + 3;
      } else if (starts_with("<!DOCTYPE") || starts_with("<!doctype")) {
        int depth = 0;
        while (pos_ < doc_.size()) {
          const char c = doc_[pos_++];
          if (c == '[') ++depth;
          else if (c == ']') --depth;
          else if (c == '>' && depth == 0) break;
        }
      } else {
        return;
      }
    }
  }

  std::size_t expect_find(const char* s) {
    const std::size_t at = doc_.find(s, pos_);
    if (at == std::string::npos)
      throw Error(std::string("svg parse: unterminated '") + s + "'");
    return at;
  }

  std::string read_name() {
    const std::size_t start = pos_;
    while (pos_ < doc_.size() &&
           (std::isalnum(uchar(doc_[pos_])) || doc_[pos_] == '_' ||
            doc_[pos_] == '-' || doc_[pos_] == ':' || doc_[pos_] == '.'))
      ++pos_;
    if (pos_ == start) throw Error("svg parse: expected a name");
    return doc_.substr(start, pos_ - start);
  }

  static std::string local_name(const std::string& name) {
    const std::size_t colon = name.rfind(':');
    return colon == std::string::npos ? name : name.substr(colon + 1);
  }

  XmlNode parse_element() {
    ++pos_;  // '<'
    XmlNode node;
    const std::string raw_name = read_name();
    node.name = local_name(raw_name);
    for (;;) {
      skip_ws();
      if (pos_ >= doc_.size()) throw Error("svg parse: unterminated tag");
      if (starts_with("/>")) {
        pos_ += 2;
        return node;
      }
      if (doc_[pos_] == '>') {
        ++pos_;
        break;
      }
      std::string key = read_name();
      skip_ws();
      if (pos_ >= doc_.size() || doc_[pos_] != '=')
        throw Error("svg parse: attribute without value: " + key);
      ++pos_;
      skip_ws();
      const char quote = doc_[pos_];
      if (quote != '"' && quote != '\'')
        throw Error("svg parse: unquoted attribute value: " + key);
      ++pos_;
      const std::size_t end = doc_.find(quote, pos_);
      if (end == std::string::npos)
        throw Error("svg parse: unterminated attribute value: " + key);
      node.attrs.emplace_back(std::move(key),
                              decode_entities(doc_.substr(pos_, end - pos_)));
      pos_ = end + 1;
    }
    // content
    for (;;) {
      if (pos_ >= doc_.size())
        throw Error("svg parse: unterminated element: " + node.name);
      if (doc_[pos_] == '<') {
        if (starts_with("</")) {
          pos_ += 2;
          read_name();
          skip_ws();
          if (pos_ >= doc_.size() || doc_[pos_] != '>')
            throw Error("svg parse: malformed closing tag");
          ++pos_;
          return node;
        }
        if (starts_with("<!--")) {
          pos_ = expect_find("-->") + 3;
          continue;
        }
        if (starts_with("<![CDATA[")) {
          const std::size_t start = pos_ + 9;
          pos_ = expect_find("]]>");
          node.text.append(doc_, start, pos_ - start);
          pos_ += 3;
          continue;
        }
        if (starts_with("<?")) {
          pos_ = expect_find("?>") + 2;
          continue;
        }
        node.children.push_back(parse_element());
        continue;
      }
      const std::size_t next = doc_.find('<', pos_);
      const std::size_t end = next == std::string::npos ? doc_.size() : next;
      node.text.append(decode_entities(doc_.substr(pos_, end - pos_)));
      pos_ = end;
    }
  }

  const std::string& doc_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline XmlNode parse_xml(const std::string& doc) {
  return detail::XmlParser(doc).parse();
}

// 2D affine map: (x, y) -> (a x + c y + e, b x + d y + f).
struct Affine {
  double a = 1, b = 0, c = 0, d = 1, e = 0, f = 0;

  std::array<double, 2> apply(double x, double y) const {
    return {a * x + c * y + e, b * x + d * y + f};
  }

  // this ∘ other: apply `other` first.
  Affine then(const Affine& o) const {
    return {a * o.a + c * o.b,          b * o.a + d * o.b,
            a * o.c + c * o.d,          b * o.c + d * o.d,
            a * o.e + c * o.f + e,      b * o.e + d * o.f + f};
  }
};

namespace detail {

inline bool parse_number(const std::string& s, std::size_t& pos, double& out) {
  while (pos < s.size() &&
         (std::isspace(static_cast<unsigned char>(s[pos])) || s[pos] == ','))
    ++pos;
  if (pos >= s.size()) return false;
  const char* begin = s.data() + pos;
  const char* end = s.data() + s.size();
  auto res = std::from_chars(begin, end, out);
  if (res.ec != std::errc()) return false;
  pos = std::size_t(res.ptr - s.data());
  return true;
}

}  // namespace detail

// SVG transform list: translate / scale / rotate / matrix / skewX / skewY,
// composed left to right.
inline Affine parse_transform(const std::string& spec) {
  Affine total;
  std::size_t pos = 0;
  const double deg = 3.14159265358979323846 / 180.0;
  for (;;) {
    while (pos < spec.size() &&
           (std::isspace(static_cast<unsigned char>(spec[pos])) ||
            spec[pos] == ','))
      ++pos;
    if (pos >= spec.size()) break;
    const std::size_t open = spec.find('(', pos);
    if (open == std::string::npos)
      throw Error("svg transform: expected '(' in: " + spec);
    std::string op = spec.substr(pos, open - pos);
    op.erase(std::remove_if(op.begin(), op.end(),
                            [](unsigned char c) { return std::isspace(c); }),
             op.end());
    const std::size_t close = spec.find(')', open);
    if (close == std::string::npos)
      throw Error("svg transform: unterminated '(' in: " + spec);
    std::vector<double> args;
    std::size_t apos = open + 1;
    double v;
    while (apos < close && detail::parse_number(spec, apos, v)) {
      if (apos > close) break;
      args.push_back(v);
    }
    Affine m;
    if (op == "translate") {
      if (args.empty() || args.size() > 2)
        throw Error("svg transform: translate takes 1-2 arguments");
      m.e = args[0];
      m.f = args.size() > 1 ? args[1] : 0.0;
    } else if (op == "scale") {
      if (args.empty() || args.size() > 2)
        throw Error("svg transform: scale takes 1-2 arguments");
      m.a = args[0];
      m.d = args.size() > 1 ? args[1] : args[0];
    } else if (op == "rotate") {
      if (args.size() != 1 && args.size() != 3)
        throw Error("svg transform: rotate takes 1 or 3 arguments");
      const double r = args[0] * deg;
      Affine rot{std::cos(r), std::sin(r), -std::sin(r), std::cos(r), 0, 0};
      if (args.size() == 3) {
        Affine to{1, 0, 0, 1, args[1], args[2]};
        Affine back{1, 0, 0, 1, -args[1], -args[2]};
        m = to.then(rot).then(back);
      } else {
        m = rot;
      }
    } else if (op == "matrix") {
      if (args.size() != 6)
        throw Error("svg transform: matrix takes 6 arguments");
      m = {args[0], args[1], args[2], args[3], args[4], args[5]};
    } else if (op == "skewX") {
      if (args.size() != 1) throw Error("svg transform: skewX takes 1 argument");
      m.c = std::tan(args[0] * deg);
    } else if (op == "skewY") {
      if (args.size() != 1) throw Error("svg transform: skewY takes 1 argument");
      m.b = std::tan(args[0] * deg);
    } else {
      throw Error("svg transform: unknown operation: " + op);
    }
    total = total.then(m);
    pos = close + 1;
  }
  return total;
}

// Path data restricted to straight segments (M/m, L/l, H/h, V/v, Z/z, with
// implicit command repetition).  Returns one vertex list per subpath.
// Curve and arc commands abort with a pre-flattening hint.
inline std::vector<std::vector<std::array<double, 2>>> parse_path_data(
    const std::string& d) {
  std::vector<std::vector<std::array<double, 2>>> subpaths;
  std::size_t pos = 0;
  char cmd = 0;
  double cx = 0, cy = 0;       // current point
  double sx = 0, sy = 0;       // subpath start
  auto current = [&]() -> std::vector<std::array<double, 2>>& {
    if (subpaths.empty()) throw Error("svg path: segment before moveto");
    return subpaths.back();
  };
  auto need = [&](double& out) {
    if (!detail::parse_number(d, pos, out))
      throw Error("svg path: expected a number in path data");
  };
  while (true) {
    while (pos < d.size() &&
           (std::isspace(static_cast<unsigned char>(d[pos])) || d[pos] == ','))
      ++pos;
    if (pos >= d.size()) break;
    const char c = d[pos];
    if (std::isalpha(static_cast<unsigned char>(c))) {
      if (std::string("CcSsQqTtAa").find(c) != std::string::npos)
        throw Error(format(
            "svg path: curved segment command '%c' is not supported; flatten "
            "curves to line segments before digitizing",
            c));
      if (std::string("MmLlHhVvZz").find(c) == std::string::npos)
        throw Error(format("svg path: unknown command '%c'", c));
      cmd = c;
      ++pos;
      if (cmd == 'Z' || cmd == 'z') {
        auto& sp = current();
        if (!sp.empty() && (sp.back()[0] != sx || sp.back()[1] != sy))
          sp.push_back({sx, sy});
        cx = sx;
        cy = sy;
        continue;
      }
    } else if (cmd == 0) {
      throw Error("svg path: data must start with a moveto");
    } else if (cmd == 'M') {
      cmd = 'L';  // implicit lineto after moveto
    } else if (cmd == 'm') {
      cmd = 'l';
    } else if (cmd == 'Z' || cmd == 'z') {
      throw Error("svg path: coordinates after closepath without a command");
    }
    double x, y;
    switch (cmd) {
      case 'M':
      case 'm': {
        need(x);
        need(y);
        if (cmd == 'm') {
          x += cx;
          y += cy;
        }
        subpaths.emplace_back();
        subpaths.back().push_back({x, y});
        cx = sx = x;
        cy = sy = y;
        break;
      }
      case 'L':
      case 'l': {
        need(x);
        need(y);
        if (cmd == 'l') {
          x += cx;
          y += cy;
        }
        current().push_back({x, y});
        cx = x;
        cy = y;
        break;
      }
      case 'H':
      case 'h': {
        need(x);
        if (cmd == 'h') x += cx;
        current().push_back({x, cy});
        cx = x;
        break;
      }
      case 'V':
      case 'v': {
        need(y);
        if (cmd == 'v') y += cy;
        current().push_back({cx, y});
        cy = y;
        break;
      }
      default:
        throw Error("svg path: unreachable command state");
    }
  }
  return subpaths;
}

// Element selector for picking curve geometry out of a figure.
struct Selector {
  enum class Kind { kId, kStroke, kClass };
  Kind kind = Kind::kId;
  std::string value;
};

inline std::string normalize_color(std::string s) {
  for (auto& ch : s) ch = char(std::tolower(static_cast<unsigned char>(ch)));
  s.erase(std::remove_if(s.begin(), s.end(),
                         [](unsigned char c) { return std::isspace(c); }),
          s.end());
  if (s.size() == 4 && s[0] == '#')  // #rgb -> #rrggbb
    s = {'#', s[1], s[1], s[2], s[2], s[3], s[3]};
  if (s.rfind("rgb(", 0) == 0 && s.back() == ')') {
    int rgb[3] = {0, 0, 0};
    std::size_t pos = 4;
    for (int i = 0; i < 3; ++i) {
      double v = 0;
      if (!detail::parse_number(s, pos, v)) return s;
      rgb[i] = int(v);
      while (pos < s.size() && (s[pos] == ',' || s[pos] == ')')) ++pos;
    }
    return format("#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  }
  return s;
}

namespace detail {

inline std::optional<std::string> style_property(const std::string& style,
                                                 const std::string& prop) {
  std::size_t pos = 0;
  while (pos < style.size()) {
    std::size_t end = style.find(';', pos);
    if (end == std::string::npos) end = style.size();
    std::string item = style.substr(pos, end - pos);
    const std::size_t colon = item.find(':');
    if (colon != std::string::npos) {
      std::string key = item.substr(0, colon);
      key.erase(std::remove_if(key.begin(), key.end(),
                               [](unsigned char c) { return std::isspace(c); }),
                key.end());
      if (key == prop) {
        std::string val = item.substr(colon + 1);
        const auto first = val.find_first_not_of(" \t\r\n");
        const auto last = val.find_last_not_of(" \t\r\n");
        if (first == std::string::npos) return std::string();
        return val.substr(first, last - first + 1);
      }
    }
    pos = end + 1;
  }
  return std::nullopt;
}

inline std::optional<std::string> own_stroke(const XmlNode& node) {
  if (const auto* s = node.attr("stroke")) return *s;
  if (const auto* style = node.attr("style")) {
    if (auto v = style_property(*style, "stroke")) return v;
  }
  return std::nullopt;
}

inline bool class_contains(const XmlNode& node, const std::string& token) {
  const auto* cls = node.attr("class");
  if (!cls) return false;
  std::size_t pos = 0;
  while (pos < cls->size()) {
    while (pos < cls->size() &&
           std::isspace(static_cast<unsigned char>((*cls)[pos])))
      ++pos;
    std::size_t end = pos;
    while (end < cls->size() &&
           !std::isspace(static_cast<unsigned char>((*cls)[end])))
      ++end;
    if (cls->substr(pos, end - pos) == token) return true;
    pos = end;
  }
  return false;
}

}  // namespace detail

// One drawable element's geometry flattened to absolute pixel space.
struct SelectedElement {
  std::vector<std::vector<std::array<double, 2>>> subpaths;
  double length = 0.0;  // total pixel length over all subpaths
};

// Walks the tree collecting path / polyline / line elements that match the
// selector.  Id and class selectors match the element or any ancestor
// (curves are commonly wrapped in a labeled group); a stroke selector
// matches on the effective (inherited) stroke color.  Geometry is flattened
// through all ancestor transforms.
inline std::vector<SelectedElement> collect_selected(const XmlNode& root,
                                                     const Selector& sel) {
  std::vector<SelectedElement> out;

  struct Frame {
    const XmlNode* node;
    Affine transform;
    bool matched;  // id/class selector satisfied by self or ancestor
    std::string stroke;
  };

  auto visit = [&](auto&& self, const Frame& frame) -> void {
    const XmlNode& node = *frame.node;
    Affine transform = frame.transform;
    if (const auto* t = node.attr("transform"))
      transform = transform.then(parse_transform(*t));
    std::string stroke = frame.stroke;
    if (auto s = detail::own_stroke(node)) stroke = normalize_color(*s);
    bool matched = frame.matched;
    if (sel.kind == Selector::Kind::kId) {
      const auto* id = node.attr("id");
      matched = matched || (id && *id == sel.value);
    } else if (sel.kind == Selector::Kind::kClass) {
      matched = matched || detail::class_contains(node, sel.value);
    }

    const bool drawable =
        node.name == "path" || node.name == "polyline" || node.name == "line";
    bool selected = matched;
    if (sel.kind == Selector::Kind::kStroke)
      selected = stroke == normalize_color(sel.value);
    if (drawable && selected) {
      SelectedElement el;
      std::vector<std::vector<std::array<double, 2>>> raw;
      if (node.name == "path") {
        const auto* d = node.attr("d");
        if (!d) throw Error("svg: selected path element has no 'd' attribute");
        raw = parse_path_data(*d);
      } else if (node.name == "polyline") {
        const auto* p = node.attr("points");
        if (!p)
          throw Error("svg: selected polyline element has no 'points'");
        std::vector<std::array<double, 2>> pts;
        std::size_t pos = 0;
        double x, y;
        while (detail::parse_number(*p, pos, x)) {
          if (!detail::parse_number(*p, pos, y))
            throw Error("svg: polyline has an odd number of coordinates");
          pts.push_back({x, y});
        }
        raw.push_back(std::move(pts));
      } else {
        auto num = [&](const char* k) {
          const auto* v = node.attr(k);
          if (!v) throw Error(format("svg: line element missing '%s'", k));
          std::size_t pos = 0;
          double val;
          if (!detail::parse_number(*v, pos, val))
            throw Error(format("svg: line attribute '%s' not numeric", k));
          return val;
        };
        raw.push_back({{num("x1"), num("y1")}, {num("x2"), num("y2")}});
      }
      for (auto& sp : raw) {
        for (auto& pt : sp) pt = transform.apply(pt[0], pt[1]);
        for (std::size_t i = 1; i < sp.size(); ++i)
          el.length += std::hypot(sp[i][0] - sp[i - 1][0],
                                  sp[i][1] - sp[i - 1][1]);
        el.subpaths.push_back(std::move(sp));
      }
      out.push_back(std::move(el));
    }
    for (const auto& child : node.children)
      self(self, Frame{&child, transform, matched, stroke});
  };

  visit(visit, Frame{&root, Affine{}, false, std::string()});
  return out;
}

// Embedded pixel/data anchor metadata written by the bundled renderer; lets
// round-trip tests self-calibrate.
inline std::optional<std::string> find_embedded_calibration(
    const XmlNode& root) {
  const auto* id = root.attr("id");
  if (root.name == "metadata" && id && *id == "synthipd-calibration")
    return root.text;
  for (const auto& child : root.children)
    if (auto found = find_embedded_calibration(child)) return found;
  return std::nullopt;
}

}  // namespace synthipd
