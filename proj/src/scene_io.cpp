#include "uamvs/scene_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace uamvs {

namespace {

// Largest raster edge accepted from a header. Anything larger is treated as
// corrupt rather than attempted.
constexpr std::int64_t kMaxDimension = 1 << 16;

struct Line {
  int number;
  std::vector<std::string_view> tokens;
};

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

// Non-blank lines with their 1-based line numbers.
std::vector<Line> tokenize_lines(std::string_view text) {
  std::vector<Line> lines;
  int number = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++number;
    auto tokens = split_ws(text.substr(start, end - start));
    if (!tokens.empty()) lines.push_back({number, std::move(tokens)});
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

double parse_real(std::string_view tok, int line) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw ParseError("expected a finite number, got '" + std::string(tok) + "'", line);
  }
  return v;
}

long long parse_integer(std::string_view tok, int line) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec == std::errc() && ptr == tok.data() + tok.size()) return v;
  // Some tools write counts as reals ("192.0").
  const double r = parse_real(tok, line);
  if (r != std::floor(r) || std::abs(r) > 1e15) {
    throw ParseError("expected an integer, got '" + std::string(tok) + "'", line);
  }
  return static_cast<long long>(r);
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Cursor over binary headers (PFM, PPM) that are whitespace-delimited text
// followed by a raw payload.
class HeaderCursor {
 public:
  explicit HeaderCursor(std::string_view bytes, bool allow_comments)
      : bytes_(bytes), allow_comments_(allow_comments) {}

  std::string_view next_token(const char* what) {
    skip_space_and_comments();
    std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("unexpected end of header reading ") + what);
    return bytes_.substr(start, pos_ - start);
  }

  // Header ends with exactly one whitespace byte before the payload.
  std::size_t payload_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw ParseError("missing whitespace between header and payload");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else if (allow_comments_ && c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
  bool allow_comments_;
};

std::int64_t parse_dimension(std::string_view tok, const char* what) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(std::string("invalid ") + what + " '" + std::string(tok) + "'");
  }
  if (v <= 0 || v > kMaxDimension) {
    throw ParseError(std::string(what) + " out of range: " + std::string(tok));
  }
  return v;
}

void require_payload(std::size_t available, std::uint64_t expected) {
  if (available < expected) {
    throw ParseError("truncated payload: expected " + std::to_string(expected) +
                     " bytes, got " + std::to_string(available));
  }
}

std::uint32_t load_u32(const char* p, bool little_endian) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  if ((std::endian::native == std::endian::little) != little_endian) v = __builtin_bswap32(v);
  return v;
}

void store_u32(std::string& out, std::uint32_t v) {
  if constexpr (std::endian::native != std::endian::little) v = __builtin_bswap32(v);
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

float load_f32(const char* p, bool little_endian) {
  return std::bit_cast<float>(load_u32(p, little_endian));
}

void store_f32(std::string& out, float v) { store_u32(out, std::bit_cast<std::uint32_t>(v)); }

}  // namespace

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------- cam.txt

CameraFile parse_camera(std::string_view text) {
  const auto lines = tokenize_lines(text);
  std::size_t i = 0;
  auto expect_keyword = [&](std::string_view keyword) {
    if (i >= lines.size()) throw ParseError("missing '" + std::string(keyword) + "' section");
    const Line& l = lines[i];
    if (l.tokens.size() != 1 || l.tokens[0] != keyword) {
      throw ParseError("expected '" + std::string(keyword) + "'", l.number);
    }
    ++i;
  };
  auto read_row = [&](std::size_t n, const char* what) {
    if (i >= lines.size()) throw ParseError(std::string("unexpected end of file in ") + what);
    const Line& l = lines[i++];
    if (l.tokens.size() != n) {
      throw ParseError(std::string(what) + " row needs " + std::to_string(n) + " values, got " +
                           std::to_string(l.tokens.size()),
                       l.number);
    }
    std::vector<double> row;
    for (auto tok : l.tokens) row.push_back(parse_real(tok, l.number));
    return row;
  };

  CameraFile cam;
  expect_keyword("extrinsic");
  for (int r = 0; r < 4; ++r) {
    auto row = read_row(4, "extrinsic");
    for (int c = 0; c < 4; ++c) cam.extrinsic(r, c) = row[c];
  }
  const int extrinsic_last = lines[i - 1].number;
  expect_keyword("intrinsic");
  for (int r = 0; r < 3; ++r) {
    auto row = read_row(3, "intrinsic");
    for (int c = 0; c < 3; ++c) cam.intrinsic(r, c) = row[c];
  }
  const int intrinsic_last = lines[i - 1].number;
  if (i >= lines.size()) throw ParseError("missing depth range line");
  const Line& last = lines[i++];
  if (last.tokens.size() != 2 && last.tokens.size() != 4) {
    throw ParseError("depth line needs 2 or 4 values, got " + std::to_string(last.tokens.size()),
                     last.number);
  }
  cam.depth_min = parse_real(last.tokens[0], last.number);
  cam.depth_interval = parse_real(last.tokens[1], last.number);
  if (last.tokens.size() == 4) {
    const long long count = parse_integer(last.tokens[2], last.number);
    if (count < 1 || count > std::numeric_limits<int>::max()) {
      throw ParseError("depth count must be positive", last.number);
    }
    cam.depth_count = static_cast<int>(count);
    cam.depth_max = parse_real(last.tokens[3], last.number);
  }
  if (i < lines.size()) throw ParseError("unexpected trailing content", lines[i].number);

  if (cam.extrinsic(3, 0) != 0.0 || cam.extrinsic(3, 1) != 0.0 || cam.extrinsic(3, 2) != 0.0 ||
      cam.extrinsic(3, 3) != 1.0) {
    throw ParseError("extrinsic bottom row must be 0 0 0 1", extrinsic_last);
  }
  if (cam.intrinsic(2, 2) != 1.0) {
    throw ParseError("intrinsic[2][2] must be 1", intrinsic_last);
  }
  if (cam.depth_min <= 0.0 || cam.depth_interval <= 0.0) {
    throw ParseError("depth_min and depth_interval must be positive", last.number);
  }
  if (cam.depth_max && !(cam.depth_min < *cam.depth_max)) {
    throw ParseError("depth_min must be below depth_max", last.number);
  }
  return cam;
}

std::string serialize_camera(const CameraFile& cam) {
  std::string out = "extrinsic\n";
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) out += format_real(cam.extrinsic(r, c)) + (c < 3 ? " " : "\n");
  }
  out += "\nintrinsic\n";
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out += format_real(cam.intrinsic(r, c)) + (c < 2 ? " " : "\n");
  }
  out += "\n" + format_real(cam.depth_min) + " " + format_real(cam.depth_interval);
  if (cam.depth_count && cam.depth_max) {
    out += " " + std::to_string(*cam.depth_count) + " " + format_real(*cam.depth_max);
  }
  out += "\n";
  return out;
}

// ---------------------------------------------------------------- pair.txt

ViewGraph parse_pairs(std::string_view text) {
  const auto lines = tokenize_lines(text);
  if (lines.empty()) throw ParseError("empty pair file");
  const Line& head = lines[0];
  if (head.tokens.size() != 1) throw ParseError("first line must hold the view count", head.number);
  const long long n = parse_integer(head.tokens[0], head.number);
  if (n < 0 || n > kMaxDimension) throw ParseError("view count out of range", head.number);

  ViewGraph graph;
  graph.num_views = static_cast<int>(n);
  graph.neighbors.assign(static_cast<std::size_t>(n), {});
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::size_t i = 1;
  for (long long v = 0; v < n; ++v) {
    if (i + 2 > lines.size()) throw ParseError("expected " + std::to_string(n) + " view entries");
    const Line& ref_line = lines[i++];
    if (ref_line.tokens.size() != 1) throw ParseError("expected a single reference id", ref_line.number);
    const long long ref = parse_integer(ref_line.tokens[0], ref_line.number);
    if (ref < 0 || ref >= n) throw ParseError("reference id out of range", ref_line.number);
    if (seen[ref]) throw ParseError("duplicate reference id " + std::to_string(ref), ref_line.number);
    seen[ref] = true;

    const Line& list = lines[i++];
    const long long count = parse_integer(list.tokens[0], list.number);
    if (count < 0 || static_cast<std::size_t>(count) * 2 + 1 != list.tokens.size()) {
      throw ParseError("neighbor count " + std::to_string(count) + " does not match " +
                           std::to_string((list.tokens.size() - 1) / 2.0) + " listed pairs",
                       list.number);
    }
    auto& out = graph.neighbors[ref];
    for (long long k = 0; k < count; ++k) {
      const long long id = parse_integer(list.tokens[1 + 2 * k], list.number);
      if (id < 0 || id >= n) {
        throw ParseError("neighbor id " + std::to_string(id) + " out of range", list.number);
      }
      if (id == ref) throw ParseError("view paired with itself", list.number);
      out.push_back({static_cast<int>(id), parse_real(list.tokens[2 + 2 * k], list.number)});
    }
  }
  if (i < lines.size()) throw ParseError("unexpected trailing content", lines[i].number);
  return graph;
}

std::string serialize_pairs(const ViewGraph& graph) {
  std::string out = std::to_string(graph.num_views) + "\n";
  for (int v = 0; v < graph.num_views; ++v) {
    out += std::to_string(v) + "\n";
    const auto& list = graph.neighbors.at(v);
    out += std::to_string(list.size());
    for (const auto& nb : list) out += " " + std::to_string(nb.id) + " " + format_real(nb.score);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------- PFM

PfmImage read_pfm(std::string_view bytes) {
  HeaderCursor cur(bytes, false);
  const auto magic = cur.next_token("magic");
  int channels = 0;
  if (magic == "Pf") {
    channels = 1;
  } else if (magic == "PF") {
    channels = 3;
  } else {
    throw ParseError("bad PFM magic");
  }
  const auto width = parse_dimension(cur.next_token("width"), "width");
  const auto height = parse_dimension(cur.next_token("height"), "height");
  const double scale = parse_real(cur.next_token("scale"), 0);
  if (scale == 0.0) throw ParseError("PFM scale must be non-zero");
  const bool little = scale < 0.0;
  const std::size_t offset = cur.payload_offset();
  const std::uint64_t expected = static_cast<std::uint64_t>(width) * height * channels * 4;
  require_payload(bytes.size() - offset, expected);

  PfmImage out{Raster(static_cast<int>(width), static_cast<int>(height), channels), std::abs(scale)};
  const char* p = bytes.data() + offset;
  for (std::int64_t row = 0; row < height; ++row) {
    const int y = static_cast<int>(height - 1 - row);  // stored bottom-up
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        out.raster.at(x, y, c) = load_f32(p, little);
        p += 4;
      }
    }
  }
  return out;
}

Bytes write_pfm(const Raster& raster) {
  if (raster.channels() != 1 && raster.channels() != 3) {
    throw InvalidArgument("PFM holds 1 or 3 channels");
  }
  Bytes out = (raster.channels() == 1 ? "Pf\n" : "PF\n") + std::to_string(raster.width()) + " " +
              std::to_string(raster.height()) + "\n-1.0\n";
  out.reserve(out.size() + raster.samples().size() * 4);
  for (int y = raster.height() - 1; y >= 0; --y) {
    for (int x = 0; x < raster.width(); ++x) {
      for (int c = 0; c < raster.channels(); ++c) {
        store_f32(out, static_cast<float>(raster.at(x, y, c)));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- .flo

namespace {
constexpr float kFloSentinel = 202021.25f;
}

Raster read_flo(std::string_view bytes) {
  require_payload(bytes.size(), 12);
  const float tag = load_f32(bytes.data(), true);
  if (tag != kFloSentinel) throw ParseError("bad .flo sentinel");
  const auto width = static_cast<std::int32_t>(load_u32(bytes.data() + 4, true));
  const auto height = static_cast<std::int32_t>(load_u32(bytes.data() + 8, true));
  if (width <= 0 || height <= 0 || width > kMaxDimension || height > kMaxDimension) {
    throw ParseError(".flo dimensions out of range");
  }
  const std::uint64_t expected = static_cast<std::uint64_t>(width) * height * 8;
  require_payload(bytes.size() - 12, expected);
  Raster out(width, height, 2);
  const char* p = bytes.data() + 12;
  for (auto& s : out.samples()) {
    s = load_f32(p, true);
    p += 4;
  }
  return out;
}

Bytes write_flo(const Raster& flow) {
  if (flow.channels() != 2) throw InvalidArgument(".flo holds exactly 2 channels");
  Bytes out;
  out.reserve(12 + flow.samples().size() * 4);
  store_f32(out, kFloSentinel);
  store_u32(out, static_cast<std::uint32_t>(flow.width()));
  store_u32(out, static_cast<std::uint32_t>(flow.height()));
  for (double s : flow.samples()) store_f32(out, static_cast<float>(s));
  return out;
}

// ---------------------------------------------------------------- PLY

namespace {

enum class PlyType { kInt8, kUint8, kInt16, kUint16, kInt32, kUint32, kFloat32, kFloat64 };

PlyType ply_type(std::string_view name, int line) {
  if (name == "char" || name == "int8") return PlyType::kInt8;
  if (name == "uchar" || name == "uint8") return PlyType::kUint8;
  if (name == "short" || name == "int16") return PlyType::kInt16;
  if (name == "ushort" || name == "uint16") return PlyType::kUint16;
  if (name == "int" || name == "int32") return PlyType::kInt32;
  if (name == "uint" || name == "uint32") return PlyType::kUint32;
  if (name == "float" || name == "float32") return PlyType::kFloat32;
  if (name == "double" || name == "float64") return PlyType::kFloat64;
  throw ParseError("unknown PLY type '" + std::string(name) + "'", line);
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::kInt8:
    case PlyType::kUint8: return 1;
    case PlyType::kInt16:
    case PlyType::kUint16: return 2;
    case PlyType::kInt32:
    case PlyType::kUint32:
    case PlyType::kFloat32: return 4;
    case PlyType::kFloat64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::kFloat32;
  bool is_list = false;
  PlyType count_type = PlyType::kUint8;
};

struct PlyElement {
  std::string name;
  std::uint64_t count = 0;
  std::vector<PlyProperty> properties;
};

class BinaryReader {
 public:
  BinaryReader(std::string_view data, bool little) : data_(data), little_(little) {}

  double read(PlyType t) {
    const std::size_t n = ply_size(t);
    if (data_.size() - pos_ < n) {
      throw ParseError("truncated PLY payload at byte " + std::to_string(pos_));
    }
    unsigned char b[8];
    std::memcpy(b, data_.data() + pos_, n);
    pos_ += n;
    if ((std::endian::native == std::endian::little) != little_) std::reverse(b, b + n);
    switch (t) {
      case PlyType::kInt8: return static_cast<double>(std::bit_cast<std::int8_t>(b[0]));
      case PlyType::kUint8: return b[0];
      case PlyType::kInt16: { std::int16_t v; std::memcpy(&v, b, 2); return v; }
      case PlyType::kUint16: { std::uint16_t v; std::memcpy(&v, b, 2); return v; }
      case PlyType::kInt32: { std::int32_t v; std::memcpy(&v, b, 4); return v; }
      case PlyType::kUint32: { std::uint32_t v; std::memcpy(&v, b, 4); return v; }
      case PlyType::kFloat32: { float v; std::memcpy(&v, b, 4); return v; }
      case PlyType::kFloat64: { double v; std::memcpy(&v, b, 8); return v; }
    }
    return 0.0;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  bool little_;
};

std::uint8_t to_color(double v) {
  if (!(v >= 0.0)) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v));
}

}  // namespace

PointCloud read_ply(std::string_view bytes) {
  // Header.
  std::size_t pos = 0;
  int line_no = 0;
  auto next_line = [&]() -> std::string_view {
    if (pos >= bytes.size()) throw ParseError("PLY header not terminated by end_header");
    std::size_t end = bytes.find('\n', pos);
    if (end == std::string_view::npos) end = bytes.size();
    std::string_view l = bytes.substr(pos, end - pos);
    pos = std::min(bytes.size(), end + 1);
    ++line_no;
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    return l;
  };

  if (next_line() != "ply") throw ParseError("bad PLY magic", 1);
  enum class Fmt { kAscii, kLittle, kBig } fmt = Fmt::kAscii;
  bool have_format = false;
  std::vector<PlyElement> elements;
  for (;;) {
    const auto l = next_line();
    const auto tok = split_ws(l);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() != 3) throw ParseError("malformed format line", line_no);
      if (tok[1] == "ascii") fmt = Fmt::kAscii;
      else if (tok[1] == "binary_little_endian") fmt = Fmt::kLittle;
      else if (tok[1] == "binary_big_endian") fmt = Fmt::kBig;
      else throw ParseError("unsupported PLY format '" + std::string(tok[1]) + "'", line_no);
      have_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError("malformed element line", line_no);
      PlyElement e;
      e.name = std::string(tok[1]);
      const long long c = parse_integer(tok[2], line_no);
      if (c < 0) throw ParseError("negative element count", line_no);
      e.count = static_cast<std::uint64_t>(c);
      elements.push_back(std::move(e));
    } else if (tok[0] == "property") {
      if (elements.empty()) throw ParseError("property before any element", line_no);
      PlyProperty p;
      if (tok.size() == 5 && tok[1] == "list") {
        p.is_list = true;
        p.count_type = ply_type(tok[2], line_no);
        p.type = ply_type(tok[3], line_no);
        p.name = std::string(tok[4]);
      } else if (tok.size() == 3) {
        p.type = ply_type(tok[1], line_no);
        p.name = std::string(tok[2]);
      } else {
        throw ParseError("malformed property line", line_no);
      }
      elements.back().properties.push_back(std::move(p));
    } else {
      throw ParseError("unknown header keyword '" + std::string(tok[0]) + "'", line_no);
    }
  }
  if (!have_format) throw ParseError("PLY header has no format line");

  const std::string_view body = bytes.substr(pos);
  PointCloud cloud;

  // Body: walk elements in order, keep only vertex data.
  std::vector<std::string_view> ascii_lines;
  std::size_t ascii_index = 0;
  int ascii_line_base = line_no;
  if (fmt == Fmt::kAscii) {
    std::size_t s = 0;
    while (s < body.size()) {
      std::size_t e = body.find('\n', s);
      if (e == std::string_view::npos) e = body.size();
      ascii_lines.push_back(body.substr(s, e - s));
      s = e + 1;
    }
  }
  BinaryReader bin(body, fmt == Fmt::kLittle);

  for (const auto& el : elements) {
    const bool is_vertex = el.name == "vertex";
    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
    for (std::size_t k = 0; k < el.properties.size(); ++k) {
      const auto& p = el.properties[k];
      if (p.is_list) continue;
      const int idx = static_cast<int>(k);
      if (p.name == "x") ix = idx;
      else if (p.name == "y") iy = idx;
      else if (p.name == "z") iz = idx;
      else if (p.name == "red" || p.name == "diffuse_red") ir = idx;
      else if (p.name == "green" || p.name == "diffuse_green") ig = idx;
      else if (p.name == "blue" || p.name == "diffuse_blue") ib = idx;
    }
    const bool colored = ir >= 0 && ig >= 0 && ib >= 0;
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) throw ParseError("vertex element lacks x/y/z");
    // Property-less elements occupy no binary payload.
    if (el.properties.empty() && fmt != Fmt::kAscii) continue;
    // Each instance takes at least one byte or one line; reject counts the
    // payload cannot possibly hold before looping or reserving memory.
    const std::size_t budget = fmt == Fmt::kAscii ? ascii_lines.size() - ascii_index : bin.remaining();
    if (el.count > budget) {
      throw ParseError("truncated payload: " + el.name + " count " + std::to_string(el.count) +
                       " exceeds available data");
    }
    if (is_vertex) {
      cloud.points.reserve(el.count);
      if (colored) cloud.colors.reserve(el.count);
    }

    std::vector<double> values(el.properties.size());
    for (std::uint64_t n = 0; n < el.count; ++n) {
      if (fmt == Fmt::kAscii) {
        if (ascii_index >= ascii_lines.size()) {
          throw ParseError("truncated payload: missing " + el.name + " rows");
        }
        const int ln = ascii_line_base + static_cast<int>(ascii_index) + 1;
        const auto tok = split_ws(ascii_lines[ascii_index++]);
        std::size_t t = 0;
        for (std::size_t k = 0; k < el.properties.size(); ++k) {
          const auto& p = el.properties[k];
          if (t >= tok.size()) throw ParseError("too few values in " + el.name + " row", ln);
          if (p.is_list) {
            const long long c = parse_integer(tok[t++], ln);
            if (c < 0 || static_cast<std::size_t>(c) > tok.size() - t) {
              throw ParseError("bad list length", ln);
            }
            t += static_cast<std::size_t>(c);
          } else {
            values[k] = parse_real(tok[t++], ln);
            // Declared float32 values are stored at that precision.
            if (p.type == PlyType::kFloat32) values[k] = static_cast<float>(values[k]);
          }
        }
        if (t != tok.size()) throw ParseError("too many values in " + el.name + " row", ln);
      } else {
        for (std::size_t k = 0; k < el.properties.size(); ++k) {
          const auto& p = el.properties[k];
          if (p.is_list) {
            const double c = bin.read(p.count_type);
            if (c < 0 || c * ply_size(p.type) > static_cast<double>(bin.remaining())) {
              throw ParseError("bad list length in " + el.name);
            }
            for (long long q = 0; q < static_cast<long long>(c); ++q) bin.read(p.type);
          } else {
            values[k] = bin.read(p.type);
          }
        }
      }
      if (is_vertex) {
        Eigen::Vector3d pt(values[ix], values[iy], values[iz]);
        if (!pt.allFinite()) throw ParseError("non-finite vertex coordinate");
        cloud.points.push_back(pt);
        if (colored) cloud.colors.push_back({to_color(values[ir]), to_color(values[ig]), to_color(values[ib])});
      }
    }
    if (is_vertex) break;  // nothing after the vertices is needed
  }
  return cloud;
}

Bytes write_ply(const PointCloud& cloud, PlyFormat format) {
  if (cloud.has_colors() && cloud.colors.size() != cloud.points.size()) {
    throw InvalidArgument("color count does not match point count");
  }
  Bytes out = "ply\nformat ";
  out += format == PlyFormat::kAscii ? "ascii 1.0\n" : "binary_little_endian 1.0\n";
  out += "element vertex " + std::to_string(cloud.size()) + "\n";
  out += "property float x\nproperty float y\nproperty float z\n";
  if (cloud.has_colors()) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    if (format == PlyFormat::kAscii) {
      char buf[160];
      int n = std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g", static_cast<double>(static_cast<float>(p.x())),
                            static_cast<double>(static_cast<float>(p.y())),
                            static_cast<double>(static_cast<float>(p.z())));
      out.append(buf, static_cast<std::size_t>(n));
      if (cloud.has_colors()) {
        const auto& c = cloud.colors[i];
        n = std::snprintf(buf, sizeof(buf), " %u %u %u", c[0], c[1], c[2]);
        out.append(buf, static_cast<std::size_t>(n));
      }
      out += "\n";
    } else {
      for (int k = 0; k < 3; ++k) store_f32(out, static_cast<float>(p[k]));
      if (cloud.has_colors()) {
        for (auto c : cloud.colors[i]) out.push_back(static_cast<char>(c));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- PPM/PGM

Raster read_image(std::string_view bytes, MaxvalPolicy policy) {
  HeaderCursor cur(bytes, true);
  const auto magic = cur.next_token("magic");
  int channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw ParseError("unsupported image magic (need P5 or P6)");
  const auto width = parse_dimension(cur.next_token("width"), "width");
  const auto height = parse_dimension(cur.next_token("height"), "height");
  const auto maxval = parse_dimension(cur.next_token("maxval"), "maxval");
  if (maxval > 65535) throw ParseError("maxval above 65535");
  if (maxval != 255 && policy == MaxvalPolicy::kReject) {
    throw ParseError("maxval " + std::to_string(maxval) + " is not 255");
  }
  const std::size_t offset = cur.payload_offset();
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::uint64_t expected = static_cast<std::uint64_t>(width) * height * channels * bps;
  require_payload(bytes.size() - offset, expected);

  Raster out(static_cast<int>(width), static_cast<int>(height), channels);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  const double denom = static_cast<double>(maxval);
  for (auto& s : out.samples()) {
    unsigned v = *p++;
    if (bps == 2) v = (v << 8) | *p++;
    s = std::min(1.0, v / denom);
  }
  return out;
}

Bytes write_image(const Raster& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw InvalidArgument("PPM/PGM holds 1 or 3 channels");
  }
  Bytes out = (image.channels() == 1 ? "P5\n" : "P6\n") + std::to_string(image.width()) + " " +
              std::to_string(image.height()) + "\n255\n";
  out.reserve(out.size() + image.samples().size());
  for (double s : image.samples()) {
    const double c = std::isfinite(s) ? std::clamp(s, 0.0, 1.0) : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  return out;
}

}  // namespace uamvs
