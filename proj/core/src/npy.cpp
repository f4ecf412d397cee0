#include "consim/npy.hpp"

#include <bit>
#include <cctype>
#include <cstring>
#include <string>
#include <string_view>

#include "consim/error.hpp"
#include "consim/zip.hpp"

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

namespace consim {
namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

[[noreturn]] void malformed(const std::string& why) {
  throw Error(ErrorCode::kMalformedFile, "npy: " + why);
}

// The header is a Python dict literal. We only need three keys, so a small
// scanner over the literal is enough.
struct Header {
  std::string descr;
  bool fortran_order = false;
  std::vector<long long> shape;
};

void skip_space(std::string_view s, std::size_t& pos) {
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
}

std::string parse_string(std::string_view s, std::size_t& pos) {
  skip_space(s, pos);
  if (pos >= s.size() || (s[pos] != '\'' && s[pos] != '"')) malformed("expected string in header");
  const char quote = s[pos++];
  const auto end = s.find(quote, pos);
  if (end == std::string_view::npos) malformed("unterminated string in header");
  std::string out(s.substr(pos, end - pos));
  pos = end + 1;
  return out;
}

Header parse_header(std::string_view s) {
  Header h;
  bool have_descr = false, have_order = false, have_shape = false;
  std::size_t pos = 0;
  skip_space(s, pos);
  if (pos >= s.size() || s[pos] != '{') malformed("header is not a dict");
  ++pos;
  while (true) {
    skip_space(s, pos);
    if (pos >= s.size()) malformed("unterminated header dict");
    if (s[pos] == '}') break;
    const std::string key = parse_string(s, pos);
    skip_space(s, pos);
    if (pos >= s.size() || s[pos] != ':') malformed("expected ':' after key");
    ++pos;
    skip_space(s, pos);
    if (key == "descr") {
      h.descr = parse_string(s, pos);
      have_descr = true;
    } else if (key == "fortran_order") {
      if (s.substr(pos, 4) == "True") {
        h.fortran_order = true;
        pos += 4;
      } else if (s.substr(pos, 5) == "False") {
        pos += 5;
      } else {
        malformed("fortran_order must be True or False");
      }
      have_order = true;
    } else if (key == "shape") {
      if (pos >= s.size() || s[pos] != '(') malformed("shape must be a tuple");
      ++pos;
      while (true) {
        skip_space(s, pos);
        if (pos < s.size() && s[pos] == ')') {
          ++pos;
          break;
        }
        std::size_t start = pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
        if (start == pos) malformed("bad shape entry");
        h.shape.push_back(std::stoll(std::string(s.substr(start, pos - start))));
        skip_space(s, pos);
        if (pos < s.size() && s[pos] == ',') ++pos;
      }
      have_shape = true;
    } else {
      malformed("unexpected header key '" + key + "'");
    }
    skip_space(s, pos);
    if (pos < s.size() && s[pos] == ',') ++pos;
  }
  if (!have_descr || !have_order || !have_shape) malformed("header lacks descr/fortran_order/shape");
  return h;
}

template <typename T>
T load_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

}  // namespace

NpyArray read_npy(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicLen + 4 || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    malformed("missing \\x93NUMPY magic");
  }
  const std::uint8_t major = bytes[6];
  const std::uint8_t minor = bytes[7];
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1 && minor == 0) {
    header_len = load_le<std::uint16_t>(bytes.data() + 8);
    offset = 10;
  } else if (major == 2 && minor == 0) {
    if (bytes.size() < 12) malformed("truncated v2 header");
    header_len = load_le<std::uint32_t>(bytes.data() + 8);
    offset = 12;
  } else {
    throw Error(ErrorCode::kUnsupportedFormat,
                "npy: unsupported format version " + std::to_string(major) + "." +
                    std::to_string(minor));
  }
  if (bytes.size() < offset + header_len) malformed("truncated header");
  const Header h = parse_header(
      std::string_view(reinterpret_cast<const char*>(bytes.data() + offset), header_len));

  NpyArray out;
  std::size_t item = 0;
  if (h.descr == "<f8") {
    out.dtype = NpyDtype::kFloat64;
    item = 8;
  } else if (h.descr == "<f4") {
    out.dtype = NpyDtype::kFloat32;
    item = 4;
  } else {
    throw Error(ErrorCode::kUnsupportedFormat,
                "npy: unsupported dtype '" + h.descr + "' (only <f4 and <f8)");
  }
  if (h.shape.size() != 2) {
    throw Error(ErrorCode::kUnsupportedFormat,
                "npy: expected a rank-2 array, got rank " + std::to_string(h.shape.size()));
  }
  const auto rows = static_cast<Index>(h.shape[0]);
  const auto cols = static_cast<Index>(h.shape[1]);
  const std::size_t count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  const std::size_t data_offset = offset + header_len;
  if (bytes.size() - data_offset != count * item) {
    malformed("payload holds " + std::to_string(bytes.size() - data_offset) + " bytes, expected " +
              std::to_string(count * item));
  }
  out.fortran_order = h.fortran_order;
  out.data.resize(rows, cols);
  const std::uint8_t* p = bytes.data() + data_offset;
  for (std::size_t flat = 0; flat < count; ++flat, p += item) {
    const double v = item == 8 ? load_le<double>(p) : static_cast<double>(load_le<float>(p));
    Index r, c;
    if (h.fortran_order) {
      r = static_cast<Index>(flat % static_cast<std::size_t>(rows));
      c = static_cast<Index>(flat / static_cast<std::size_t>(rows));
    } else {
      r = static_cast<Index>(flat / static_cast<std::size_t>(cols));
      c = static_cast<Index>(flat % static_cast<std::size_t>(cols));
    }
    out.data(r, c) = v;
  }
  return out;
}

Bytes write_npy(const Matrix& matrix) {
  std::string dict = "{'descr': '<f8', 'fortran_order': False, 'shape': (" +
                     std::to_string(matrix.rows()) + ", " + std::to_string(matrix.cols()) + "), }";
  // magic(6) + version(2) + length(2) + dict + padding + '\n' is a multiple of 64.
  const std::size_t unpadded = kMagicLen + 2 + 2 + dict.size() + 1;
  const std::size_t padded = (unpadded + 63) / 64 * 64;
  dict.append(padded - unpadded, ' ');
  dict.push_back('\n');
  const auto header_len = static_cast<std::uint16_t>(dict.size());

  Bytes out;
  out.reserve(padded + static_cast<std::size_t>(matrix.size()) * 8);
  out.insert(out.end(), kMagic, kMagic + kMagicLen);
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(header_len & 0xff));
  out.push_back(static_cast<std::uint8_t>(header_len >> 8));
  out.insert(out.end(), dict.begin(), dict.end());
  for (Index r = 0; r < matrix.rows(); ++r) {
    for (Index c = 0; c < matrix.cols(); ++c) {
      std::uint8_t buf[8];
      const double v = matrix(r, c);
      std::memcpy(buf, &v, 8);
      out.insert(out.end(), buf, buf + 8);
    }
  }
  return out;
}

Matrix read_npy_file(const std::string& path) {
  const Bytes bytes = read_file(path);
  return read_npy(bytes).data;
}

void write_npy_file(const std::string& path, const Matrix& matrix) {
  write_file_atomic(path, write_npy(matrix));
}

}  // namespace consim
