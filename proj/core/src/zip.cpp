#include "consim/zip.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "consim/error.hpp"

namespace consim {
namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint32_t kZip64EndSig = 0x06064b50;
constexpr std::uint32_t kZip64LocatorSig = 0x07064b50;
constexpr std::uint16_t kDosDate1980 = (0 << 9) | (1 << 5) | 1;

[[noreturn]] void malformed(const std::string& why) {
  throw Error(ErrorCode::kMalformedFile, "zip: " + why);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(std::size_t offset) const {
    if (offset + sizeof(T) > bytes_.size()) malformed("read past end of archive");
    T v;
    std::memcpy(&v, bytes_.data() + offset, sizeof(T));
    return v;
  }
  std::size_t size() const { return bytes_.size(); }
  const std::uint8_t* data() const { return bytes_.data(); }

 private:
  std::span<const std::uint8_t> bytes_;
};

template <typename T>
void put(Bytes& out, T value) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

std::uint32_t crc_of(std::span<const std::uint8_t> data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < data.size()) {
    const auto chunk = static_cast<uInt>(
        std::min<std::size_t>(data.size() - done, std::numeric_limits<uInt>::max()));
    crc = crc32(crc, data.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

Bytes inflate_raw(std::span<const std::uint8_t> in, std::size_t expected) {
  Bytes out(expected);
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) malformed("inflateInit2 failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const auto produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected) malformed("deflate stream is corrupt");
  return out;
}

}  // namespace

ZipMembers read_zip(std::span<const std::uint8_t> archive) {
  const Reader r(archive);
  if (r.size() < 22) malformed("archive too small");
  std::size_t eocd = std::string::npos;
  const std::size_t lowest = r.size() > 22 + 65535 ? r.size() - 22 - 65535 : 0;
  for (std::size_t pos = r.size() - 22 + 1; pos-- > lowest;) {
    if (r.get<std::uint32_t>(pos) == kEndSig) {
      eocd = pos;
      break;
    }
  }
  if (eocd == std::string::npos) malformed("end of central directory not found");

  std::uint64_t entries = r.get<std::uint16_t>(eocd + 10);
  std::uint64_t cd_offset = r.get<std::uint32_t>(eocd + 16);
  if ((entries == 0xffff || cd_offset == 0xffffffff) && eocd >= 20 &&
      r.get<std::uint32_t>(eocd - 20) == kZip64LocatorSig) {
    const auto z64 = r.get<std::uint64_t>(eocd - 20 + 8);
    if (r.get<std::uint32_t>(z64) != kZip64EndSig) malformed("bad zip64 end record");
    entries = r.get<std::uint64_t>(z64 + 32);
    cd_offset = r.get<std::uint64_t>(z64 + 48);
  }

  ZipMembers members;
  std::size_t pos = cd_offset;
  for (std::uint64_t e = 0; e < entries; ++e) {
    if (r.get<std::uint32_t>(pos) != kCentralSig) malformed("bad central directory entry");
    const auto flags = r.get<std::uint16_t>(pos + 8);
    const auto method = r.get<std::uint16_t>(pos + 10);
    const auto crc = r.get<std::uint32_t>(pos + 16);
    std::uint64_t csize = r.get<std::uint32_t>(pos + 20);
    std::uint64_t usize = r.get<std::uint32_t>(pos + 24);
    const auto name_len = r.get<std::uint16_t>(pos + 28);
    const auto extra_len = r.get<std::uint16_t>(pos + 30);
    const auto comment_len = r.get<std::uint16_t>(pos + 32);
    std::uint64_t local = r.get<std::uint32_t>(pos + 42);
    if (pos + 46 + name_len > r.size()) malformed("truncated member name");
    std::string name(reinterpret_cast<const char*>(r.data() + pos + 46), name_len);

    // zip64 extended information: present fields follow the order usize, csize, offset.
    std::size_t x = pos + 46 + name_len;
    const std::size_t x_end = x + extra_len;
    while (x + 4 <= x_end) {
      const auto id = r.get<std::uint16_t>(x);
      const auto len = r.get<std::uint16_t>(x + 2);
      if (id == 0x0001) {
        std::size_t f = x + 4;
        if (usize == 0xffffffff) { usize = r.get<std::uint64_t>(f); f += 8; }
        if (csize == 0xffffffff) { csize = r.get<std::uint64_t>(f); f += 8; }
        if (local == 0xffffffff) { local = r.get<std::uint64_t>(f); }
      }
      x += 4 + len;
    }
    if (flags & 0x1) throw Error(ErrorCode::kUnsupportedFormat, "zip: encrypted member " + name);

    if (r.get<std::uint32_t>(local) != kLocalSig) malformed("bad local header for " + name);
    const auto lname = r.get<std::uint16_t>(local + 26);
    const auto lextra = r.get<std::uint16_t>(local + 28);
    const std::size_t data_at = local + 30 + lname + lextra;
    if (data_at + csize > r.size()) malformed("truncated data for " + name);
    std::span<const std::uint8_t> raw(r.data() + data_at, csize);

    Bytes content;
    if (method == 0) {
      if (csize != usize) malformed("stored member size mismatch for " + name);
      content.assign(raw.begin(), raw.end());
    } else if (method == 8) {
      content = inflate_raw(raw, usize);
    } else {
      throw Error(ErrorCode::kUnsupportedFormat,
                  "zip: member " + name + " uses compression method " + std::to_string(method));
    }
    if (crc_of(content) != crc) malformed("CRC mismatch for " + name);
    if (!name.empty() && name.back() != '/') members.emplace(std::move(name), std::move(content));
    pos += 46 + name_len + extra_len + comment_len;
  }
  return members;
}

Bytes write_zip(const ZipMembers& members) {
  Bytes out;
  Bytes central;
  for (const auto& [name, content] : members) {
    if (content.size() >= 0xffffffffULL || out.size() >= 0xffffffffULL) {
      throw Error(ErrorCode::kInvalidArgument, "zip: member too large for a non-zip64 archive");
    }
    const auto crc = crc_of(content);
    const auto size = static_cast<std::uint32_t>(content.size());
    const auto offset = static_cast<std::uint32_t>(out.size());
    const auto name_len = static_cast<std::uint16_t>(name.size());

    put<std::uint32_t>(out, kLocalSig);
    put<std::uint16_t>(out, 20);
    put<std::uint16_t>(out, 0);
    put<std::uint16_t>(out, 0);
    put<std::uint16_t>(out, 0);
    put<std::uint16_t>(out, kDosDate1980);
    put<std::uint32_t>(out, crc);
    put<std::uint32_t>(out, size);
    put<std::uint32_t>(out, size);
    put<std::uint16_t>(out, name_len);
    put<std::uint16_t>(out, 0);
    out.insert(out.end(), name.begin(), name.end());
    out.insert(out.end(), content.begin(), content.end());

    put<std::uint32_t>(central, kCentralSig);
    put<std::uint16_t>(central, 20);
    put<std::uint16_t>(central, 20);
    put<std::uint16_t>(central, 0);
    put<std::uint16_t>(central, 0);
    put<std::uint16_t>(central, 0);
    put<std::uint16_t>(central, kDosDate1980);
    put<std::uint32_t>(central, crc);
    put<std::uint32_t>(central, size);
    put<std::uint32_t>(central, size);
    put<std::uint16_t>(central, name_len);
    put<std::uint16_t>(central, 0);
    put<std::uint16_t>(central, 0);
    put<std::uint16_t>(central, 0);
    put<std::uint16_t>(central, 0);
    put<std::uint32_t>(central, 0);
    put<std::uint32_t>(central, offset);
    central.insert(central.end(), name.begin(), name.end());
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out.insert(out.end(), central.begin(), central.end());
  put<std::uint32_t>(out, kEndSig);
  put<std::uint16_t>(out, 0);
  put<std::uint16_t>(out, 0);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(members.size()));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(members.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(central.size()));
  put<std::uint32_t>(out, cd_offset);
  put<std::uint16_t>(out, 0);
  return out;
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot rename into " + path + ": " + ec.message());
}

void write_text_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

ZipMembers read_zip_file(const std::string& path) {
  const Bytes bytes = read_file(path);
  return read_zip(bytes);
}

void write_zip_file(const std::string& path, const ZipMembers& members) {
  write_file_atomic(path, write_zip(members));
}

std::map<std::string, Matrix> read_npz(const std::string& path) {
  std::map<std::string, Matrix> out;
  for (const auto& [name, content] : read_zip_file(path)) {
    std::string key = name;
    if (key.size() > 4 && key.ends_with(".npy")) key.resize(key.size() - 4);
    try {
      out.emplace(std::move(key), read_npy(content).data);
    } catch (const Error& e) {
      throw Error(e.code(), path + ":" + name + ": " + e.what());
    }
  }
  return out;
}

void write_npz(const std::string& path, const std::map<std::string, Matrix>& arrays) {
  ZipMembers members;
  for (const auto& [name, m] : arrays) members.emplace(name + ".npy", write_npy(m));
  write_zip_file(path, members);
}

}  // namespace consim
