#pragma once

#include <map>
#include <string>

#include "consim/npy.hpp"

namespace consim {

// Minimal zip container for NPZ archives. Reads stored and deflated members
// (including the zip64 extra fields numpy emits); writes stored members with
// a fixed timestamp so identical content gives identical archives.
using ZipMembers = std::map<std::string, Bytes>;

ZipMembers read_zip(std::span<const std::uint8_t> archive);
Bytes write_zip(const ZipMembers& members);

ZipMembers read_zip_file(const std::string& path);
void write_zip_file(const std::string& path, const ZipMembers& members);

// NPZ convenience: member names carry the ".npy" suffix on disk but not here.
std::map<std::string, Matrix> read_npz(const std::string& path);
void write_npz(const std::string& path, const std::map<std::string, Matrix>& arrays);

Bytes read_file(const std::string& path);
// Writes through a temporary file and rename, so readers never see a partial file.
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace consim
