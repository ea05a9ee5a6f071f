#include "moog/serial.hpp"

#include <cstdio>
#include <filesystem>

namespace moog {

// atomic write: temp file in the same directory, then rename
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    require(f != nullptr, "cannot open for writing: " + tmp);
    size_t written = bytes.empty() ? 0 : std::fwrite(bytes.data(), 1, bytes.size(), f);
    int close_err = std::fclose(f);
    require(written == bytes.size() && close_err == 0, "short write to " + tmp);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    require(!ec, "cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    require(f != nullptr, "cannot open for reading: " + path);
    std::fseek(f, 0, SEEK_END);
    long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> bytes(static_cast<size_t>(std::max(0L, size)));
    size_t got = bytes.empty() ? 0 : std::fread(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    require(got == bytes.size(), "short read from " + path);
    return bytes;
}

}  // namespace moog
