#include "moog/checkpoint.hpp"

#include <cstring>

#include "moog/serial.hpp"

namespace moog {

// magic "MOOGCKPT" | u32 version | u64 step | u32 blob length + JSON |
// u32 tensor count | per tensor: name str16, dtype u8 (0 = f32), rank u8,
// dims u32..., payload f32 LE | crc32 of everything after the magic

namespace {
constexpr char kMagic[8] = {'M', 'O', 'O', 'G', 'C', 'K', 'P', 'T'};
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ByteWriter body;
    body.u32(Checkpoint::kVersion);
    body.u64(ckpt.step);
    body.u32(static_cast<uint32_t>(ckpt.config_blob.size()));
    body.bytes(ckpt.config_blob.data(), ckpt.config_blob.size());
    body.u32(static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& e : ckpt.tensors) {
        body.str16(e.name);
        body.u8(0);
        body.u8(static_cast<uint8_t>(e.tensor.rank()));
        for (int d : e.tensor.shape) body.u32(static_cast<uint32_t>(d));
        for (float v : e.tensor.data) body.f32(v);
    }

    ByteWriter file;
    file.bytes(kMagic, 8);
    file.bytes(body.buf.data(), body.buf.size());
    file.u32(crc32(body.buf.data(), body.buf.size()));
    write_file_bytes(path, file.buf);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::vector<uint8_t> bytes = read_file_bytes(path);
    require(bytes.size() >= 16, "truncated checkpoint file: " + path);
    require(std::memcmp(bytes.data(), kMagic, 8) == 0, "not a checkpoint file (bad magic): " + path);
    size_t body_len = bytes.size() - 12;
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<uint32_t>(bytes[bytes.size() - 4 + static_cast<size_t>(i)]) << (8 * i);
    require(stored == crc32(bytes.data() + 8, body_len), "checkpoint checksum mismatch in " + path);

    ByteReader r(bytes.data() + 8, body_len, "checkpoint " + path);
    Checkpoint ckpt;
    uint32_t version = r.u32();
    require(version == Checkpoint::kVersion,
            "checkpoint version " + std::to_string(version) + " not supported (this build reads version " +
                std::to_string(Checkpoint::kVersion) + ")");
    ckpt.step = r.u64();
    uint32_t blob_len = r.u32();
    r.need(blob_len);
    ckpt.config_blob.assign(reinterpret_cast<const char*>(r.data + r.pos), blob_len);
    r.pos += blob_len;
    uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.str16();
        uint8_t dtype = r.u8();
        require(dtype == 0, "checkpoint: unknown dtype " + std::to_string(dtype) + " for tensor " + name);
        int rank = r.u8();
        std::vector<int> shape;
        int64_t n = 1;
        for (int d = 0; d < rank; ++d) {
            int dim = static_cast<int>(r.u32());
            require(dim > 0 && dim < (1 << 28), "checkpoint: bad dimension for tensor " + name);
            shape.push_back(dim);
            n *= dim;
        }
        TensorF t = TensorF::uninit(shape);
        for (auto& v : t.data) v = r.f32();
        ckpt.tensors.emplace(name, std::move(t));
    }
    return ckpt;
}

}  // namespace moog
