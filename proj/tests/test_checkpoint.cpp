#include <doctest.h>

#include <filesystem>

#include "moog/checkpoint.hpp"
#include "moog/rng.hpp"
#include "moog/serial.hpp"

using namespace moog;

namespace {

Checkpoint sample_ckpt() {
    Checkpoint c;
    c.step = 1234;
    c.config_blob = R"({"config":{"profile":"desk"},"rng":{"seed":"42"}})";
    auto rng = RngState::from_seed(17);
    c.tensors.emplace("encoder.conv0.k", rng.child("a").gaussian_tensor<float>({3, 3, 3, 8}, 0.1));
    c.tensors.emplace("predictor.layer0.self.wq.w", rng.child("b").gaussian_tensor<float>({8, 8}, 0.1));
    c.tensors.emplace("opt.m.encoder.conv0.k", TensorF::zeros({3, 3, 3, 8}));
    return c;
}

std::string tmp_path(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
    auto path = tmp_path("moog_ckpt_rt.moogckpt");
    Checkpoint c = sample_ckpt();
    save_checkpoint(path, c);
    Checkpoint back = load_checkpoint(path);
    CHECK(back.step == c.step);
    CHECK(back.config_blob == c.config_blob);
    REQUIRE(back.tensors.size() == c.tensors.size());
    for (const auto& e : c.tensors) {
        const auto& other = back.tensors.at(e.name);
        CHECK(other.shape == e.tensor.shape);
        CHECK(other.data == e.tensor.data);
    }
    std::filesystem::remove(path);
}

TEST_CASE("iteration order of loaded tensors matches save order") {
    auto path = tmp_path("moog_ckpt_order.moogckpt");
    Checkpoint c = sample_ckpt();
    save_checkpoint(path, c);
    Checkpoint back = load_checkpoint(path);
    auto it = back.tensors.begin();
    for (const auto& e : c.tensors) {
        CHECK(it->name == e.name);
        ++it;
    }
    std::filesystem::remove(path);
}

TEST_CASE("truncated files are rejected") {
    auto path = tmp_path("moog_ckpt_trunc.moogckpt");
    save_checkpoint(path, sample_ckpt());
    auto bytes = read_file_bytes(path);
    bytes.resize(bytes.size() - 25);
    write_file_bytes(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("payload corruption trips the checksum") {
    auto path = tmp_path("moog_ckpt_crc.moogckpt");
    save_checkpoint(path, sample_ckpt());
    auto bytes = read_file_bytes(path);
    bytes[bytes.size() / 2] ^= 1;
    write_file_bytes(path, bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("checksum"), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("unknown version names both versions") {
    auto path = tmp_path("moog_ckpt_ver.moogckpt");
    save_checkpoint(path, sample_ckpt());
    auto bytes = read_file_bytes(path);
    // version field sits right after the 8-byte magic; bump it and refresh the crc
    bytes[8] = 9;
    uint32_t crc = crc32(bytes.data() + 8, bytes.size() - 12);
    for (int i = 0; i < 4; ++i) bytes[bytes.size() - 4 + static_cast<size_t>(i)] = static_cast<uint8_t>(crc >> (8 * i));
    write_file_bytes(path, bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version 9"), std::runtime_error);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version 1"), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("wrong magic is not a checkpoint") {
    auto path = tmp_path("moog_ckpt_magic.moogckpt");
    save_checkpoint(path, sample_ckpt());
    auto bytes = read_file_bytes(path);
    bytes[3] = 'X';
    write_file_bytes(path, bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("missing tensors surface by name at lookup") {
    auto path = tmp_path("moog_ckpt_missing.moogckpt");
    save_checkpoint(path, sample_ckpt());
    Checkpoint back = load_checkpoint(path);
    CHECK_THROWS_WITH_AS(back.tensors.at("decoder.head.w"), doctest::Contains("decoder.head.w"),
                         std::runtime_error);
    std::filesystem::remove(path);
}
