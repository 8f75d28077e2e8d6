#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "deci/training.hpp"
#include "test_support.hpp"

namespace deci {
namespace {

namespace fs = std::filesystem;
using testing::tiny_model;

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out << bytes;
}

fs::path temp_path(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "deci_checkpoint_tests";
    fs::create_directories(dir);
    return dir / name;
}

void expect_format_error(std::string_view bytes, const std::string& needle) {
    try {
        deserialize_checkpoint(bytes);
        FAIL() << "expected FormatError containing " << needle;
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, RoundTripIsBitExactAfterStorageCast) {
    for (GatingMode mode : {GatingMode::PerLabel, GatingMode::PerDocument}) {
        auto m = tiny_model(1, {}, mode);
        round_to_storage_precision(m.params);
        nlohmann::json cfg = {{"train", {{"alpha", 0.5}}}};
        auto path = temp_path("rt.ckpt");
        save_checkpoint(path, m, cfg);
        auto ck = load_checkpoint(path);
        EXPECT_EQ(ck.model.params, m.params);
        EXPECT_EQ(ck.model.vocab, m.vocab);
        EXPECT_EQ(ck.model.labels, m.labels);
        EXPECT_EQ(ck.model.config.gating, mode);
        EXPECT_EQ(ck.model.config.max_len, m.config.max_len);
        EXPECT_EQ(ck.config, cfg);
        for (const auto& d : testing::random_documents(m, 2, 10)) {
            auto a = forward(m, d);
            auto b = forward(ck.model, d);
            EXPECT_EQ(a.z_f, b.z_f);
            EXPECT_EQ(a.z_k, b.z_k);
        }
        EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
    }
}

TEST(Checkpoint, SaveIsDeterministic) {
    auto m = tiny_model(2);
    EXPECT_EQ(serialize_checkpoint(m, {}), serialize_checkpoint(m, {}));
}

TEST(Checkpoint, StorageCastIsIdempotent) {
    auto m = tiny_model(3);
    round_to_storage_precision(m.params);
    auto once = m.params;
    round_to_storage_precision(m.params);
    EXPECT_EQ(m.params, once);
}

TEST(Checkpoint, CorruptMagic) {
    std::string bytes = serialize_checkpoint(tiny_model(4), {});
    bytes[0] = 'X';
    expect_format_error(bytes, "magic");
}

TEST(Checkpoint, VersionBumpNamesBothVersions) {
    std::string bytes = serialize_checkpoint(tiny_model(5), {});
    bytes[4] = static_cast<char>(kCheckpointVersion + 1);
    try {
        deserialize_checkpoint(bytes);
        FAIL();
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find(std::to_string(kCheckpointVersion + 1)), std::string::npos) << msg;
        EXPECT_NE(msg.find(std::to_string(kCheckpointVersion)), std::string::npos) << msg;
    }
}

TEST(Checkpoint, EveryTruncationRejected) {
    const std::string bytes = serialize_checkpoint(tiny_model(6), {});
    for (std::size_t n = 0; n < bytes.size(); n += 7) {
        EXPECT_THROW(deserialize_checkpoint(std::string_view(bytes).substr(0, n)), FormatError) << n;
    }
    EXPECT_THROW(deserialize_checkpoint(bytes + "x"), FormatError);
}

TEST(Checkpoint, HugeDimensionsRejectedBeforeAllocation) {
    std::string bytes = serialize_checkpoint(tiny_model(7), {});
    for (int i = 0; i < 4; ++i) bytes[8 + i] = static_cast<char>(0xFF);  // vocab_size
    EXPECT_THROW(deserialize_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, MissingFile) {
    EXPECT_THROW(load_checkpoint(temp_path("does-not-exist.ckpt")), std::runtime_error);
}

TEST(Checkpoint, GarbageJsonTail) {
    std::string bytes = serialize_checkpoint(tiny_model(8), {});
    bytes[bytes.size() - 1] = '#';
    EXPECT_THROW(deserialize_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, NonFiniteParamsRefusedOnSave) {
    auto m = tiny_model(9);
    m.params.gate_w(0, 0) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(serialize_checkpoint(m, {}), EvaluationError);
}

TEST(Checkpoint, FileRoundTripMatchesBuffer) {
    auto m = tiny_model(10);
    auto path = temp_path("buf.ckpt");
    save_checkpoint(path, m, {{"k", 1}});
    EXPECT_EQ(read_file(path), serialize_checkpoint(m, {{"k", 1}}));
    write_file(path, "DECI");
    EXPECT_THROW(load_checkpoint(path), FormatError);
}

}  // namespace
}  // namespace deci
