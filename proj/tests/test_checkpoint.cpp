#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "dpn/checkpoint.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using dpn::DpnModel;
using dpn::ModelConfig;
using dpn::ParamStore;
using dpn::RawEntry;
using dpn::Shape;
using dpn::Tensor;

namespace {

class Checkpoint : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("dpn_ckpt_") + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    fs::path path(const std::string& name) const { return dir_ / name; }

    fs::path dir_;
};

std::vector<std::uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Little-endian appenders, independent of the library's writer.
void le(std::vector<std::uint8_t>& b, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::uint8_t> f32_bytes(std::initializer_list<float> vals) {
    std::vector<std::uint8_t> out;
    for (float f : vals) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        le(out, u, 4);
    }
    return out;
}

void append_entry(std::vector<std::uint8_t>& b, const std::string& name, std::vector<std::uint32_t> dims, bool frozen,
                  const std::vector<std::uint8_t>& payload) {
    le(b, name.size(), 2);
    b.insert(b.end(), name.begin(), name.end());
    le(b, dims.size(), 1);
    for (auto d : dims) le(b, d, 4);
    le(b, 0, 1);
    le(b, frozen ? 1 : 0, 1);
    le(b, crc32(0L, payload.data(), static_cast<uInt>(payload.size())), 4);
    le(b, payload.size(), 8);
    b.insert(b.end(), payload.begin(), payload.end());
}

std::vector<std::uint8_t> header(std::uint32_t count, std::uint32_t version = 1) {
    std::vector<std::uint8_t> b{'D', 'P', 'N', 'W'};
    le(b, version, 4);
    le(b, count, 4);
    return b;
}

ParamStore<float> small_store() {
    ParamStore<float> ps;
    ps.add("b/kernel", oracle::random_tensor<float>(Shape{2, 3, 3, 3}, 1), true);
    ps.add("a/bias", oracle::random_tensor<float>(Shape{2}, 2), false);
    ps.add("c/scalar", Tensor<float>(Shape{1}, -0.0f), true);
    return ps;
}

} // namespace

TEST_F(Checkpoint, RoundTripIsBitIdentical) {
    const auto ps = small_store();
    dpn::save_checkpoint(path("p.dpnw"), ps);
    const auto back = dpn::load_checkpoint<float>(path("p.dpnw"));
    EXPECT_FALSE(back.optim.has_value());
    ASSERT_EQ(back.params.names(), ps.names());
    for (const auto& [name, e] : ps.entries()) {
        const auto& got = back.params.entry(name);
        EXPECT_EQ(got.trainable, e.trainable) << name;
        ASSERT_EQ(got.value.shape(), e.value.shape()) << name;
        EXPECT_EQ(std::memcmp(got.value.raw(), e.value.raw(), e.value.size() * 4), 0) << name;
    }
}

TEST_F(Checkpoint, RepeatedSavesAreByteIdentical) {
    DpnModel<float> m(ModelConfig{}, 3);
    dpn::save_checkpoint(path("1.dpnw"), m.params());
    dpn::save_checkpoint(path("2.dpnw"), m.params());
    EXPECT_EQ(slurp(path("1.dpnw")), slurp(path("2.dpnw")));
}

TEST_F(Checkpoint, EmptyStoreIsHeaderOnly) {
    dpn::save_checkpoint(path("e.dpnw"), ParamStore<float>{});
    EXPECT_EQ(slurp(path("e.dpnw")), header(0));
    EXPECT_TRUE(dpn::load_checkpoint<float>(path("e.dpnw")).params.empty());
}

TEST_F(Checkpoint, HandAssembledBytesMatchWriter) {
    auto bytes = header(2);
    append_entry(bytes, "a", {2}, true, f32_bytes({1.5f, -2.0f}));
    append_entry(bytes, "b/w", {1, 2}, false, f32_bytes({0.25f, 3.0f}));

    std::vector<RawEntry> entries{{"b/w", Shape{1, 2}, false, {0.25f, 3.0f}}, {"a", Shape{2}, true, {1.5f, -2.0f}}};
    EXPECT_EQ(dpn::encode_checkpoint(entries), bytes);

    spit(path("h.dpnw"), bytes);
    const auto loaded = dpn::read_raw_checkpoint(path("h.dpnw"));
    ASSERT_EQ(loaded.size(), 2u);
    EXPECT_EQ(loaded[0].name, "a");
    EXPECT_TRUE(loaded[0].frozen);
    EXPECT_EQ(loaded[0].data, (std::vector<float>{1.5f, -2.0f}));
    EXPECT_EQ(loaded[1].dims, (Shape{1, 2}));

    const auto man = dpn::read_manifest(path("h.dpnw"));
    ASSERT_EQ(man.entries.size(), 2u);
    // 12-byte header, then 2 + 1 + 1 + 4 + 1 + 1 + 4 + 8 bytes of entry header.
    EXPECT_EQ(man.entries[0].offset, 34u);
    EXPECT_EQ(man.entries[0].length, 8u);
}

TEST_F(Checkpoint, TamperedPayloadNamesEntry) {
    dpn::save_checkpoint(path("t.dpnw"), small_store());
    const auto man = dpn::read_manifest(path("t.dpnw"));
    const auto& victim = man.entries[1];
    auto bytes = slurp(path("t.dpnw"));
    bytes[victim.offset + 5] ^= 0x01;
    spit(path("t.dpnw"), bytes);
    try {
        dpn::load_checkpoint<float>(path("t.dpnw"));
        FAIL() << "expected ChecksumError";
    } catch (const dpn::ChecksumError& e) {
        EXPECT_EQ(e.entry(), victim.name);
        EXPECT_NE(std::string(e.what()).find(victim.name), std::string::npos);
        EXPECT_STREQ(e.category(), "bad-checksum");
    }
}

TEST_F(Checkpoint, BadMagicRejected) {
    auto bytes = header(0);
    bytes[0] = 'X';
    spit(path("m.dpnw"), bytes);
    EXPECT_THROW(dpn::read_raw_checkpoint(path("m.dpnw")), dpn::MagicError);
}

TEST_F(Checkpoint, FutureVersionRejected) {
    spit(path("v.dpnw"), header(0, 2));
    try {
        dpn::read_raw_checkpoint(path("v.dpnw"));
        FAIL() << "expected VersionError";
    } catch (const dpn::VersionError& e) {
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
    }
}

TEST_F(Checkpoint, TruncationAtEveryByteRejected) {
    dpn::save_checkpoint(path("full.dpnw"), small_store());
    const auto bytes = slurp(path("full.dpnw"));
    for (std::size_t n = 0; n < bytes.size(); ++n) {
        spit(path("cut.dpnw"), {bytes.begin(), bytes.begin() + static_cast<long>(n)});
        EXPECT_THROW(dpn::read_raw_checkpoint(path("cut.dpnw")), dpn::FormatError) << "length " << n;
    }
}

TEST_F(Checkpoint, TruncationIsReportedAsSuch) {
    dpn::save_checkpoint(path("full.dpnw"), small_store());
    auto bytes = slurp(path("full.dpnw"));
    bytes.resize(bytes.size() - 3);
    spit(path("cut.dpnw"), bytes);
    EXPECT_THROW(dpn::read_raw_checkpoint(path("cut.dpnw")), dpn::TruncatedError);
}

TEST_F(Checkpoint, TrailingBytesRejected) {
    auto bytes = header(0);
    bytes.push_back(0);
    spit(path("x.dpnw"), bytes);
    EXPECT_THROW(dpn::read_raw_checkpoint(path("x.dpnw")), dpn::FormatError);
}

TEST_F(Checkpoint, UnsortedNamesRejected) {
    auto bytes = header(2);
    append_entry(bytes, "b", {1}, false, f32_bytes({1.0f}));
    append_entry(bytes, "a", {1}, false, f32_bytes({2.0f}));
    spit(path("u.dpnw"), bytes);
    EXPECT_THROW(dpn::read_raw_checkpoint(path("u.dpnw")), dpn::FormatError);
}

TEST_F(Checkpoint, PayloadLengthMustMatchDims) {
    auto bytes = header(1);
    append_entry(bytes, "a", {3}, false, f32_bytes({1.0f, 2.0f}));
    spit(path("l.dpnw"), bytes);
    EXPECT_THROW(dpn::read_raw_checkpoint(path("l.dpnw")), dpn::FormatError);
}

TEST_F(Checkpoint, DuplicateNamesRefusedOnWrite) {
    std::vector<RawEntry> e{{"a", Shape{1}, false, {1.0f}}, {"a", Shape{1}, false, {2.0f}}};
    EXPECT_THROW(dpn::encode_checkpoint(e), dpn::ValueError);
}

TEST_F(Checkpoint, OptimizerStateRoundTrips) {
    auto ps = small_store();
    auto st = dpn::adam_init(ps);
    for (int i = 0; i < 3; ++i) {
        for (const auto& [name, m] : st.m) ps.set_grad(name, oracle::random_tensor<float>(m.shape(), 40 + i));
        dpn::adam_step(ps, st);
    }
    dpn::save_checkpoint(path("o.dpnw"), ps, &st);

    const auto raw = dpn::read_raw_checkpoint(path("o.dpnw"));
    std::vector<std::string> names;
    for (const auto& e : raw) names.push_back(e.name);
    EXPECT_EQ(names, (std::vector<std::string>{"a/bias", "b/kernel", "c/scalar", "optim/m/b/kernel",
                                               "optim/m/c/scalar", "optim/step", "optim/v/b/kernel",
                                               "optim/v/c/scalar"}));

    const auto back = dpn::load_checkpoint<float>(path("o.dpnw"));
    ASSERT_TRUE(back.optim.has_value());
    EXPECT_EQ(back.optim->step, 3u);
    EXPECT_EQ(back.optim->m, st.m);
    EXPECT_EQ(back.optim->v, st.v);
    EXPECT_EQ(back.params.size(), 3u);
}

TEST_F(Checkpoint, UnknownOptimizerEntryRejected) {
    std::vector<RawEntry> e{{"optim/q/x", Shape{1}, false, {1.0f}}};
    dpn::write_raw_checkpoint(path("q.dpnw"), e);
    EXPECT_THROW(dpn::load_checkpoint<float>(path("q.dpnw")), dpn::FormatError);
}

TEST_F(Checkpoint, AtomicWriteLeavesNoTemporary) {
    dpn::save_checkpoint(path("a.dpnw"), small_store());
    EXPECT_TRUE(fs::exists(path("a.dpnw")));
    EXPECT_FALSE(fs::exists(path("a.dpnw.tmp")));
}

TEST_F(Checkpoint, MissingFileIsIoError) {
    EXPECT_THROW(dpn::read_raw_checkpoint(path("nope.dpnw")), dpn::IoError);
}

TEST(AssignParams, ListsEveryMismatch) {
    DpnModel<float> m(ModelConfig{}, 1);
    ParamStore<float> src = m.params();
    src.entries().erase("generator/head/bias");
    src.put("encoder/block1/kernel", Tensor<float>(Shape{8, 3, 5, 5}), true);
    src.put("stray", Tensor<float>(Shape{1}), true);
    try {
        dpn::assign_params(m.params(), src);
        FAIL() << "expected MismatchError";
    } catch (const dpn::MismatchError& e) {
        const std::string w = e.what();
        EXPECT_NE(w.find("missing generator/head/bias"), std::string::npos) << w;
        EXPECT_NE(w.find("encoder/block1/kernel dims (8,3,5,5)"), std::string::npos) << w;
        EXPECT_NE(w.find("unexpected stray"), std::string::npos) << w;
    }
}

TEST_F(Checkpoint, TrainedModelReloadsToSamePrediction) {
    DpnModel<float> a(ModelConfig{}, 11);
    for (auto& [name, e] : a.params().entries())
        e.value = oracle::random_tensor<float>(e.value.shape(), std::hash<std::string>{}(name), -0.3, 0.3);
    dpn::save_checkpoint(path("m.dpnw"), a.params());

    DpnModel<float> b(ModelConfig{}, 99);
    dpn::assign_params(b.params(), dpn::load_checkpoint<float>(path("m.dpnw")).params);
    const auto x = oracle::random_tensor<float>(Shape::nchw(1, 3, 32, 32), 5);
    EXPECT_EQ(a.predict(x), b.predict(x));
}

TEST_F(Checkpoint, PretrainedStandInLoadsFrozen) {
    auto ps = fixture::vgg_stand_in(3);
    for (auto& [_, e] : ps.entries()) e.trainable = false;
    dpn::save_checkpoint(path("vgg.dpnw"), ps);
    const auto man = dpn::read_manifest(path("vgg.dpnw"));
    // conv1_1 through conv5_2: 14 layers, kernel and bias each.
    ASSERT_EQ(man.entries.size(), 28u);
    for (const auto& e : man.entries) EXPECT_TRUE(e.frozen) << e.name;

    auto loaded = dpn::load_checkpoint<float>(path("vgg.dpnw")).params;
    EXPECT_EQ(loaded.value("encoder/conv1_1/kernel").shape(), (Shape{64, 3, 3, 3}));
    DpnModel<float> m(fixture::vgg_config(), 4, std::move(loaded));
    EXPECT_TRUE(m.encoder().frozen());
    EXPECT_FALSE(m.params().entry("encoder/conv5_2/kernel").trainable);
}

TEST_F(Checkpoint, GoldenFixtureClosesLoop) {
    DpnModel<float> m(ModelConfig{}, 21);
    const auto x = oracle::random_tensor<float>(Shape::nchw(1, 3, 32, 32), 22, -2, 2);
    dpn::write_golden(path("g.dpnw"), m, x);

    auto fixture = dpn::read_raw_checkpoint(path("g.dpnw"));
    std::vector<std::string> names;
    for (const auto& e : fixture) names.push_back(e.name);
    EXPECT_EQ(names, (std::vector<std::string>{"golden/input", "golden/tap1", "golden/tap2", "golden/tap3",
                                               "golden/tap4", "golden/tap5"}));
    for (std::size_t i = 0; i < 5; ++i) {
        const std::size_t extent = 32u >> i;
        EXPECT_EQ(fixture[i + 1].dims.h(), extent);
    }

    const auto ok = dpn::verify_golden(m, fixture);
    EXPECT_TRUE(ok.pass());
    for (double d : ok.max_abs_dev) EXPECT_EQ(d, 0.0);

    for (auto& e : fixture)
        if (e.name == "golden/tap3") e.data[7] += 1e-2f;
    const auto bad = dpn::verify_golden(m, fixture);
    EXPECT_FALSE(bad.pass());
    EXPECT_NEAR(bad.max_abs_dev[2], 1e-2, 1e-6);
}

TEST_F(Checkpoint, GoldenFixtureMissingTapNamed) {
    DpnModel<float> m(ModelConfig{}, 21);
    dpn::write_golden(path("g.dpnw"), m, oracle::random_tensor<float>(Shape::nchw(1, 3, 32, 32), 22));
    auto fixture = dpn::read_raw_checkpoint(path("g.dpnw"));
    std::erase_if(fixture, [](const RawEntry& e) { return e.name == "golden/tap4"; });
    try {
        dpn::verify_golden(m, fixture);
        FAIL() << "expected FormatError";
    } catch (const dpn::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("golden/tap4"), std::string::npos);
    }
}
