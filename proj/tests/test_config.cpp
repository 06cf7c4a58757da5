#include <gtest/gtest.h>

#include <filesystem>

#include "dpn/config.hpp"

using dpn::RunConfig;

TEST(Config, FullScaleProfileDefaults) {
    const auto c = dpn::paper_profile();
    EXPECT_EQ(c.encoder, dpn::EncoderVariant::pretrained_frozen);
    EXPECT_EQ(c.patch, 512u);
    EXPECT_EQ(c.batch, 10u);
    EXPECT_EQ(c.lr, 1e-4);
    EXPECT_EQ(c.beta1, 0.9);
    EXPECT_EQ(c.beta2, 0.999);
    EXPECT_EQ(c.adam_epsilon, 1e-8);
    EXPECT_EQ(c.iters, 20000u);
    EXPECT_EQ(c.checkpoint_every, 1000u);
    EXPECT_EQ(c.channels, dpn::vgg19_tap_channels);
}

TEST(Config, DeskProfile) {
    const auto c = dpn::desk_profile();
    EXPECT_EQ(c.encoder, dpn::EncoderVariant::random5);
    EXPECT_EQ(c.channels, (std::array<std::size_t, 5>{8, 16, 32, 64, 64}));
    EXPECT_EQ(c.fusion_width, 32u);
    EXPECT_EQ(c.patch, 64u);
    EXPECT_EQ(c.batch, 4u);
    EXPECT_EQ(c.lr, 1e-3);
    EXPECT_EQ(c.iters, 300u);
    EXPECT_EQ(c.synth_scenes, 8u);
    EXPECT_EQ(c.synth_size, 64u);
    EXPECT_LE(c.iters, 500u);
}

TEST(Config, FormatParseRoundTrip) {
    auto c = dpn::desk_profile();
    c.lr = 3.3e-4;
    c.seed = 77;
    c.norm.mean = {1.25, 2.5, 3.75};
    c.synth_terrain = dpn::Terrain::snowy;
    c.run_dir = "/tmp/some run";
    const std::string text = dpn::format_config(c);
    const auto back = dpn::parse_config(text);
    EXPECT_EQ(dpn::format_config(back), text);
    EXPECT_EQ(back.lr, 3.3e-4);
    EXPECT_EQ(back.norm.mean[2], 3.75);
    EXPECT_EQ(back.run_dir, "/tmp/some run");
}

TEST(Config, EveryKeyReadsBackWhatWasWritten) {
    const auto c = dpn::desk_profile();
    for (const auto& k : dpn::config_keys()) {
        auto d = dpn::paper_profile();
        dpn::set_config_value(d, k, dpn::get_config_value(c, k));
        EXPECT_EQ(dpn::get_config_value(d, k), dpn::get_config_value(c, k)) << k;
    }
}

TEST(Config, ProfileLineSelectsBaseWhereverItAppears) {
    const auto c = dpn::parse_config("iters=42\n# comment\n\nprofile=desk\n");
    EXPECT_EQ(c.profile, "desk");
    EXPECT_EQ(c.iters, 42u);
    EXPECT_EQ(c.patch, 64u);
    EXPECT_EQ(dpn::parse_config("").profile, "paper");
}

TEST(Config, OverridesApply) {
    auto c = dpn::desk_profile();
    dpn::set_config_value(c, "channels", "4,4,8,8,8");
    dpn::set_config_value(c, "freeze_encoder", "true");
    dpn::set_config_value(c, "encoder", "random5");
    EXPECT_EQ(c.channels[4], 8u);
    EXPECT_TRUE(c.freeze_encoder);
    const auto m = c.model_config();
    EXPECT_TRUE(m.encoder.freeze);
    EXPECT_EQ(m.generator.fusion_width, 32u);
    EXPECT_EQ(c.adam_config().lr, 1e-3);
}

TEST(Config, BadInputsRejected) {
    RunConfig c;
    EXPECT_THROW(dpn::set_config_value(c, "nope", "1"), dpn::ConfigError);
    EXPECT_THROW(dpn::get_config_value(c, "nope"), dpn::ConfigError);
    EXPECT_THROW(dpn::set_config_value(c, "lr", "fast"), dpn::ConfigError);
    EXPECT_THROW(dpn::set_config_value(c, "lr", "1e-3x"), dpn::ConfigError);
    EXPECT_THROW(dpn::set_config_value(c, "iters", "-5"), dpn::ConfigError);
    EXPECT_THROW(dpn::set_config_value(c, "freeze_encoder", "yes"), dpn::ConfigError);
    EXPECT_THROW(dpn::set_config_value(c, "channels", "1,2,3"), dpn::ConfigError);
    EXPECT_THROW(dpn::set_config_value(c, "mean", "1,2"), dpn::ConfigError);
    EXPECT_THROW(dpn::parse_config("profile=huge\n"), dpn::ConfigError);
    EXPECT_THROW(dpn::parse_config("lr\n"), dpn::ConfigError);
}

TEST(Config, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "dpn_config_roundtrip.txt";
    auto c = dpn::desk_profile();
    c.seed = 5;
    dpn::save_config(path, c);
    EXPECT_EQ(dpn::format_config(dpn::load_config(path)), dpn::format_config(c));
    std::filesystem::remove(path);
    EXPECT_THROW(dpn::load_config(path), dpn::IoError);
}
