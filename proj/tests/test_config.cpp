#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "phenoswin/config.hpp"
#include "phenoswin/layout.hpp"
#include "test_support.hpp"

using namespace phenoswin;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
    try {
        parse_config(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Config, MinimalConfigGetsToyDefaults) {
    const Config c = parse_config(json::parse(R"({"sources": [{"name": "sentinel2"}]})"));
    EXPECT_EQ(c.model.embed_dim, 32);
    EXPECT_EQ(c.model.depths, (std::array<int, 4>{2, 2, 2, 2}));
    EXPECT_EQ(c.model.heads, (std::array<int, 4>{2, 2, 4, 4}));
    EXPECT_EQ(c.model.window_temporal, 2);
    EXPECT_EQ(c.model.window_spatial, 7);
    EXPECT_EQ(c.sources.at(0).bands, 10);
    EXPECT_EQ(c.training.finetune_lr, 6e-5);
    EXPECT_EQ(c.training.ema_tau, 0.001);
}

TEST(Config, BuiltInBandCounts) {
    EXPECT_EQ(default_band_count("modis"), 7);
    EXPECT_EQ(default_band_count("landsat"), 6);
    EXPECT_EQ(default_band_count("sentinel2"), 10);
    EXPECT_EQ(default_band_count("hyperspectral"), 0);
}

TEST(Config, TileSizeNotDivisibleBy32IsRejected) {
    const std::string msg = error_of(json::parse(R"({"sources": [{"name": "sentinel2", "tile_size": 100}]})"));
    EXPECT_NE(msg.find("not divisible by 32"), std::string::npos) << msg;
    EXPECT_NE(msg.find("tile_size"), std::string::npos) << msg;
}

TEST(Config, LargerModelChannelsDouble) {
    const Config c = parse_config(
        json::parse(R"({"model": {"embed_dim": 128, "depths": [2, 2, 6, 2]}, "sources": [{"name": "modis"}]})"));
    EXPECT_EQ(c.model.stage_channels(), (std::array<int, 4>{128, 256, 512, 1024}));
}

TEST(Config, ErrorsNameTheField) {
    EXPECT_NE(error_of(json::parse(R"({"sources": [{"name": "x", "bands": 0}]})")).find("sources[0].bands"), std::string::npos);
    EXPECT_NE(error_of(json::parse(R"({"model": {"embed_dim": "big"}, "sources": [{"name": "modis"}]})")).find("model.embed_dim"),
              std::string::npos);
    EXPECT_NE(error_of(json::parse(R"({"model": {"colour": 1}, "sources": [{"name": "modis"}]})")).find("model.colour"),
              std::string::npos);
    EXPECT_NE(error_of(json::parse(R"({"model": {}})")).find("sources"), std::string::npos);
    EXPECT_NE(error_of(json::parse(R"({"model": {"depths": [2, 0, 2, 2]}, "sources": [{"name": "modis"}]})")).find("depths"),
              std::string::npos);
    EXPECT_NE(error_of(json::parse(
                           R"({"sources": [{"name": "modis", "temporal_patch_rule": {"threshold": 16, "short": 3, "long": 4}}]})"))
                  .find("temporal_patch_rule"),
              std::string::npos);
}

TEST(Config, RoundTripThroughJson) {
    Config c = phenoswin::testing::toy_config();
    c.training.freeze = {"stage1"};
    c.training.ignore_label = 255;
    c.sources.push_back({"modis", 7, 32, {12, 2, 4}, 4, 24});
    const Config back = parse_config(to_json(c));
    EXPECT_EQ(back, c);
    EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, HashChangesWithContent) {
    Config a = phenoswin::testing::toy_config();
    Config b = a;
    b.training.seed = 1;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, LoadFromFile) {
    const auto dir = phenoswin::testing::scratch_dir("config");
    std::ofstream(dir / "c.json") << R"({"sources": [{"name": "landsat", "tile_size": 64}], "data": {"num_tiles": 3}})";
    const Config c = load_config(dir / "c.json");
    EXPECT_EQ(c.sources.at(0).bands, 6);
    EXPECT_EQ(c.data.num_tiles, 3);
    std::ofstream(dir / "bad.json") << "{not json";
    EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
    EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
}

TEST(Layout, PermutationRoundTripsBitExactly) {
    Rng rng(3);
    const Tensor x = phenoswin::testing::random_tensor({3, 4, 5, 6}, rng);
    const Tensor f = cthw_to_thwc(x);
    EXPECT_EQ(f.shape(), (Shape{4, 5, 6, 3}));
    EXPECT_EQ(f.at(1, 2, 3, 2), x.at(2, 1, 2, 3));
    EXPECT_EQ(thwc_to_cthw(f), x);
}
