#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "phenoswin/synthetic.hpp"
#include "test_support.hpp"

using namespace phenoswin;
namespace fs = std::filesystem;
using phenoswin::testing::values;

namespace {

SceneRecipe recipe(std::uint64_t seed, int classes, double noise, const std::string& task = "distinct") {
    SceneRecipe r;
    r.seed = seed;
    r.geo_id = "tile_0003";
    SourceSpec fine;
    fine.name = "sentinel2";
    fine.bands = 3;
    fine.tile_size = 64;
    fine.frames_per_year = 12;
    SourceSpec coarse;
    coarse.name = "modis";
    coarse.bands = 2;
    coarse.tile_size = 32;
    coarse.frames_per_year = 8;
    r.sources = {fine, coarse};
    r.num_classes = classes;
    r.noise = noise;
    r.smoothing = 4;
    r.phenology = make_phenology(r.sources, classes, task, seed);
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Synthetic, SameSeedSameScene) {
    const SceneSample a = gen_scene(recipe(42, 4, 0.1));
    const SceneSample b = gen_scene(recipe(42, 4, 0.1));
    ASSERT_EQ(a.images.size(), b.images.size());
    for (std::size_t i = 0; i < a.images.size(); ++i) EXPECT_EQ(values(a.images[i].data), values(b.images[i].data));
    EXPECT_EQ(a.labels.codes, b.labels.codes);

    const SceneSample c = gen_scene(recipe(43, 4, 0.1));
    EXPECT_NE(a.labels.codes, c.labels.codes);
}

TEST(Synthetic, ShapesFollowSources) {
    const SceneSample s = gen_scene(recipe(1, 3, 0.05));
    EXPECT_EQ(s.image("sentinel2").shape(), (Shape{3, 12, 64, 64}));
    EXPECT_EQ(s.image("modis").shape(), (Shape{2, 8, 32, 32}));
    EXPECT_EQ(s.labels.height, 64);
    for (int code : s.labels.codes) {
        EXPECT_GE(code, 0);
        EXPECT_LT(code, 3);
    }
}

TEST(Synthetic, NoiseFreeSingleClassEqualsProfile) {
    const SceneRecipe r = recipe(5, 1, 0.0);
    const SceneSample s = gen_scene(r);
    for (const auto& im : s.images) {
        const SourceProfile& prof = r.phenology.profile(im.source);
        const Index B = im.data.dim(0), T = im.data.dim(1), P = im.data.dim(2) * im.data.dim(3);
        for (Index b = 0; b < B; ++b)
            for (Index t = 0; t < T; ++t) {
                const double want = prof.value(r.phenology.class_phase, r.phenology.class_offset, 0,
                                               static_cast<int>(b), static_cast<int>(t));
                for (Index p = 0; p < P; ++p) ASSERT_EQ(im.data[(b * T + t) * P + p], want);
            }
    }
}

TEST(Synthetic, FractionMatchesLabelMap) {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
        const SceneRecipe r = recipe(seed, 5, 0.05);
        const SceneSample s = gen_scene(r);
        EXPECT_EQ(s.fraction, compute_fractions(s.labels, synthetic_class_mapping(5)));
        EXPECT_EQ(s.fraction[0], 0.0);
    }
}

TEST(Synthetic, ClassMappingSkipsBackground) {
    const ClassMapping m = synthetic_class_mapping(10);
    LabelMap one(1, 1, 0);
    EXPECT_EQ(compute_fractions(one, m)[1], 1.0);
    one.codes[0] = 8;
    EXPECT_EQ(compute_fractions(one, m)[1], 1.0);
    one.codes[0] = 7;
    EXPECT_EQ(compute_fractions(one, m)[8], 1.0);
}

TEST(Synthetic, NearestProfileIsPerfectWithoutNoise) {
    for (const std::string task : {"distinct", "phase"}) {
        const SceneRecipe r = recipe(9, 4, 0.0, task);
        const SceneSample s = gen_scene(r);
        for (Index y = 0; y < 64; ++y)
            for (Index x = 0; x < 64; ++x) ASSERT_EQ(nearest_profile_class(s, r.phenology, 4, y, x), s.labels.at(y, x));
    }
}

TEST(Synthetic, PhaseTaskHasEqualMeans) {
    const PhenologyBank bank = make_phenology(recipe(3, 4, 0.0).sources, 4, "phase", 3);
    for (double off : bank.class_offset) EXPECT_EQ(off, 0.0);
    EXPECT_NEAR(bank.class_phase[1] - bank.class_phase[0], 2 * M_PI / 4, 1e-12);
    EXPECT_THROW(make_phenology(recipe(3, 4, 0.0).sources, 4, "banana", 3), std::invalid_argument);
}

TEST(Synthetic, RejectsBadRecipes) {
    SceneRecipe r = recipe(1, 2, 0.1);
    r.sources[0].tile_size = 48;
    EXPECT_THROW(gen_scene(r), std::invalid_argument);
    r = recipe(1, 2, -0.1);
    EXPECT_THROW(gen_scene(r), std::invalid_argument);
}

TEST(Dataset, WorkerCountDoesNotChangeFiles) {
    Config c = phenoswin::testing::toy_config();
    c.data.num_tiles = 6;
    c.data.num_classes = 3;
    const fs::path one = phenoswin::testing::scratch_dir("synthetic_w1");
    const fs::path four = phenoswin::testing::scratch_dir("synthetic_w4");
    generate_dataset(c, one, 1);
    generate_dataset(c, four, 4);

    std::size_t files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(one)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), one);
        ASSERT_TRUE(fs::exists(four / rel)) << rel;
        EXPECT_EQ(slurp(entry.path()), slurp(four / rel)) << rel;
        ++files;
    }
    EXPECT_GE(files, 6u * 4u);
}

TEST(Dataset, RoundTripAndSplits) {
    Config c = phenoswin::testing::toy_config();
    c.data.num_tiles = 8;
    const fs::path root = phenoswin::testing::scratch_dir("synthetic_rt");
    const DatasetInfo info = generate_dataset(c, root, 2);
    ASSERT_EQ(info.tiles.size(), 8u);
    int train = 0, val = 0, test = 0;
    for (const auto& t : info.tiles) {
        train += t.split == "train";
        val += t.split == "val";
        test += t.split == "test";
    }
    EXPECT_EQ(train + val + test, 8);
    EXPECT_EQ(val, 2);
    EXPECT_EQ(test, 2);

    const DatasetInfo back = read_dataset_info(root);
    EXPECT_EQ(back.tiles.size(), info.tiles.size());
    const auto tiles = load_dataset(root, c.sources);
    ASSERT_EQ(tiles.size(), 8u);

    SceneRecipe r;
    r.seed = c.data.seed;
    r.geo_id = tiles[0].geo_id;
    r.sources = c.sources;
    r.num_classes = c.data.num_classes;
    r.noise = c.data.noise;
    r.smoothing = c.data.smoothing;
    r.phenology = make_phenology(c.sources, c.data.num_classes, c.data.task, c.data.seed);
    const SceneSample fresh = gen_scene(r);
    EXPECT_EQ(tiles[0].labels.codes, fresh.labels.codes);
    const Tensor& stored = tiles[0].image("sentinel2");
    const Tensor& generated = fresh.image("sentinel2");
    ASSERT_EQ(stored.shape(), generated.shape());
    double worst = 0.0;
    for (Index i = 0; i < stored.numel(); ++i) worst = std::max(worst, std::abs(stored[i] - generated[i]));
    EXPECT_LT(worst, 1e-6);  // stored as float32

    EXPECT_EQ(frame_reference("tile_0001", "sentinel2", 5), "scenes/tile_0001/sentinel2.bin#5");

    SourceSpec other = c.sources[0];
    other.bands = 4;
    EXPECT_THROW(load_dataset(root, {other}), std::runtime_error);
}
