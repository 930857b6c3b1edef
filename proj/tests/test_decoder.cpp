#include <gtest/gtest.h>

#include <cmath>

#include "phenoswin/decoder.hpp"
#include "test_support.hpp"

using namespace phenoswin;
using phenoswin::testing::random_tensor;
using phenoswin::testing::values;

namespace {

Config decoder_config() {
    Config c = phenoswin::testing::toy_config();
    c.model.depths = {1, 1, 1, 1};
    c.model.embed_dim = 8;
    c.model.decoder_channels = {8, 8, 8};
    c.model.num_classes = 3;
    return c;
}

struct Built {
    ParamStore store;
    std::vector<BackboneOutput> features;
};

Built build(const Config& c, const std::vector<Tensor>& inputs, std::uint64_t seed) {
    Built b;
    Rng rng(seed);
    init_backbone(b.store, c.model, c.sources, rng);
    init_decoder(b.store, c.model, c.sources, rng);
    for (std::size_t i = 0; i < inputs.size(); ++i)
        b.features.push_back(backbone_forward(b.store, c.model, c.sources[i], inputs[i]));
    return b;
}

std::vector<SourceFeatures> views(const Config& c, const Built& b) {
    std::vector<SourceFeatures> out;
    for (std::size_t i = 0; i < b.features.size(); ++i) out.push_back({&c.sources[i], &b.features[i]});
    return out;
}

// Two-class logits whose per-pixel cross-entropy against label 0 equals `losses`.
ag::Var logits_for_losses(const std::vector<double>& losses) {
    Tensor t({static_cast<Index>(losses.size()), 2});
    for (std::size_t i = 0; i < losses.size(); ++i) t[static_cast<Index>(2 * i + 1)] = std::log(std::expm1(losses[i]));
    return ag::Var::constant(t);
}

}  // namespace

TEST(Rearrange, TimeMajorPacking) {
    Tensor x({2, 2, 2, 3});
    for (Index i = 0; i < x.numel(); ++i) x[i] = static_cast<double>(i);
    const Tensor packed = rearrange(make_stage_features(x, 1)).value();
    EXPECT_EQ(packed.shape(), (Shape{4, 6}));
    for (Index t = 0; t < 2; ++t)
        for (Index h = 0; h < 2; ++h)
            for (Index w = 0; w < 2; ++w)
                for (Index c = 0; c < 3; ++c)
                    EXPECT_EQ(packed[(h * 2 + w) * 6 + t * 3 + c], x[((t * 2 + h) * 2 + w) * 3 + c]);
    const Tensor back = unrearrange(packed, 2, 2, 2, 3);
    EXPECT_EQ(values(back), values(x));
}

TEST(Rearrange, SingleFrameIsSqueeze) {
    Rng rng(1);
    const Tensor x = random_tensor({1, 3, 2, 4}, rng);
    const Tensor packed = rearrange(make_stage_features(x, 1)).value();
    EXPECT_EQ(packed.shape(), (Shape{6, 4}));
    EXPECT_EQ(values(packed), values(x));
}

TEST(ResampleFrames, EndPointsAndMean) {
    Tensor x({3, 1, 1, 1});
    x[0] = 1.0;
    x[1] = 2.0;
    x[2] = 4.0;
    const StageFeatures f = make_stage_features(x, 1);
    const Tensor five = resample_frames(f, 5).data.value();
    EXPECT_DOUBLE_EQ(five[0], 1.0);
    EXPECT_DOUBLE_EQ(five[1], 1.5);
    EXPECT_DOUBLE_EQ(five[2], 2.0);
    EXPECT_DOUBLE_EQ(five[3], 3.0);
    EXPECT_DOUBLE_EQ(five[4], 4.0);
    EXPECT_DOUBLE_EQ(resample_frames(f, 1).data.value()[0], 7.0 / 3.0);
    EXPECT_EQ(values(resample_frames(f, 3).data.value()), values(x));
    EXPECT_THROW(resample_frames(f, 0), std::invalid_argument);
}

TEST(Bilinear, DoublingAndIdentity) {
    const auto map = bilinear_map(2, 2, 2, 2);
    ag::Var x = ag::Var::constant(Tensor({4, 1}, std::vector<double>{1, 2, 3, 4}));
    EXPECT_EQ(values(ag::sparse_rows(x, map).value()), values(x.value()));

    const Tensor up = ag::sparse_rows(x, bilinear_map(2, 2, 4, 4)).value();
    EXPECT_DOUBLE_EQ(up[0], 1.0);                // clamped corner
    EXPECT_DOUBLE_EQ(up[1], 1.25);               // quarter step along x
    EXPECT_DOUBLE_EQ(up[5], 1.0 + 0.25 * 3.0);   // quarter step along both axes
    EXPECT_DOUBLE_EQ(up[15], 4.0);
}

TEST(Conv3x3, MatchesDirectLoop) {
    Rng rng(2);
    const Index H = 4, W = 5, Ci = 3, Co = 2;
    const Tensor x = random_tensor({H * W, Ci}, rng);
    const Tensor w = random_tensor({9 * Ci, Co}, rng);
    const Tensor b = random_tensor({Co}, rng);
    const Tensor got = conv3x3(ag::Var::constant(x), H, W, ag::Var::constant(w), ag::Var::constant(b)).value();
    for (Index y = 0; y < H; ++y)
        for (Index xx = 0; xx < W; ++xx)
            for (Index o = 0; o < Co; ++o) {
                double s = b[o];
                for (Index ky = 0; ky < 3; ++ky)
                    for (Index kx = 0; kx < 3; ++kx) {
                        const Index sy = y + ky - 1, sx = xx + kx - 1;
                        if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                        for (Index c = 0; c < Ci; ++c) s += x[(sy * W + sx) * Ci + c] * w[((ky * 3 + kx) * Ci + c) * Co + o];
                    }
                EXPECT_NEAR(got[(y * W + xx) * Co + o], s, 1e-12);
            }
}

TEST(Decoder, FullResolutionLogitsAndChannelBookkeeping) {
    const Config c = decoder_config();
    Rng rng(3);
    Built b = build(c, {random_tensor({10, 8, 32, 32}, rng)}, 4);
    const DecoderOutput out = decode(b.store, c.model, views(c, b), std::nullopt, false);
    EXPECT_EQ(out.height, 32);
    EXPECT_EQ(out.width, 32);
    EXPECT_EQ(out.logits.shape(), (Shape{32 * 32, 3}));

    // T_i at the reference length 8 with S1 = 2: (4, 2, 1, 1); C_i = (8, 16, 32, 64).
    const auto slots = decoder_slots(c.model, c.sources[0]);
    EXPECT_EQ(slots, (std::array<Index, 4>{4, 2, 1, 1}));
    const std::array<Index, 3> want{1 * 32 + 1 * 64, 2 * 16 + 8, 4 * 8 + 8};
    EXPECT_EQ(out.concat_channels, want);
    EXPECT_EQ(decoder_concat_channels(c.model, c.sources), want);

    for (int label : argmax_rows(out.logits.value())) {
        EXPECT_GE(label, 0);
        EXPECT_LT(label, 3);
    }
}

TEST(Decoder, TwoSourcesFuseOnTheFinestGrid) {
    Config c = decoder_config();
    c.sources[0].tile_size = 64;
    SourceSpec coarse;
    coarse.name = "modis";
    coarse.bands = 7;
    coarse.tile_size = 32;
    c.sources.push_back(coarse);
    Rng rng(5);
    Built b = build(c, {random_tensor({10, 8, 64, 64}, rng), random_tensor({7, 8, 32, 32}, rng)}, 6);
    const DecoderOutput out = decode(b.store, c.model, views(c, b), std::nullopt, false);
    EXPECT_EQ(out.height, 64);
    EXPECT_EQ(out.width, 64);
    EXPECT_EQ(out.concat_channels, decoder_concat_channels(c.model, c.sources));
    EXPECT_EQ(out.concat_channels[0], 2 * 64 + 2 * 32);
}

TEST(Decoder, InferenceIsDeterministic) {
    const Config c = decoder_config();
    Rng rng(7);
    Built b = build(c, {random_tensor({10, 8, 32, 32}, rng)}, 8);
    const Tensor first = decode(b.store, c.model, views(c, b), std::nullopt, false).logits.value();
    const Tensor second = decode(b.store, c.model, views(c, b), std::nullopt, false).logits.value();
    EXPECT_EQ(values(first), values(second));
    EXPECT_THROW(decode(b.store, c.model, {}, std::nullopt, false), std::invalid_argument);
}

TEST(Decoder, ZeroAuxWithZeroWeightsIsNeutral) {
    const Config plain = decoder_config();
    Config with_aux = plain;
    with_aux.model.aux_channels = 3;
    with_aux.model.aux_layer = 2;
    Rng rng(9);
    const Tensor input = random_tensor({10, 8, 32, 32}, rng);
    Built a = build(plain, {input}, 10);
    Built b = build(with_aux, {input}, 10);

    const Index cat = decoder_concat_channels(plain.model, plain.sources)[1];
    for (auto& [name, p] : b.store.params()) {
        const Tensor& src = a.store.get(name).value();
        Tensor& dst = p.mutable_value();
        if (name != "decoder.layer2.conv1.weight") {
            dst = src;
            continue;
        }
        const Index out = dst.dim(1);
        dst.fill(0.0);
        for (Index k = 0; k < 9; ++k)
            for (Index ci = 0; ci < cat; ++ci)
                for (Index o = 0; o < out; ++o) dst[(k * (cat + 3) + ci) * out + o] = src[(k * cat + ci) * out + o];
    }
    const Tensor ref = decode(a.store, plain.model, views(plain, a), std::nullopt, false).logits.value();
    const Tensor got = decode(b.store, with_aux.model, views(with_aux, b), Tensor({8, 8, 3}), false).logits.value();
    EXPECT_EQ(values(ref), values(got));

    EXPECT_THROW(decode(b.store, with_aux.model, views(with_aux, b), std::nullopt, false), std::invalid_argument);
    EXPECT_THROW(decode(b.store, with_aux.model, views(with_aux, b), Tensor({8, 8, 2}), false), std::invalid_argument);
}

TEST(HardMining, UniformLogitsGiveLn2) {
    const ag::Var logits = ag::Var::constant(Tensor({6, 2}));
    const std::vector<int> labels{0, 1, 0, 1, 1, 0};
    for (double rho : {0.1, 0.25, 0.5, 1.0})
        EXPECT_NEAR(ce_loss_hard_mining(logits, labels, rho, 1).value()[0], std::log(2.0), 1e-12);
}

TEST(HardMining, SortAndAverage) {
    const ag::Var logits = logits_for_losses({0.1, 0.2, 1.0, 2.0});
    const std::vector<int> labels(4, 0);
    EXPECT_NEAR(ce_loss_hard_mining(logits, labels, 0.5, 1).value()[0], 1.5, 1e-12);
    EXPECT_NEAR(ce_loss_hard_mining(logits, labels, 1.0, 1).value()[0], 3.3 / 4.0, 1e-12);
    EXPECT_NEAR(ce_loss_hard_mining(logits, labels, 0.25, 3).value()[0], 3.2 / 3.0, 1e-12);
}

TEST(HardMining, MonotoneInKeepFraction) {
    Rng rng(11);
    const ag::Var logits = ag::Var::constant(random_tensor({200, 4}, rng, 2.0));
    std::vector<int> labels(200);
    for (int& l : labels) l = static_cast<int>(rng.uniform_int(4));
    double prev = std::numeric_limits<double>::infinity();
    for (double rho = 0.05; rho <= 1.0; rho += 0.05) {
        const double v = ce_loss_hard_mining(logits, labels, rho, 1).value()[0];
        EXPECT_LE(v, prev + 1e-12);
        prev = v;
    }
}

TEST(HardMining, IgnoredPixels) {
    const ag::Var logits = logits_for_losses({0.1, 0.2, 1.0, 2.0});
    EXPECT_NEAR(ce_loss_hard_mining(logits, {0, 0, 0, 255}, 1.0, 1, 255).value()[0], 1.3 / 3.0, 1e-12);
    EXPECT_THROW(ce_loss_hard_mining(logits, {255, 255, 255, 255}, 1.0, 1, 255), std::invalid_argument);
}
