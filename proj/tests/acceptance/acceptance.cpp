// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Pass criterion numbers to run a subset.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "phenoswin/backbone.hpp"
#include "phenoswin/cli.hpp"
#include "phenoswin/evaluation.hpp"
#include "phenoswin/pretrain.hpp"
#include "phenoswin/synthetic.hpp"
#include "phenoswin/training.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace phenoswin;
namespace fs = std::filesystem;
using phenoswin::testing::random_tensor;

namespace {

// Pinned tolerances and thresholds.
constexpr double kAttentionRelTol = 1e-5;
constexpr double kGradStep = 1e-5;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradFloor = 1e-8;
constexpr double kEmaRelTol = 1e-9;
constexpr double kEmaAnchor = 0.36770;
constexpr double kEmaAnchorTol = 1e-4;
constexpr double kOverfitF1 = 0.99;
constexpr double kTemporalMargin = 0.10;
constexpr double kVariableGap = 0.05;
constexpr double kFlopsRatioAt16 = 0.7;
constexpr double kMetricExampleTol = 1e-12;
constexpr double kEndToEndSeconds = 900.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
}

fs::path scratch_root() {
    if (const char* dir = std::getenv("PHENOSWIN_ACCEPTANCE_DIR")) return dir;
    return fs::temp_directory_path() / "phenoswin_acceptance";
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = scratch_root() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (Index i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

SourceSpec sentinel(int bands, int tile) {
    SourceSpec s;
    s.name = "sentinel2";
    s.bands = bands;
    s.tile_size = tile;
    return s;
}

/// Small learning setup shared by the training criteria: 32 px tiles, one
/// block per stage, 8 frames.
Config learning_config(std::uint64_t seed) {
    Config c = phenoswin::testing::toy_config();
    c.model.depths = {1, 1, 1, 1};
    c.model.embed_dim = 16;
    c.sources = {sentinel(4, 32)};
    c.training.seed = seed;
    c.data.seed = seed;
    c.data.noise = 0.05;
    return c;
}

std::vector<LoadedTile> make_tiles(const Config& c, const std::string& name) {
    const fs::path root = fresh_dir(name);
    generate_dataset(c, root, 4);
    return load_dataset(root, c.sources);
}

// ---- 1 ------------------------------------------------------------------------

Outcome shape_law() {
    ModelConfig model;
    model.embed_dim = 8;
    model.depths = {1, 1, 1, 1};
    const TemporalPatchRule rules[] = {{16, 2, 4}, {8, 2, 4}, {32, 2, 2}};
    Rng rng(101);
    int checked = 0;
    for (const TemporalPatchRule& rule : rules) {
        SourceSpec s = sentinel(2, 64);
        s.temporal_patch_rule = rule;
        ParamStore store;
        init_backbone(store, model, {s}, rng);
        ag::NoGradGuard no_grad;
        for (int T = 3; T <= 32; ++T)
            for (Index size : {64, 96}) {
                const auto want = oracle::stage_dims(T, size, size, rule.select(T), 4, model.embed_dim);
                const auto closed = stage_shapes(model, s, T, size, size);
                const auto out = backbone_forward(store, model, s, random_tensor({2, T, size, size}, rng));
                for (int i = 0; i < 4; ++i) {
                    const Shape expect{want[i].frames, want[i].height, want[i].width, want[i].channels};
                    const Shape from_closed{closed[i].frames, closed[i].height, closed[i].width, closed[i].channels};
                    if (out.stages[i].shape() != expect || from_closed != expect)
                        return {false, "T=" + std::to_string(T) + " size=" + std::to_string(size) + " stage " +
                                           std::to_string(i + 1) + " got " + shape_string(out.stages[i].shape()) +
                                           " want " + shape_string(expect)};
                }
                ++checked;
            }
    }
    return {true, std::to_string(checked) + " (T, size, rule) cases"};
}

// ---- 2 ------------------------------------------------------------------------

Outcome merge_oracle() {
    Rng rng(102);
    for (int trial = 0; trial < 100; ++trial) {
        const Index T = 1 + rng.uniform_int(8), H = 2 * (1 + rng.uniform_int(8)), W = 2 * (1 + rng.uniform_int(8)),
                    C = 1 + rng.uniform_int(8);
        const Tensor x = random_tensor({T, H, W, C}, rng);
        const StageFeatures got = merge_gather_pool(make_stage_features(x, 1), {2, 2, static_cast<int>(C), true});
        const Tensor want = oracle::merge(x, 2, 2);
        if (got.data.value().numel() != want.numel() || max_abs_diff(got.data.value(), want) != 0.0)
            return {false, "trial " + std::to_string(trial) + " shape " + shape_string({T, H, W, C})};
    }
    return {true, "100 random shapes, exact"};
}

// ---- 3 ------------------------------------------------------------------------

Outcome fraction_oracle() {
    Rng rng(103);
    for (int trial = 0; trial < 1000; ++trial) {
        std::map<int, int> table;
        for (int code = 0; code <= 20; ++code)
            if (rng.uniform() < 0.7) table[code] = static_cast<int>(rng.uniform_int(kFractionBins));
        const ClassMapping mapping(table);
        LabelMap labels(1 + rng.uniform_int(32), 1 + rng.uniform_int(32));
        for (int& v : labels.codes) v = static_cast<int>(rng.uniform_int(21));
        const FractionVector got = compute_fractions(labels, mapping);
        std::array<double, kFractionBins> counts{};
        for (int v : labels.codes) counts[static_cast<std::size_t>(mapping.bin(v))] += 1.0;
        const double n = static_cast<double>(labels.codes.size());
        for (int b = 0; b < kFractionBins; ++b)
            if (got[b] != counts[b] / n) return {false, "trial " + std::to_string(trial) + " bin " + std::to_string(b)};
    }
    return {true, "1000 random maps, exact"};
}

// ---- 4 ------------------------------------------------------------------------

Outcome attention_degeneracy() {
    Rng rng(104);
    ModelConfig model;
    model.window_temporal = 2;
    model.window_spatial = 4;
    ParamStore store;
    init_swin_block(store, "blk", 8, 2, model, rng);
    for (auto& [name, p] : store.params()) {
        const bool scale = name.ends_with("norm1.weight") || name.ends_with("norm2.weight");
        for (double& v : p.mutable_value().data()) v = (scale ? 1.0 : 0.0) + 0.3 * rng.normal();
    }
    const Tensor x = random_tensor({2 * 4 * 4, 8}, rng);
    const StageFeatures got =
        swin_block(store, "blk", make_stage_features(x.reshaped({2, 4, 4, 8}), 1), 2, {2, 4}, false, true);
    const Tensor want = oracle::block(store, "blk", x, 2, 4, 4, 2, 2, 4, false, true);
    double scale = 0.0;
    for (double v : want.data()) scale = std::max(scale, std::abs(v));
    const double rel = max_abs_diff(got.data.value(), want) / scale;
    return {rel <= kAttentionRelTol, "relative error " + fmt(rel, 3)};
}

// ---- 5 ------------------------------------------------------------------------

Outcome gradient_check() {
    Config c = learning_config(105);
    c.model.embed_dim = 8;
    c.sources = {sentinel(3, 32)};
    PretrainNets nets = make_pretrain_nets(c.model, c.sources, 105, false);
    Rng rng(105);
    const Tensor input = random_tensor({3, 8, 32, 32}, rng);
    const FractionVector target{0.1, 0.3, 0.0, 0.25, 0.05, 0.0, 0.2, 0.1, 0.0};
    auto loss = [&] { return l1_fraction_loss({predict_fractions(nets.student, c.model, c.sources[0], input)}, {target}); };

    nets.student.zero_grad();
    ag::backward(loss());
    std::vector<std::pair<std::string, Index>> sizes;
    Index total = 0;
    for (auto& [name, p] : nets.student.params()) {
        sizes.push_back({name, p.value().numel()});
        total += p.value().numel();
    }
    double worst = 0.0;
    std::string worst_name;
    for (int k = 0; k < 30; ++k) {
        Index flat = rng.uniform_int(total);
        std::string name;
        for (const auto& [n, size] : sizes) {
            if (flat < size) {
                name = n;
                break;
            }
            flat -= size;
        }
        ag::Var p = nets.student.get(name);
        const double analytic = p.grad()[flat];
        auto data = p.mutable_value().data();
        const double keep = data[flat];
        double up, down;
        {
            ag::NoGradGuard no_grad;
            data[flat] = keep + kGradStep;
            up = loss().value()[0];
            data[flat] = keep - kGradStep;
            down = loss().value()[0];
        }
        data[flat] = keep;
        const double numeric = (up - down) / (2.0 * kGradStep);
        const double rel =
            std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
        if (rel > worst) {
            worst = rel;
            worst_name = name + "[" + std::to_string(flat) + "]";
        }
    }
    return {worst < kGradRelTol, "30 coordinates, worst relative error " + fmt(worst, 3) + " at " + worst_name};
}

// ---- 6 ------------------------------------------------------------------------

Outcome ema_law() {
    Rng rng(106);
    const double tau = 0.001;
    ParamStore teacher, student;
    teacher.add("w", random_tensor({100}, rng));
    student.add("w", random_tensor({100}, rng));
    const Tensor s = student.get("w").value();
    auto distance = [&] {
        double d = 0.0;
        for (Index i = 0; i < s.numel(); ++i) d += std::pow(teacher.get("w").value()[i] - s[i], 2);
        return std::sqrt(d);
    };
    const double d0 = distance();
    double worst = 0.0;
    for (int n = 1; n <= 1000; ++n) {
        ema_update(teacher, student, tau);
        const double want = std::pow(1.0 - tau, n) * d0;
        worst = std::max(worst, std::abs(distance() - want) / want);
    }
    ParamStore t1, s1;
    t1.add("w", Tensor({1}, 1.0));
    s1.add("w", Tensor({1}, 0.0));
    for (int n = 0; n < 1000; ++n) ema_update(t1, s1, tau);
    const double anchor = t1.get("w").value()[0];
    const bool pass = worst <= kEmaRelTol && std::abs(anchor - kEmaAnchor) <= kEmaAnchorTol;
    return {pass, "geometric decay error " + fmt(worst, 3) + ", 1000 steps -> " + fmt(anchor, 6)};
}

// ---- 7 ------------------------------------------------------------------------

double fraction_mae(const ParamStore& store, const Config& c, const std::vector<const LoadedTile*>& tiles) {
    ag::NoGradGuard no_grad;
    double total = 0.0;
    for (const LoadedTile* tile : tiles) {
        const Tensor& seq = tile->image(c.sources[0].name);
        const Tensor input = select_frames(seq, evenly_spaced_frames(static_cast<int>(seq.dim(1)), c.training.eval_frames));
        const Tensor p = predict_fractions(store, c.model, c.sources[0], input).value();
        for (int b = 0; b < kFractionBins; ++b) total += std::abs(p[b] - tile->fraction[b]);
    }
    return total / static_cast<double>(tiles.size() * kFractionBins);
}

Outcome mean_teacher_robustness() {
    constexpr int kSeeds = 5;
    constexpr double kCorrupted = 0.2;
    double teacher_sum = 0.0, student_sum = 0.0;
    std::string per_seed;
    for (int seed = 0; seed < kSeeds; ++seed) {
        Config c = learning_config(700 + seed);
        c.data.num_tiles = 40;
        c.data.num_classes = 4;
        c.data.val_fraction = 0.0;
        c.data.test_fraction = 0.25;
        c.training.ema_tau = 0.02;
        c.training.schedule.warmup_iterations = 10;
        c.training.schedule.peak = 1e-3;
        c.training.schedule.floor = 1e-3;
        c.training.schedule.total_iterations = 1500;
        c.training.pretrain_batch_size = 2;
        std::vector<LoadedTile> tiles = make_tiles(c, "robustness");

        Rng rng(derive_seed(c.training.seed, "corrupt"));
        std::vector<LoadedTile*> train;
        for (auto& t : tiles)
            if (t.split == "train") train.push_back(&t);
        const int corrupt = static_cast<int>(std::lround(kCorrupted * static_cast<double>(train.size())));
        for (int i : rng.sorted_sample(static_cast<int>(train.size()), corrupt)) {
            FractionVector f{};
            double sum = 0.0;
            for (double& v : f) sum += (v = -std::log(1.0 - rng.uniform()));
            for (double& v : f) v /= sum;
            train[i]->fraction = f;
        }
        const PretrainResult r = pretrain(c, tiles, {});
        const auto test = tiles_in_split(tiles, "test");
        const double mt = fraction_mae(*r.nets.teacher, c, test);
        const double ms = fraction_mae(r.nets.student, c, test);
        teacher_sum += mt;
        student_sum += ms;
        per_seed += (seed ? ", " : "") + fmt(mt) + "/" + fmt(ms);
        std::cerr << "  [7] seed " << seed << ": teacher " << mt << " student " << ms << '\n';
    }
    const double mt = teacher_sum / kSeeds, ms = student_sum / kSeeds;
    return {mt <= ms, "mean clean MAE teacher " + fmt(mt) + " vs student " + fmt(ms) + " (per seed " + per_seed + ")"};
}

// ---- 8 ------------------------------------------------------------------------

Outcome overfit() {
    std::string detail;
    for (const std::string upsample : {"bilinear", "learned"}) {
        Config c = learning_config(800);
        c.model.final_upsample = upsample;
        c.data.num_tiles = 8;
        c.data.num_classes = 2;
        c.data.val_fraction = 0.0;
        c.data.test_fraction = 0.0;
        c.training.finetune_epochs = 200;
        const std::vector<LoadedTile> tiles = make_tiles(c, "overfit");
        FinetuneOptions options;
        options.stop_at = kOverfitF1;
        FinetuneResult r = finetune(c, tiles, options);
        std::vector<const LoadedTile*> all;
        for (const auto& t : tiles) all.push_back(&t);
        const double f1 = metrics(evaluate_tiles(r.model, all, c.training, c.training.eval_frames)).macro.f1.value;
        detail += (detail.empty() ? "" : "; ") + upsample + " upsample: training F1 " + fmt(f1) + " after " +
                  std::to_string(r.val_f1.size()) + " epochs";
        if (f1 >= kOverfitF1) return {true, detail};
    }
    return {false, detail};
}

// ---- 9 ------------------------------------------------------------------------

double heldout_f1(const Config& c, const std::vector<LoadedTile>& tiles) {
    FinetuneResult r = finetune(c, tiles, {});
    const int frames = c.training.frame_mode == "single" ? c.training.frames : c.training.eval_frames;
    return metrics(evaluate_tiles(r.model, tiles_in_split(tiles, "test"), c.training, frames)).macro.f1.value;
}

Outcome temporal_necessity() {
    constexpr int kSeeds = 3;
    double sum = 0.0;
    std::string per_seed;
    for (int seed = 0; seed < kSeeds; ++seed) {
        Config c = learning_config(900 + seed);
        c.data.num_tiles = 16;
        c.data.num_classes = 2;
        c.data.task = "phase";
        c.training.finetune_epochs = 15;
        const std::vector<LoadedTile> tiles = make_tiles(c, "temporal");
        const double full = heldout_f1(c, tiles);
        c.training.frame_mode = "single";
        const double single = heldout_f1(c, tiles);
        sum += full - single;
        per_seed += (seed ? ", " : "") + fmt(full) + "/" + fmt(single);
        std::cerr << "  [9] seed " << seed << ": full " << full << " single " << single << '\n';
    }
    const double gap = sum / kSeeds;
    return {gap >= kTemporalMargin, "mean F1 gap " + fmt(gap) + " (full/single per seed " + per_seed + ")"};
}

// ---- 10 -----------------------------------------------------------------------

Outcome variable_length() {
    Config c = learning_config(1000);
    c.data.num_tiles = 16;
    c.data.num_classes = 2;
    c.training.frame_mode = "variable";
    c.training.finetune_epochs = 15;
    const std::vector<LoadedTile> tiles = make_tiles(c, "variable");
    FinetuneResult r = finetune(c, tiles, {});
    const auto test = tiles_in_split(tiles, "test");
    for (int T = 3; T <= 32; ++T)
        for (const LoadedTile* tile : test) {
            Tensor probs;
            (void)predict_labels(r.model, eval_inputs(r.model, *tile, c.training, T), &probs);
            for (double v : probs.data())
                if (!std::isfinite(v)) return {false, "non-finite output at T=" + std::to_string(T)};
        }
    const double f16 = metrics(evaluate_tiles(r.model, test, c.training, 16)).macro.f1.value;
    const double f24 = metrics(evaluate_tiles(r.model, test, c.training, 24)).macro.f1.value;
    return {std::abs(f16 - f24) <= kVariableGap,
            "finite for T in 3..32; F1 " + fmt(f16) + " at T=16, " + fmt(f24) + " at T=24"};
}

// ---- 11 -----------------------------------------------------------------------

double forward_seconds(const ModelConfig& model, const SourceSpec& s, int frames) {
    ParamStore store;
    Rng rng(111);
    init_backbone(store, model, {s}, rng);
    const Tensor input = random_tensor({s.bands, frames, s.tile_size, s.tile_size}, rng);
    ag::NoGradGuard no_grad;
    double best = INFINITY;
    for (int rep = 0; rep < 3; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        (void)backbone_forward(store, model, s, input);
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

Outcome flops() {
    const Config c = load_config(fs::path(PHENOSWIN_SOURCE_DIR) / "configs" / "toy.json");
    const SourceSpec& s = c.sources[0];
    ModelConfig off = c.model;
    off.temporal_downsampling = false;
    for (int T = 3; T <= 32; ++T) {
        const auto a = flops_estimate(c.model, s, T, s.tile_size, s.tile_size).total();
        const auto b = flops_estimate(off, s, T, s.tile_size, s.tile_size).total();
        if (a >= b) return {false, "T=" + std::to_string(T) + ": " + std::to_string(a) + " >= " + std::to_string(b)};
    }
    const double ratio = static_cast<double>(flops_estimate(c.model, s, 16, s.tile_size, s.tile_size).total()) /
                         static_cast<double>(flops_estimate(off, s, 16, s.tile_size, s.tile_size).total());
    const double ta = forward_seconds(c.model, s, 16), tb = forward_seconds(off, s, 16);
    return {ratio <= kFlopsRatioAt16, "strictly fewer MACs for T in 3..32; ratio at T=16 " + fmt(ratio) +
                                          "; forward " + fmt(ta * 1e3, 3) + " ms vs " + fmt(tb * 1e3, 3) + " ms"};
}

// ---- 12 -----------------------------------------------------------------------

Outcome metrics_oracle() {
    Rng rng(112);
    for (int trial = 0; trial < 1000; ++trial) {
        const int K = 2 + static_cast<int>(rng.uniform_int(5));
        const int n = 1 + static_cast<int>(rng.uniform_int(1024));
        std::vector<int> pred(n), gt(n);
        for (int i = 0; i < n; ++i) {
            pred[i] = static_cast<int>(rng.uniform_int(K));
            gt[i] = rng.uniform() < 0.05 ? 255 : static_cast<int>(rng.uniform_int(K));
        }
        const MetricsReport r = metrics(confusion(pred, gt, K, 255));
        const oracle::PixelMetrics want = oracle::pixel_metrics(pred, gt, K, 255);
        bool ok = r.macro.f1.value == want.macro_f1 && r.overall_accuracy.value == want.overall_accuracy;
        for (int k = 0; k < K && ok; ++k)
            ok = r.per_class[k].precision.value == want.per_class[k][0] &&
                 r.per_class[k].recall.value == want.per_class[k][1] && r.per_class[k].f1.value == want.per_class[k][2] &&
                 r.per_class[k].oa.value == want.per_class[k][3];
        if (!ok) return {false, "trial " + std::to_string(trial) + " differs from the pixel oracle"};
    }
    const ClassMetrics m = class_metrics({8, 2, 88, 2});
    const bool example = std::abs(m.precision.value - 0.8) <= kMetricExampleTol &&
                         std::abs(m.recall.value - 0.8) <= kMetricExampleTol &&
                         std::abs(m.f1.value - 0.8) <= kMetricExampleTol &&
                         std::abs(m.oa.value - 0.96) <= kMetricExampleTol;
    return {example, "1000 random pairs exact; TP=8 FP=2 FN=2 TN=88 -> P=R=F1=" + fmt(m.f1.value) +
                         " OA=" + fmt(m.oa.value)};
}

// ---- 13, 14: command line ---------------------------------------------------------

int run_cli(const std::vector<std::string>& args, const fs::path& log) {
    std::string cmd = std::string("\"") + PHENOSWIN_CLI_PATH + "\"";
    for (const auto& a : args) cmd += " \"" + a + "\"";
    cmd += " >>\"" + log.string() + "\" 2>&1";
    return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::string kToyConfig = (fs::path(PHENOSWIN_SOURCE_DIR) / "configs" / "toy.json").string();

Outcome determinism() {
    const fs::path dir = fresh_dir("determinism");
    const fs::path log = dir / "cli.log";
    const std::string data = (dir / "data").string();
    if (run_cli({"gen-data", "--config", kToyConfig, "--data", data, "--out", (dir / "gen").string()}, log) != 0)
        return {false, "gen-data failed, see " + log.string()};
    for (const char* run : {"a", "b"})
        if (run_cli({"pretrain", "--config", kToyConfig, "--data", data, "--iterations", "200", "--out",
                     (dir / run).string()},
                    log) != 0)
            return {false, std::string("pretrain run ") + run + " failed, see " + log.string()};
    int files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(dir / "a" / "checkpoint")) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), dir / "a");
        if (slurp(entry.path()) != slurp(dir / "b" / rel)) return {false, rel.string() + " differs"};
        ++files;
    }
    if (files == 0) return {false, "no checkpoint files written"};
    if (slurp(dir / "a" / "pretrain_log.jsonl") != slurp(dir / "b" / "pretrain_log.jsonl"))
        return {false, "pretrain_log.jsonl differs"};
    return {true, std::to_string(files) + " checkpoint files and the loss log are byte-identical"};
}

Outcome end_to_end() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fresh_dir("end_to_end");
    const fs::path log = dir / "cli.log";
    const std::string data = (dir / "data").string();
    const std::vector<std::pair<std::string, std::vector<std::string>>> steps{
        {"gen-data", {"gen-data", "--config", kToyConfig, "--data", data, "--out", (dir / "gen").string()}},
        {"pretrain", {"pretrain", "--config", kToyConfig, "--data", data, "--out", (dir / "pretrain").string()}},
        {"finetune",
         {"finetune", "--config", kToyConfig, "--data", data, "--checkpoint", (dir / "pretrain" / "checkpoint").string(),
          "--out", (dir / "finetune").string()}},
        {"evaluate",
         {"evaluate", "--config", kToyConfig, "--data", data, "--checkpoint", (dir / "finetune" / "checkpoint").string(),
          "--out", (dir / "evaluate").string()}},
        {"predict",
         {"predict", "--config", kToyConfig, "--data", data, "--checkpoint", (dir / "finetune" / "checkpoint").string(),
          "--out", (dir / "predict").string()}},
    };
    for (const auto& [name, args] : steps)
        if (run_cli(args, log) != 0) return {false, name + " failed, see " + log.string()};
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::ifstream report_in(dir / "evaluate" / "report.json");
    const nlohmann::json report = nlohmann::json::parse(report_in, nullptr, false);
    if (report.is_discarded()) return {false, "report.json does not parse"};
    fs::path pgm;
    for (const auto& entry : fs::directory_iterator(dir / "predict"))
        if (entry.path().extension() == ".pgm") pgm = entry.path();
    if (pgm.empty()) return {false, "predict wrote no class map"};
    const LabelMap map = read_pgm(pgm);
    const Config c = load_config(kToyConfig);
    const Index tile = c.sources[0].tile_size;
    if (map.height != tile || map.width != tile)
        return {false, "class map is " + std::to_string(map.height) + "x" + std::to_string(map.width)};
    return {seconds <= kEndToEndSeconds, "five commands in " + fmt(seconds, 3) + " s; report.json parses; " +
                                             std::to_string(tile) + "x" + std::to_string(tile) + " class map"};
}

struct Criterion {
    int id;
    std::string name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {1, "stage shape law", shape_law},
        {2, "merge oracle", merge_oracle},
        {3, "fraction oracle", fraction_oracle},
        {4, "whole-map window equals dense attention", attention_degeneracy},
        {5, "gradient check", gradient_check},
        {6, "EMA law", ema_law},
        {7, "mean-teacher robustness to label noise", mean_teacher_robustness},
        {8, "overfit a tiny dataset", overfit},
        {9, "temporal information matters", temporal_necessity},
        {10, "variable-length inference", variable_length},
        {11, "temporal downsampling saves compute", flops},
        {12, "metrics oracle", metrics_oracle},
        {13, "deterministic pretraining", determinism},
        {14, "end-to-end command line", end_to_end},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << std::setw(2) << c.id << "] " << c.name << ": " << o.detail
                  << " (" << fmt(seconds, 3) << " s)" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
