#include "phenoswin/cli.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "phenoswin/training.hpp"

namespace phenoswin {

namespace fs = std::filesystem;
using nlohmann::json;

void write_pgm(const fs::path& path, const LabelMap& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << "P5\n" << map.width << ' ' << map.height << "\n255\n";
    for (int v : map.codes) {
        if (v < 0 || v > 255) throw std::invalid_argument("write_pgm: class value outside 0..255");
        out.put(static_cast<char>(v));
    }
}

LabelMap read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string magic;
    Index w = 0, h = 0;
    int maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (!in || magic != "P5" || maxval != 255) throw std::runtime_error("'" + path.string() + "' is not an 8-bit P5 PGM");
    in.get();
    LabelMap map(h, w);
    for (auto& v : map.codes) v = static_cast<unsigned char>(in.get());
    if (!in) throw std::runtime_error("'" + path.string() + "' is truncated");
    return map;
}

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> sources;
    std::optional<std::string> data;
};

void add_common(CLI::App* cmd, CommonFlags& f, const std::string& default_out, bool data_flag = true) {
    cmd->add_option("--config", f.config_path, "JSON config file (default: built-in toy defaults)");
    cmd->add_option("--seed", f.seed, "run seed (default: config value, 0)");
    f.out = default_out;
    cmd->add_option("--out", f.out, "run directory")->capture_default_str();
    cmd->add_option("--source", f.sources, "restrict to this source; repeatable (default: every configured source)");
    if (data_flag) cmd->add_option("--data", f.data, "dataset directory (default: data.root from the config)");
}

void note_override(const std::string& field, const std::string& value) {
    std::cerr << "override: " << field << " = " << value << " (flag)\n";
}

template <typename T>
void apply(const std::optional<T>& flag, T& field, const std::string& name) {
    if (!flag) return;
    field = *flag;
    std::ostringstream os;
    if constexpr (std::is_same_v<T, bool>)
        os << (*flag ? "true" : "false");
    else
        os << *flag;
    note_override(name, os.str());
}

Config resolve_config(const CommonFlags& f, const fs::path& fallback_dir = {}) {
    Config c;
    if (!f.config_path.empty()) {
        c = load_config(f.config_path);
    } else if (!fallback_dir.empty() && fs::exists(fallback_dir / "config.json")) {
        c = load_config(fallback_dir / "config.json");
        std::cerr << "config: using snapshot " << (fallback_dir / "config.json").string() << '\n';
    } else {
        SourceSpec s;
        s.name = "sentinel2";
        s.bands = default_band_count(s.name);
        c.sources = {s};
    }
    if (!f.sources.empty()) {
        std::vector<SourceSpec> chosen;
        for (const auto& name : f.sources) {
            auto it = std::find_if(c.sources.begin(), c.sources.end(), [&](const SourceSpec& s) { return s.name == name; });
            if (it != c.sources.end()) {
                chosen.push_back(*it);
            } else if (default_band_count(name) > 0) {
                SourceSpec s;
                s.name = name;
                s.bands = default_band_count(name);
                chosen.push_back(s);
            } else {
                throw ConfigError("--source '" + name + "' is neither configured nor a built-in source");
            }
        }
        c.sources = chosen;
        note_override("sources", std::to_string(chosen.size()) + " selected");
    }
    apply(f.data, c.data.root, "data.root");
    return c;
}

/// Writes the resolved config into the run directory before any work starts.
void start_run(const fs::path& out, const Config& c) {
    validate(c);
    fs::create_directories(out);
    std::ofstream cfg(out / "config.json");
    cfg << to_json(c).dump(2) << '\n';
    std::ofstream run(out / "run.json");
    run << json{{"seed", c.training.seed}, {"data_seed", c.data.seed}, {"config_hash", config_hash(c)}}.dump(2) << '\n';
    if (!cfg || !run) throw std::runtime_error("cannot write run directory '" + out.string() + "'");
}

class JsonLines {
public:
    explicit JsonLines(const fs::path& path) : out_(path) {
        if (!out_) throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    void operator()(const json& j) { out_ << j.dump() << '\n'; }

private:
    std::ofstream out_;
};

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

const LoadedTile& find_tile(const std::vector<LoadedTile>& tiles, const std::string& geo_id) {
    for (const auto& t : tiles)
        if (t.geo_id == geo_id) return t;
    throw std::invalid_argument("no tile '" + geo_id + "' in the dataset");
}

// ---- subcommands ----------------------------------------------------------------

int cmd_gen_data(const CommonFlags& f, std::optional<int> tiles, std::optional<int> classes,
                 std::optional<std::string> task, std::optional<double> noise, int workers) {
    Config c = resolve_config(f);
    apply(f.seed, c.data.seed, "data.seed");
    apply(tiles, c.data.num_tiles, "data.num_tiles");
    apply(classes, c.data.num_classes, "data.num_classes");
    apply(task, c.data.task, "data.task");
    apply(noise, c.data.noise, "data.noise");
    start_run(f.out, c);
    const DatasetInfo info = generate_dataset(c, c.data.root, workers);
    std::cout << "wrote " << info.tiles.size() << " tiles to " << c.data.root << '\n';
    return 0;
}

int cmd_extract_fractions(const CommonFlags& f, const std::string& mapping_path, int min_len, std::optional<int> tile) {
    Config c = resolve_config(f);
    start_run(f.out, c);
    const fs::path root = c.data.root;
    const DatasetInfo info = read_dataset_info(root);
    const ClassMapping mapping = mapping_path.empty() ? synthetic_class_mapping(info.num_classes) : ClassMapping::load(mapping_path);
    std::vector<TileRecord> records;
    std::vector<SourceSequence> sequences;
    for (const auto& t : info.tiles) {
        const LabelMap labels = read_labels(root, t.geo_id);
        const auto crops = crop_tiles(labels, tile.value_or(labels.height));
        for (const auto& crop : crops) {
            std::string id = t.geo_id;
            if (crops.size() > 1) id += "_r" + std::to_string(crop.offset.row) + "_c" + std::to_string(crop.offset.col);
            records.push_back({id, crop.labels, t.split});
            for (const auto& s : c.sources) {
                std::ifstream header(root / "scenes" / t.geo_id / (s.name + ".json"));
                if (!header) continue;
                const int frames = static_cast<int>(json::parse(header).at("dims").at(1).get<Index>());
                SourceSequence seq{id, s.name, {}};
                for (int k = 0; k < frames; ++k)
                    seq.frames.push_back({frame_reference(t.geo_id, s.name, k), static_cast<double>(k) / frames});
                sequences.push_back(std::move(seq));
            }
        }
    }
    const SequenceManifest manifest = build_manifest(records, sequences, min_len, mapping, c.training.frames);
    write_manifest(fs::path(f.out) / "manifest.jsonl", manifest);
    std::cout << "manifest: " << manifest.entries.size() << " entries, " << manifest.warnings.size() << " warnings -> "
              << (fs::path(f.out) / "manifest.jsonl").string() << '\n';
    return 0;
}

int cmd_pretrain(const CommonFlags& f, std::optional<std::int64_t> iterations, std::optional<std::string> frame_mode,
                 bool no_teacher, bool no_fraction, std::optional<double> tau, std::optional<int> batch) {
    Config c = resolve_config(f);
    apply(f.seed, c.training.seed, "training.seed");
    apply(iterations, c.training.schedule.total_iterations, "training.schedule.total_iterations");
    apply(frame_mode, c.training.frame_mode, "training.frame_mode");
    apply(tau, c.training.ema_tau, "training.ema_tau");
    apply(batch, c.training.pretrain_batch_size, "training.pretrain_batch_size");
    if (no_teacher) apply(std::optional<bool>(false), c.training.mean_teacher, "training.mean_teacher");
    if (no_fraction) apply(std::optional<bool>(false), c.training.fraction_supervision, "training.fraction_supervision");
    const fs::path out = f.out;
    start_run(out, c);
    const auto tiles = load_dataset(c.data.root, c.sources);

    JsonLines log(out / "pretrain_log.jsonl");
    std::vector<double> totals;
    PretrainOptions options;
    options.checkpoint_dir = out / "checkpoints";
    options.log = [&](const json& j) {
        log(j);
        totals.push_back(j.at("total").get<double>());
    };
    const PretrainResult result = pretrain(c, tiles, options);
    save_checkpoint(out / "checkpoint", make_bundle(result.nets.student, result.nets.teacher ? &*result.nets.teacher : nullptr,
                                                    run_metadata(c, "pretrain", result.iterations)));
    fs::create_directories(out / "plots");
    plot_curves({totals}, out / "plots" / "pretrain_loss.png");
    std::cout << "pretrained " << result.iterations << " iterations; final loss "
              << (totals.empty() ? 0.0 : totals.back()) << "; checkpoint " << (out / "checkpoint").string() << '\n';
    return 0;
}

int cmd_finetune(const CommonFlags& f, const std::string& checkpoint, const std::string& role,
                 std::optional<int> epochs, std::optional<double> lr, std::optional<double> ratio,
                 const std::vector<std::string>& freeze, std::optional<std::string> frame_mode) {
    Config c = resolve_config(f);
    apply(f.seed, c.training.seed, "training.seed");
    apply(epochs, c.training.finetune_epochs, "training.finetune_epochs");
    apply(lr, c.training.finetune_lr, "training.finetune_lr");
    apply(ratio, c.training.data_ratio, "training.data_ratio");
    apply(frame_mode, c.training.frame_mode, "training.frame_mode");
    if (!freeze.empty()) {
        c.training.freeze = freeze;
        note_override("training.freeze", std::to_string(freeze.size()) + " prefixes");
    }
    const fs::path out = f.out;
    start_run(out, c);
    const auto tiles = load_dataset(c.data.root, c.sources);

    std::optional<CheckpointBundle> pretrained;
    const TensorMap* weights = nullptr;
    if (!checkpoint.empty()) {
        pretrained = load_checkpoint(checkpoint);
        if (role == "teacher" && pretrained->teacher) {
            weights = &*pretrained->teacher;
        } else if (role == "teacher" || role == "student") {
            weights = &pretrained->student;
        } else {
            throw std::invalid_argument("--init-role must be teacher or student");
        }
    }
    JsonLines log(out / "finetune_log.jsonl");
    std::vector<double> losses, f1s;
    FinetuneOptions options;
    options.pretrained = weights;
    options.log = [&](const json& j) {
        log(j);
        losses.push_back(j.at("loss").get<double>());
        f1s.push_back(j.at("val_f1").get<double>());
    };
    FinetuneResult result = finetune(c, tiles, options);
    json meta = run_metadata(c, "finetune", result.best_epoch);
    meta["best_epoch"] = result.best_epoch;
    meta["init"] = checkpoint.empty() ? "scratch" : checkpoint;
    save_checkpoint(out / "checkpoint", make_bundle(result.model.store, nullptr, meta));
    fs::create_directories(out / "plots");
    plot_curves({losses, f1s}, out / "plots" / "finetune_curves.png");
    std::cout << "finetuned " << result.val_f1.size() << " epochs; best epoch " << result.best_epoch << " (val F1 "
              << result.val_f1[result.best_epoch - 1] << ")\n";
    return 0;
}

int cmd_evaluate(const CommonFlags& f, const std::string& checkpoint, const std::string& split,
                 std::optional<int> frames) {
    Config c = resolve_config(f, fs::path(checkpoint).parent_path());
    apply(f.seed, c.training.seed, "training.seed");
    apply(frames, c.training.eval_frames, "training.eval_frames");
    const fs::path out = f.out;
    start_run(out, c);
    SegmentationModel model = load_segmentation_model(c, checkpoint);
    const auto tiles = load_dataset(c.data.root, c.sources);
    auto chosen = tiles_in_split(tiles, split);
    if (chosen.empty()) {
        std::cerr << "warning: split '" << split << "' is empty; evaluating every tile\n";
        for (const auto& t : tiles) chosen.push_back(&t);
    }
    const int n_frames = c.training.frame_mode == "single" ? c.training.frames : c.training.eval_frames;
    const ConfusionCounts counts = evaluate_tiles(model, chosen, c.training, n_frames);
    const MetricsReport report = metrics(counts);
    json j = report_json(report, counts, config_hash(c));
    j["split"] = split;
    j["tiles"] = chosen.size();
    j["frames"] = n_frames;
    write_json_file(out / "report.json", j);
    fs::create_directories(out / "plots");
    plot_f1_bars(report, out / "plots" / "f1_per_class.png");
    const LoadedTile& first = *chosen.front();
    plot_prediction_panel(predict_labels(model, eval_inputs(model, first, c.training, n_frames)), first.labels,
                          out / "plots" / ("panel_" + first.geo_id + ".png"));
    std::cout << "evaluated " << chosen.size() << " tiles: macro F1 " << report.macro.f1.value << ", OA "
              << report.overall_accuracy.value << " -> " << (out / "report.json").string() << '\n';
    return 0;
}

int cmd_predict(const CommonFlags& f, const std::string& checkpoint, std::string tile_id, std::optional<int> frames,
                bool probabilities) {
    Config c = resolve_config(f, fs::path(checkpoint).parent_path());
    apply(frames, c.training.eval_frames, "training.eval_frames");
    const fs::path out = f.out;
    start_run(out, c);
    SegmentationModel model = load_segmentation_model(c, checkpoint);
    const auto tiles = load_dataset(c.data.root, c.sources);
    if (tile_id.empty()) tile_id = tiles.front().geo_id;
    const LoadedTile& tile = find_tile(tiles, tile_id);
    const int n_frames = c.training.frame_mode == "single" ? c.training.frames : c.training.eval_frames;
    Tensor probs;
    const LabelMap map = predict_labels(model, eval_inputs(model, tile, c.training, n_frames), probabilities ? &probs : nullptr);
    write_pgm(out / (tile_id + ".pgm"), map);
    json palette = json::array();
    for (int k = 0; k < c.model.num_classes; ++k) {
        const auto rgb = class_color(k);
        palette.push_back({{"value", k}, {"color", {rgb[0], rgb[1], rgb[2]}}});
    }
    json sidecar = {{"format", "PGM P5, 8-bit class values"},
                    {"height", map.height},
                    {"width", map.width},
                    {"num_classes", c.model.num_classes},
                    {"palette", palette}};
    if (probabilities) {
        std::vector<float> buf(static_cast<std::size_t>(probs.numel()));
        for (Index i = 0; i < probs.numel(); ++i) buf[i] = static_cast<float>(probs[i]);
        std::ofstream bin(out / (tile_id + ".probs.f32"), std::ios::binary);
        bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        sidecar["probabilities"] = {{"file", tile_id + ".probs.f32"}, {"layout", "[height*width, num_classes] float32 LE"}};
    }
    write_json_file(out / (tile_id + ".json"), sidecar);
    std::cout << "class map " << map.height << "x" << map.width << " -> " << (out / (tile_id + ".pgm")).string() << '\n';
    return 0;
}

int cmd_inspect_shapes(const CommonFlags& f, int frames, std::optional<int> size) {
    Config c = resolve_config(f);
    start_run(f.out, c);
    json report = json::array();
    for (const auto& s : c.sources) {
        const int px = size.value_or(s.tile_size);
        const auto shapes = stage_shapes(c.model, s, frames, px, px);
        std::cout << s.name << " T=" << frames << " " << px << "x" << px << " S1="
                  << temporal_patch_size(frames, s.temporal_patch_rule) << '\n';
        json stages = json::array();
        for (int i = 0; i < 4; ++i) {
            const StageShape& st = shapes[i];
            std::cout << "  stage " << i + 1 << ": [" << st.frames << ", " << st.height << ", " << st.width << ", "
                      << st.channels << "]\n";
            stages.push_back({st.frames, st.height, st.width, st.channels});
        }
        report.push_back({{"source", s.name}, {"frames", frames}, {"size", px}, {"stages", stages}});
    }
    write_json_file(fs::path(f.out) / "shapes.json", report);
    return 0;
}

double time_forward(const ModelConfig& model, const SourceSpec& s, int frames, int size, std::uint64_t seed) {
    ParamStore store;
    Rng rng(derive_seed(seed, "bench"));
    init_backbone(store, model, {s}, rng);
    const Tensor input = normal_tensor({s.bands, frames, size, size}, 1.0, rng);
    ag::NoGradGuard no_grad;
    double best = INFINITY;
    for (int rep = 0; rep < 3; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        (void)backbone_forward(store, model, s, input);
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

int cmd_bench_flops(const CommonFlags& f, int frames, std::optional<int> size, bool timing) {
    Config c = resolve_config(f);
    apply(f.seed, c.training.seed, "training.seed");
    start_run(f.out, c);
    json report = json::array();
    for (const auto& s : c.sources) {
        const int px = size.value_or(s.tile_size);
        ModelConfig on = c.model, off = c.model;
        on.temporal_downsampling = true;
        off.temporal_downsampling = false;
        const FlopsReport a = flops_estimate(on, s, frames, px, px);
        const FlopsReport b = flops_estimate(off, s, frames, px, px);
        const double ratio = static_cast<double>(a.total()) / static_cast<double>(b.total());
        json entry = {{"source", s.name},     {"frames", frames},          {"size", px},
                      {"enabled", flops_json(a)}, {"disabled", flops_json(b)}, {"ratio", ratio}};
        std::cout << s.name << " T=" << frames << " " << px << "x" << px << ": with downsampling " << a.total()
                  << " MACs, without " << b.total() << " MACs, ratio " << ratio << '\n';
        if (timing) {
            const double ta = time_forward(on, s, frames, px, c.training.seed);
            const double tb = time_forward(off, s, frames, px, c.training.seed);
            entry["forward_seconds"] = {{"enabled", ta}, {"disabled", tb}};
            std::cout << "  backbone forward: " << ta << " s vs " << tb << " s\n";
        }
        report.push_back(entry);
    }
    write_json_file(fs::path(f.out) / "flops.json", report);
    return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Multi-source temporal encoder pipeline: synthetic data, fraction pretraining, segmentation"};
    app.require_subcommand(1);

    CommonFlags gen_f, frac_f, pre_f, fine_f, eval_f, pred_f, shape_f, flop_f;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-source dataset");
    add_common(gen, gen_f, "runs/gen-data");
    std::optional<int> tiles, classes;
    std::optional<std::string> task;
    std::optional<double> noise;
    int workers = 1;
    gen->add_option("--tiles", tiles, "number of tiles (default: data.num_tiles = 8)");
    gen->add_option("--classes", classes, "number of classes (default: data.num_classes = 2)");
    gen->add_option("--task", task, "distinct | phase (default: data.task = distinct)");
    gen->add_option("--noise", noise, "noise standard deviation (default: data.noise = 0.05)");
    gen->add_option("--workers", workers, "generator threads")->capture_default_str();

    auto* frac = app.add_subcommand("extract-fractions", "recompute fractions and write a sequence manifest");
    add_common(frac, frac_f, "runs/extract-fractions");
    std::string mapping;
    int min_len = 16;
    std::optional<int> tile;
    frac->add_option("--mapping", mapping, "class mapping JSON (default: the dataset's own class mapping)");
    frac->add_option("--min-len", min_len, "minimum sequence length")->capture_default_str();
    frac->add_option("--tile", tile, "tile size for cropping label rasters (default: whole raster)");

    auto* pre = app.add_subcommand("pretrain", "fraction-supervised pretraining");
    add_common(pre, pre_f, "runs/pretrain");
    std::optional<std::int64_t> iterations;
    std::optional<std::string> pre_mode;
    bool no_teacher = false, no_fraction = false;
    std::optional<double> tau;
    std::optional<int> batch;
    pre->add_option("--iterations", iterations, "iterations (default: training.schedule.total_iterations = 200)");
    pre->add_option("--frame-mode", pre_mode, "fixed16 | fixed | variable | single (default: training.frame_mode = fixed16)");
    pre->add_flag("--no-mean-teacher", no_teacher, "disable the teacher and its consistency loss (default: off)");
    pre->add_flag("--no-fraction-supervision", no_fraction, "drop the fraction loss (default: off)");
    pre->add_option("--tau", tau, "EMA coefficient (default: training.ema_tau = 0.001)");
    pre->add_option("--batch-size", batch, "samples per source per step (default: training.pretrain_batch_size = 4)");

    auto* fine = app.add_subcommand("finetune", "train the segmentation decoder and backbone");
    add_common(fine, fine_f, "runs/finetune");
    std::string fine_ckpt, role = "teacher";
    std::optional<int> epochs;
    std::optional<double> lr, ratio;
    std::vector<std::string> freeze;
    std::optional<std::string> fine_mode;
    fine->add_option("--checkpoint", fine_ckpt, "pretrained checkpoint directory (default: none, train from scratch)");
    fine->add_option("--init-role", role, "teacher | student weights to start from")->capture_default_str();
    fine->add_option("--epochs", epochs, "epochs (default: training.finetune_epochs = 50)");
    fine->add_option("--lr", lr, "learning rate (default: training.finetune_lr = 6e-5)");
    fine->add_option("--data-ratio", ratio, "fraction of training tiles used (default: training.data_ratio = 1)");
    fine->add_option("--freeze", freeze, "parameter name prefix to freeze; repeatable (default: none)");
    fine->add_option("--frame-mode", fine_mode, "fixed16 | fixed | variable | single (default: training.frame_mode = fixed16)");

    auto* ev = app.add_subcommand("evaluate", "compute metrics on a dataset split");
    add_common(ev, eval_f, "runs/evaluate");
    std::string eval_ckpt, split = "test";
    std::optional<int> eval_frames;
    ev->add_option("--checkpoint", eval_ckpt, "finetuned checkpoint directory")->required();
    ev->add_option("--split", split, "dataset split")->capture_default_str();
    ev->add_option("--frames", eval_frames, "evenly spaced frames per tile (default: training.eval_frames = 16)");

    auto* pred = app.add_subcommand("predict", "write a class map for one tile");
    add_common(pred, pred_f, "runs/predict");
    std::string pred_ckpt, tile_id;
    std::optional<int> pred_frames;
    bool probs = false;
    pred->add_option("--checkpoint", pred_ckpt, "finetuned checkpoint directory")->required();
    pred->add_option("--tile", tile_id, "tile geo_id (default: first tile)");
    pred->add_option("--frames", pred_frames, "evenly spaced frames (default: training.eval_frames = 16)");
    pred->add_flag("--probabilities", probs, "also dump per-class probabilities as float32 (default: off)");

    auto* shapes = app.add_subcommand("inspect-shapes", "print the per-stage shape chain");
    add_common(shapes, shape_f, "runs/inspect-shapes", false);
    int shape_t = 16;
    std::optional<int> shape_size;
    shapes->add_option("--T", shape_t, "sequence length")->capture_default_str();
    shapes->add_option("--size", shape_size, "tile size in pixels (default: each source's tile_size)");

    auto* flops = app.add_subcommand("bench-flops", "compare MACs with and without temporal downsampling");
    add_common(flops, flop_f, "runs/bench-flops", false);
    int flop_t = 16;
    std::optional<int> flop_size;
    bool no_timing = false;
    flops->add_option("--T", flop_t, "sequence length")->capture_default_str();
    flops->add_option("--size", flop_size, "tile size in pixels (default: each source's tile_size)");
    flops->add_flag("--no-timing", no_timing, "skip the wall-clock forward measurement (default: off)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        if (*gen) return cmd_gen_data(gen_f, tiles, classes, task, noise, workers);
        if (*frac) return cmd_extract_fractions(frac_f, mapping, min_len, tile);
        if (*pre) return cmd_pretrain(pre_f, iterations, pre_mode, no_teacher, no_fraction, tau, batch);
        if (*fine) return cmd_finetune(fine_f, fine_ckpt, role, epochs, lr, ratio, freeze, fine_mode);
        if (*ev) return cmd_evaluate(eval_f, eval_ckpt, split, eval_frames);
        if (*pred) return cmd_predict(pred_f, pred_ckpt, tile_id, pred_frames, probs);
        if (*shapes) return cmd_inspect_shapes(shape_f, shape_t, shape_size);
        if (*flops) return cmd_bench_flops(flop_f, flop_t, flop_size, !no_timing);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace phenoswin
