#include "phenoswin/synthetic.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>
#include <thread>

#include "phenoswin/rng.hpp"

namespace phenoswin {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "dataset files are written in native little-endian order");

double SourceProfile::value(const std::vector<double>& class_phase, const std::vector<double>& class_offset, int cls,
                            int band, int t) const {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(frames);
    return offset[band] + class_offset[cls] + amplitude[band] * std::sin(angle + band_phase[band] + class_phase[cls]);
}

const SourceProfile& PhenologyBank::profile(const std::string& source) const {
    for (const auto& p : sources)
        if (p.source == source) return p;
    throw std::invalid_argument("no phenology profile for source '" + source + "'");
}

PhenologyBank make_phenology(const std::vector<SourceSpec>& sources, int num_classes, const std::string& task,
                             std::uint64_t seed) {
    if (num_classes < 1) throw std::invalid_argument("make_phenology: num_classes must be positive");
    if (task != "distinct" && task != "phase") throw std::invalid_argument("make_phenology: unknown task '" + task + "'");
    PhenologyBank bank;
    for (int c = 0; c < num_classes; ++c) {
        bank.class_phase.push_back(2.0 * std::numbers::pi * c / num_classes);
        bank.class_offset.push_back(task == "distinct" ? 0.3 * c : 0.0);
    }
    Rng rng(derive_seed(seed, "phenology"));
    for (const auto& s : sources) {
        SourceProfile p;
        p.source = s.name;
        p.frames = s.frames_per_year;
        for (int b = 0; b < s.bands; ++b) {
            p.amplitude.push_back(rng.uniform(0.4, 0.8));
            p.band_phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
            p.offset.push_back(rng.uniform(-0.2, 0.2));
        }
        bank.sources.push_back(std::move(p));
    }
    return bank;
}

const Tensor& SceneSample::image(const std::string& source) const {
    for (const auto& im : images)
        if (im.source == source) return im.data;
    throw std::invalid_argument("scene " + geo_id + " has no source '" + source + "'");
}

const Tensor& LoadedTile::image(const std::string& source) const {
    for (const auto& im : images)
        if (im.source == source) return im.data;
    throw std::invalid_argument("tile " + geo_id + " has no source '" + source + "'");
}

ClassMapping synthetic_class_mapping(int num_classes) {
    std::map<int, int> table;
    for (int c = 0; c < num_classes; ++c) table[c] = c % 8 + 1;
    return ClassMapping(table);
}

namespace {

Index finest_size(const std::vector<SourceSpec>& sources) {
    Index fine = 0;
    for (const auto& s : sources) fine = std::max<Index>(fine, s.tile_size);
    return fine;
}

// Separable box blur with edge clamping.
std::vector<double> box_blur(const std::vector<double>& in, Index n, int radius) {
    if (radius == 0) return in;
    std::vector<double> tmp(in.size()), out(in.size());
    const double norm = 1.0 / (2 * radius + 1);
    for (Index y = 0; y < n; ++y)
        for (Index x = 0; x < n; ++x) {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k) s += in[y * n + std::clamp<Index>(x + k, 0, n - 1)];
            tmp[y * n + x] = s * norm;
        }
    for (Index y = 0; y < n; ++y)
        for (Index x = 0; x < n; ++x) {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k) s += tmp[std::clamp<Index>(y + k, 0, n - 1) * n + x];
            out[y * n + x] = s * norm;
        }
    return out;
}

void validate_recipe(const SceneRecipe& r) {
    if (r.sources.empty()) throw std::invalid_argument("scene recipe: no sources");
    if (r.num_classes < 1 || r.num_classes > 255) throw std::invalid_argument("scene recipe: num_classes must lie in [1, 255]");
    if (!(r.noise >= 0.0)) throw std::invalid_argument("scene recipe: noise must be non-negative");
    if (r.smoothing < 0) throw std::invalid_argument("scene recipe: smoothing must be non-negative");
    if (static_cast<int>(r.phenology.class_phase.size()) != r.num_classes)
        throw std::invalid_argument("scene recipe: phenology built for a different class count");
    const Index fine = finest_size(r.sources);
    for (const auto& s : r.sources) {
        if (s.tile_size % 32 != 0)
            throw std::invalid_argument("scene recipe: grid size " + std::to_string(s.tile_size) + " of " + s.name +
                                        " is not divisible by 32");
        if (fine % s.tile_size != 0)
            throw std::invalid_argument("scene recipe: grid of " + s.name + " does not divide the finest grid");
        const SourceProfile& p = r.phenology.profile(s.name);
        if (static_cast<int>(p.amplitude.size()) != s.bands)
            throw std::invalid_argument("scene recipe: profile band count mismatch for " + s.name);
    }
}

}  // namespace

SceneSample gen_scene(const SceneRecipe& recipe) {
    validate_recipe(recipe);
    Rng rng(derive_seed(recipe.seed, recipe.geo_id));
    const Index n = finest_size(recipe.sources);
    const int K = recipe.num_classes;

    SceneSample scene;
    scene.geo_id = recipe.geo_id;
    scene.labels = LabelMap(n, n, 0);
    if (K > 1) {
        std::vector<std::vector<double>> fields(static_cast<std::size_t>(K));
        for (auto& f : fields) {
            std::vector<double> raw(static_cast<std::size_t>(n * n));
            for (double& v : raw) v = rng.normal();
            f = box_blur(raw, n, recipe.smoothing);
        }
        for (Index i = 0; i < n * n; ++i) {
            int best = 0;
            for (int c = 1; c < K; ++c)
                if (fields[c][i] > fields[best][i]) best = c;
            scene.labels.codes[i] = best;
        }
    }
    scene.fraction = compute_fractions(scene.labels, synthetic_class_mapping(K));

    const auto& ph = recipe.phenology;
    for (const auto& s : recipe.sources) {
        const SourceProfile& prof = ph.profile(s.name);
        const Index size = s.tile_size, f = n / size, T = s.frames_per_year;
        // Class composition of every coarse pixel.
        std::vector<double> share(static_cast<std::size_t>(size * size * K), 0.0);
        for (Index y = 0; y < n; ++y)
            for (Index x = 0; x < n; ++x) share[((y / f) * size + x / f) * K + scene.labels.at(y, x)] += 1.0;
        const double block = static_cast<double>(f * f);
        for (double& v : share) v /= block;

        std::vector<double> table(static_cast<std::size_t>(K * s.bands * T));
        for (int c = 0; c < K; ++c)
            for (int b = 0; b < s.bands; ++b)
                for (Index t = 0; t < T; ++t)
                    table[(c * s.bands + b) * T + t] =
                        prof.value(ph.class_phase, ph.class_offset, c, b, static_cast<int>(t));

        Tensor img({s.bands, T, size, size});
        auto data = img.data();
        Index at = 0;
        for (int b = 0; b < s.bands; ++b)
            for (Index t = 0; t < T; ++t)
                for (Index p = 0; p < size * size; ++p) {
                    double v = 0.0;
                    for (int c = 0; c < K; ++c) {
                        const double w = share[p * K + c];
                        if (w != 0.0) v += w * table[(c * s.bands + b) * T + t];
                    }
                    data[at++] = v + recipe.noise * rng.normal();
                }
        scene.images.push_back({s.name, std::move(img)});
    }
    return scene;
}

int nearest_profile_class(const SceneSample& scene, const PhenologyBank& bank, int num_classes, Index row, Index col) {
    const SourceImage* fine = &scene.images.front();
    for (const auto& im : scene.images)
        if (im.data.dim(2) > fine->data.dim(2)) fine = &im;
    const SourceProfile& prof = bank.profile(fine->source);
    const Index B = fine->data.dim(0), T = fine->data.dim(1), H = fine->data.dim(2), W = fine->data.dim(3);
    int best = 0;
    double best_d = INFINITY;
    for (int c = 0; c < num_classes; ++c) {
        double d = 0.0;
        for (Index b = 0; b < B; ++b)
            for (Index t = 0; t < T; ++t) {
                const double e = fine->data[((b * T + t) * H + row) * W + col] -
                                 prof.value(bank.class_phase, bank.class_offset, c, static_cast<int>(b), static_cast<int>(t));
                d += e * e;
            }
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

// ---- files --------------------------------------------------------------------

namespace {

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    return json::parse(in);
}

json source_json(const SourceSpec& s) {
    return {{"name", s.name},
            {"bands", s.bands},
            {"tile_size", s.tile_size},
            {"frames_per_year", s.frames_per_year}};
}

}  // namespace

std::string frame_reference(const std::string& geo_id, const std::string& source, int t) {
    return "scenes/" + geo_id + "/" + source + ".bin#" + std::to_string(t);
}

void write_scene(const fs::path& root, const SceneSample& scene) {
    const fs::path dir = root / "scenes" / scene.geo_id;
    fs::create_directories(dir);
    fs::create_directories(root / "labels");
    for (const auto& im : scene.images) {
        const auto& d = im.data;
        std::vector<float> buf(static_cast<std::size_t>(d.numel()));
        for (Index i = 0; i < d.numel(); ++i) buf[i] = static_cast<float>(d[i]);
        std::ofstream out(dir / (im.source + ".bin"), std::ios::binary);
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!out) throw std::runtime_error("failed writing scene " + scene.geo_id + "/" + im.source);
        write_json(dir / (im.source + ".json"), {{"source", im.source},
                                                 {"dims", d.shape()},
                                                 {"order", "CTHW"},
                                                 {"dtype", "float32"},
                                                 {"endianness", "little"}});
    }
    std::vector<std::uint8_t> lab(scene.labels.codes.size());
    for (std::size_t i = 0; i < lab.size(); ++i) lab[i] = static_cast<std::uint8_t>(scene.labels.codes[i]);
    std::ofstream out(root / "labels" / (scene.geo_id + ".bin"), std::ios::binary);
    out.write(reinterpret_cast<const char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
    if (!out) throw std::runtime_error("failed writing labels for " + scene.geo_id);
    write_json(root / "labels" / (scene.geo_id + ".json"),
               {{"dims", {scene.labels.height, scene.labels.width}}, {"dtype", "uint8"}});
}

Tensor read_source_image(const fs::path& root, const std::string& geo_id, const std::string& source) {
    const fs::path dir = root / "scenes" / geo_id;
    const json header = read_json(dir / (source + ".json"));
    if (header.value("dtype", "") != "float32" || header.value("order", "") != "CTHW")
        throw std::runtime_error("unsupported scene header for " + geo_id + "/" + source);
    const Shape shape = header.at("dims").get<Shape>();
    if (shape.size() != 4) throw std::runtime_error("scene " + geo_id + "/" + source + " must be 4-D");
    Tensor t(shape);
    std::vector<float> buf(static_cast<std::size_t>(t.numel()));
    std::ifstream in(dir / (source + ".bin"), std::ios::binary);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in || in.peek() != std::char_traits<char>::eof())
        throw std::runtime_error("scene file " + geo_id + "/" + source + ".bin does not match its header");
    for (Index i = 0; i < t.numel(); ++i) t[i] = buf[i];
    return t;
}

LabelMap read_labels(const fs::path& root, const std::string& geo_id) {
    const json header = read_json(root / "labels" / (geo_id + ".json"));
    const auto dims = header.at("dims").get<std::vector<Index>>();
    if (dims.size() != 2) throw std::runtime_error("label header for " + geo_id + " must be 2-D");
    LabelMap m(dims[0], dims[1]);
    std::vector<std::uint8_t> buf(m.codes.size());
    std::ifstream in(root / "labels" / (geo_id + ".bin"), std::ios::binary);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in || in.peek() != std::char_traits<char>::eof())
        throw std::runtime_error("label file for " + geo_id + " does not match its header");
    for (std::size_t i = 0; i < buf.size(); ++i) m.codes[i] = buf[i];
    return m;
}

DatasetInfo generate_dataset(const Config& config, const fs::path& root, int workers) {
    const DataSettings& d = config.data;
    DatasetInfo info;
    info.sources = config.sources;
    info.num_classes = d.num_classes;
    info.task = d.task;
    info.seed = d.seed;

    const int n = d.num_tiles;
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng split_rng(derive_seed(d.seed, "splits"));
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[split_rng.uniform_int(i + 1)]);
    const int n_test = static_cast<int>(std::floor(d.test_fraction * n));
    const int n_val = static_cast<int>(std::floor(d.val_fraction * n));
    std::vector<std::string> split(static_cast<std::size_t>(n), "train");
    for (int i = 0; i < n_test; ++i) split[order[i]] = "test";
    for (int i = n_test; i < n_test + n_val; ++i) split[order[i]] = "val";

    char name[32];
    for (int i = 0; i < n; ++i) {
        std::snprintf(name, sizeof(name), "tile_%04d", i);
        info.tiles.push_back({name, split[i]});
    }

    const PhenologyBank bank = make_phenology(config.sources, d.num_classes, d.task, d.seed);
    fs::create_directories(root);
    std::vector<TileRecord> records(static_cast<std::size_t>(n));
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max(workers, 1)));
    auto work = [&](int w) {
        try {
            for (int i = next++; i < n; i = next++) {
                SceneRecipe r{d.seed, info.tiles[i].geo_id, config.sources, d.num_classes, d.noise, d.smoothing, bank};
                SceneSample s = gen_scene(r);
                write_scene(root, s);
                records[i] = {s.geo_id, std::move(s.labels), info.tiles[i].split};
            }
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    std::vector<std::thread> threads;
    for (int w = 1; w < workers; ++w) threads.emplace_back(work, w);
    work(0);
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<SourceSequence> sequences;
    for (const auto& tile : info.tiles)
        for (const auto& s : config.sources) {
            SourceSequence seq{tile.geo_id, s.name, {}};
            for (int t = 0; t < s.frames_per_year; ++t)
                seq.frames.push_back({frame_reference(tile.geo_id, s.name, t), static_cast<double>(t) / s.frames_per_year});
            sequences.push_back(std::move(seq));
        }
    const ClassMapping mapping = synthetic_class_mapping(d.num_classes);
    const SequenceManifest manifest = build_manifest(records, sequences, 16, mapping, config.training.frames);
    write_manifest(root / "manifest.jsonl", manifest);

    json sources = json::array();
    for (const auto& s : config.sources) sources.push_back(source_json(s));
    json tiles = json::array();
    for (const auto& t : info.tiles) tiles.push_back({{"geo_id", t.geo_id}, {"split", t.split}});
    write_json(root / "dataset.json", {{"sources", sources},
                                       {"num_classes", d.num_classes},
                                       {"task", d.task},
                                       {"seed", d.seed},
                                       {"noise", d.noise},
                                       {"smoothing", d.smoothing},
                                       {"class_mapping", mapping.to_json()},
                                       {"tiles", tiles}});
    return info;
}

DatasetInfo read_dataset_info(const fs::path& root) {
    const json j = read_json(root / "dataset.json");
    DatasetInfo info;
    for (const auto& s : j.at("sources")) {
        SourceSpec spec;
        spec.name = s.at("name").get<std::string>();
        spec.bands = s.at("bands").get<int>();
        spec.tile_size = s.at("tile_size").get<int>();
        spec.frames_per_year = s.at("frames_per_year").get<int>();
        info.sources.push_back(spec);
    }
    info.num_classes = j.at("num_classes").get<int>();
    info.task = j.at("task").get<std::string>();
    info.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& t : j.at("tiles")) info.tiles.push_back({t.at("geo_id").get<std::string>(), t.at("split").get<std::string>()});
    return info;
}

std::vector<LoadedTile> load_dataset(const fs::path& root, const std::vector<SourceSpec>& sources) {
    if (!fs::exists(root / "manifest.jsonl")) throw std::runtime_error("dataset at '" + root.string() + "' has no manifest.jsonl");
    const SequenceManifest manifest = read_manifest(root / "manifest.jsonl");
    std::map<std::string, std::map<std::string, const ManifestEntry*>> by_tile;
    std::vector<std::string> order;
    for (const auto& e : manifest.entries) {
        if (!by_tile.contains(e.geo_id)) order.push_back(e.geo_id);
        by_tile[e.geo_id][e.source] = &e;
    }
    std::vector<LoadedTile> tiles;
    for (const auto& geo : order) {
        LoadedTile tile;
        tile.geo_id = geo;
        const auto& entries = by_tile[geo];
        for (const auto& s : sources) {
            auto it = entries.find(s.name);
            if (it == entries.end())
                throw std::runtime_error("dataset/manifest mismatch: tile " + geo + " has no '" + s.name + "' sequence");
            Tensor img = read_source_image(root, geo, s.name);
            if (img.dim(0) != s.bands || img.dim(2) != s.tile_size || img.dim(3) != s.tile_size)
                throw std::runtime_error("dataset/manifest mismatch: " + geo + "/" + s.name + " has shape " +
                                         shape_string(img.shape()) + ", config expects " + std::to_string(s.bands) +
                                         " bands at " + std::to_string(s.tile_size) + " px");
            if (img.dim(1) != static_cast<Index>(it->second->frame_paths.size()))
                throw std::runtime_error("dataset/manifest mismatch: frame count of " + geo + "/" + s.name);
            tile.split = it->second->split;
            tile.fraction = it->second->fraction;
            tile.images.push_back({s.name, std::move(img)});
        }
        tile.labels = read_labels(root, geo);
        tiles.push_back(std::move(tile));
    }
    if (tiles.empty()) throw std::runtime_error("dataset at '" + root.string() + "' has no usable tiles");
    return tiles;
}

}  // namespace phenoswin
