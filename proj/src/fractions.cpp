#include "phenoswin/fractions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <stdexcept>

namespace phenoswin {

using nlohmann::json;

const std::array<const char*, kFractionBins>& fraction_bin_names() {
    static const std::array<const char*, kFractionBins> names{"other",   "cropland", "forest",    "shrubland", "grassland",
                                                              "wetland", "water",    "bare_land", "urban"};
    return names;
}

void check_fraction_vector(const FractionVector& p) {
    double total = 0.0;
    for (double v : p) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("fraction entry outside [0, 1]");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("fraction entries do not sum to 1");
}

ClassMapping::ClassMapping(std::map<int, int> table) : table_(std::move(table)) {
    for (const auto& [code, bin] : table_)
        if (bin < 0 || bin >= kFractionBins)
            throw std::invalid_argument("class mapping sends code " + std::to_string(code) + " to bin " +
                                        std::to_string(bin) + ", outside 0..8");
}

int ClassMapping::bin(int code) const {
    auto it = table_.find(code);
    return it == table_.end() ? 0 : it->second;
}

ClassMapping ClassMapping::identity_bins() {
    std::map<int, int> t;
    for (int k = 1; k < kFractionBins; ++k) t[k] = k;
    return ClassMapping(std::move(t));
}

ClassMapping ClassMapping::from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("class mapping must be a JSON object of code -> bin");
    std::map<int, int> t;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.key().empty() && it.key().front() == '_') continue;  // comment keys
        int code = 0;
        try {
            std::size_t used = 0;
            code = std::stoi(it.key(), &used);
            if (used != it.key().size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw std::invalid_argument("class mapping key '" + it.key() + "' is not an integer code");
        }
        if (!it->is_number_integer())
            throw std::invalid_argument("class mapping value for code " + it.key() + " must be an integer bin");
        t[code] = it->get<int>();
    }
    return ClassMapping(std::move(t));
}

ClassMapping ClassMapping::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open class mapping '" + path.string() + "'");
    json j;
    in >> j;
    return from_json(j);
}

json ClassMapping::to_json() const {
    json j = json::object();
    for (const auto& [code, bin] : table_) j[std::to_string(code)] = bin;
    return j;
}

FractionVector compute_fractions(const LabelMap& labels, const ClassMapping& mapping) {
    if (labels.height < 1 || labels.width < 1 || labels.codes.empty())
        throw std::invalid_argument("compute_fractions: label map is empty");
    if (static_cast<Index>(labels.codes.size()) != labels.height * labels.width)
        throw std::invalid_argument("compute_fractions: label map size does not match its dimensions");
    std::array<std::int64_t, kFractionBins> counts{};
    for (int code : labels.codes) ++counts[static_cast<std::size_t>(mapping.bin(code))];
    const double n = static_cast<double>(labels.codes.size());
    FractionVector p{};
    for (int k = 0; k < kFractionBins; ++k) p[k] = static_cast<double>(counts[k]) / n;
    return p;
}

std::vector<LabelTile> crop_tiles(const LabelMap& raster, Index tile) {
    if (tile < 1) throw std::invalid_argument("crop_tiles: tile size must be positive");
    std::vector<LabelTile> out;
    const Index rows = raster.height / tile;
    const Index cols = raster.width / tile;
    out.reserve(static_cast<std::size_t>(rows * cols));
    for (Index tr = 0; tr < rows; ++tr)
        for (Index tc = 0; tc < cols; ++tc) {
            LabelTile t;
            t.offset = {tr * tile, tc * tile};
            t.labels = LabelMap(tile, tile);
            for (Index r = 0; r < tile; ++r)
                for (Index c = 0; c < tile; ++c) t.labels.at(r, c) = raster.at(tr * tile + r, tc * tile + c);
            out.push_back(std::move(t));
        }
    return out;
}

SequenceManifest build_manifest(const std::vector<TileRecord>& tiles, const std::vector<SourceSequence>& sequences,
                                int min_len, const ClassMapping& mapping, int sample_frames) {
    SequenceManifest manifest;
    for (const TileRecord& tile : tiles) {
        const FractionVector p = compute_fractions(tile.labels, mapping);
        if (p[0] >= 1.0) continue;  // background-only tiles are abandoned
        for (const SourceSequence& seq : sequences) {
            if (seq.geo_id != tile.geo_id) continue;
            if (static_cast<int>(seq.frames.size()) < min_len) {
                std::string msg = "skipping " + seq.geo_id + "/" + seq.source + ": " +
                                  std::to_string(seq.frames.size()) + " frames < minimum " + std::to_string(min_len);
                std::cerr << "warning: " << msg << '\n';
                manifest.warnings.push_back(std::move(msg));
                continue;
            }
            std::vector<FrameRef> frames = seq.frames;
            std::stable_sort(frames.begin(), frames.end(),
                             [](const FrameRef& a, const FrameRef& b) { return a.time < b.time; });
            ManifestEntry e;
            e.geo_id = tile.geo_id;
            e.source = seq.source;
            for (const auto& f : frames) e.frame_paths.push_back(f.path);
            e.fraction = p;
            e.split = tile.split;
            e.sample_frames = std::min(sample_frames, static_cast<int>(frames.size()));
            manifest.entries.push_back(std::move(e));
        }
    }
    return manifest;
}

json to_json(const ManifestEntry& e) {
    return {{"geo_id", e.geo_id},   {"source", e.source}, {"frame_paths", e.frame_paths},
            {"fraction", e.fraction}, {"split", e.split}, {"sample_frames", e.sample_frames}};
}

ManifestEntry manifest_entry_from_json(const json& j) {
    ManifestEntry e;
    try {
        e.geo_id = j.at("geo_id").get<std::string>();
        e.source = j.at("source").get<std::string>();
        e.frame_paths = j.at("frame_paths").get<std::vector<std::string>>();
        const auto f = j.at("fraction").get<std::vector<double>>();
        if (f.size() != kFractionBins) throw std::invalid_argument("fraction must have 9 entries");
        std::copy(f.begin(), f.end(), e.fraction.begin());
        e.split = j.at("split").get<std::string>();
        e.sample_frames = j.value("sample_frames", 16);
    } catch (const json::exception& ex) {
        throw std::invalid_argument(std::string("malformed manifest entry: ") + ex.what());
    }
    return e;
}

void write_manifest(const std::filesystem::path& path, const SequenceManifest& manifest) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
    for (const auto& e : manifest.entries) out << to_json(e).dump() << '\n';
}

SequenceManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
    SequenceManifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        m.entries.push_back(manifest_entry_from_json(json::parse(line)));
    }
    return m;
}

}  // namespace phenoswin
