#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "phenoswin/tensor.hpp"
#include "json.hpp"

namespace phenoswin {

/// Background/other plus cropland, forest, shrubland, grassland, wetland,
/// water, bare land and urban.
inline constexpr int kFractionBins = 9;
using FractionVector = std::array<double, kFractionBins>;

/// Human-readable names for the nine fraction bins.
const std::array<const char*, kFractionBins>& fraction_bin_names();

/// Throws unless every entry is in [0, 1] and the entries sum to 1 within 1e-9.
void check_fraction_vector(const FractionVector& p);

/// Total map from raw label codes to fraction bins; unmapped codes land in bin 0.
class ClassMapping {
public:
    ClassMapping() = default;
    explicit ClassMapping(std::map<int, int> table);

    int bin(int code) const;
    const std::map<int, int>& table() const { return table_; }

    static ClassMapping identity_bins();  // code k -> bin k for k in 1..8
    static ClassMapping from_json(const nlohmann::json& j);
    static ClassMapping load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

private:
    std::map<int, int> table_;
};

/// Integer label raster, row-major [height, width].
struct LabelMap {
    Index height = 0;
    Index width = 0;
    std::vector<int> codes;

    LabelMap() = default;
    LabelMap(Index h, Index w, int fill = 0) : height(h), width(w), codes(static_cast<std::size_t>(h * w), fill) {}
    int& at(Index r, Index c) { return codes[static_cast<std::size_t>(r * width + c)]; }
    int at(Index r, Index c) const { return codes[static_cast<std::size_t>(r * width + c)]; }
};

FractionVector compute_fractions(const LabelMap& labels, const ClassMapping& mapping);

struct TileOffset {
    Index row = 0;
    Index col = 0;
    friend bool operator==(const TileOffset&, const TileOffset&) = default;
};

struct LabelTile {
    TileOffset offset;
    LabelMap labels;
};

/// Non-overlapping row-major tiles; partial edge tiles are discarded.
std::vector<LabelTile> crop_tiles(const LabelMap& raster, Index tile);

struct FrameRef {
    std::string path;
    double time = 0.0;  // acquisition time used for ordering
};

struct TileRecord {
    std::string geo_id;
    LabelMap labels;
    std::string split = "train";
};

struct SourceSequence {
    std::string geo_id;
    std::string source;
    std::vector<FrameRef> frames;
};

struct ManifestEntry {
    std::string geo_id;
    std::string source;
    std::vector<std::string> frame_paths;  // temporally ordered
    FractionVector fraction{};
    std::string split = "train";
    int sample_frames = 16;  // ordered frames drawn per training iteration
};

struct SequenceManifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> warnings;
};

/// Joins tiles with their source sequences. Background-only tiles and
/// sequences shorter than `min_len` are skipped (the latter with a warning).
SequenceManifest build_manifest(const std::vector<TileRecord>& tiles, const std::vector<SourceSequence>& sequences,
                                int min_len, const ClassMapping& mapping, int sample_frames = 16);

nlohmann::json to_json(const ManifestEntry& entry);
ManifestEntry manifest_entry_from_json(const nlohmann::json& j);
void write_manifest(const std::filesystem::path& path, const SequenceManifest& manifest);
SequenceManifest read_manifest(const std::filesystem::path& path);

}  // namespace phenoswin
