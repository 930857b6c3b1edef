#pragma once

// Synthetic multi-source scenes: latent class maps from smoothed random
// fields, per-class sinusoidal seasonal profiles and Gaussian noise, with
// coarse sources rendered as block means of the fine-resolution signal.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "phenoswin/config.hpp"
#include "phenoswin/fractions.hpp"
#include "phenoswin/tensor.hpp"

namespace phenoswin {

/// Seasonal profile of one source: value(c, b, t) =
/// offset[b] + class_offset[c] + amplitude[b] * sin(2*pi*t/frames + band_phase[b] + class_phase[c]).
struct SourceProfile {
    std::string source;
    int frames = 32;
    std::vector<double> amplitude;
    std::vector<double> band_phase;
    std::vector<double> offset;

    double value(const std::vector<double>& class_phase, const std::vector<double>& class_offset, int cls, int band,
                 int t) const;
};

struct PhenologyBank {
    std::vector<double> class_phase;
    std::vector<double> class_offset;
    std::vector<SourceProfile> sources;

    const SourceProfile& profile(const std::string& source) const;
};

/// "distinct": classes differ in phase and mean level. "phase": classes share
/// amplitude and mean and differ only by evenly spaced phases.
PhenologyBank make_phenology(const std::vector<SourceSpec>& sources, int num_classes, const std::string& task,
                             std::uint64_t seed);

struct SceneRecipe {
    std::uint64_t seed = 0;
    std::string geo_id;
    std::vector<SourceSpec> sources;
    int num_classes = 2;
    double noise = 0.05;
    int smoothing = 4;
    PhenologyBank phenology;
};

struct SourceImage {
    std::string source;
    Tensor data;  // [C, T, H, W]
};

struct SceneSample {
    std::string geo_id;
    std::vector<SourceImage> images;
    LabelMap labels;  // finest source grid, classes 0..num_classes-1
    FractionVector fraction{};

    const Tensor& image(const std::string& source) const;
};

/// Class c -> fraction bin (c mod 8) + 1, so synthetic classes never count as background.
ClassMapping synthetic_class_mapping(int num_classes);

SceneSample gen_scene(const SceneRecipe& recipe);

/// Noise-free nearest-profile classification of one pixel of the finest source.
int nearest_profile_class(const SceneSample& scene, const PhenologyBank& bank, int num_classes, Index row, Index col);

// ---- dataset directory --------------------------------------------------------

struct DatasetTile {
    std::string geo_id;
    std::string split;
};

struct DatasetInfo {
    std::vector<SourceSpec> sources;
    int num_classes = 2;
    std::string task;
    std::uint64_t seed = 0;
    std::vector<DatasetTile> tiles;
};

/// Writes scenes/, labels/, manifest.jsonl and dataset.json under `root`.
/// Output is independent of `workers`.
DatasetInfo generate_dataset(const Config& config, const std::filesystem::path& root, int workers = 1);

void write_scene(const std::filesystem::path& root, const SceneSample& scene);
Tensor read_source_image(const std::filesystem::path& root, const std::string& geo_id, const std::string& source);
LabelMap read_labels(const std::filesystem::path& root, const std::string& geo_id);
DatasetInfo read_dataset_info(const std::filesystem::path& root);

/// Frame reference "scenes/<geo_id>/<source>.bin#<t>".
std::string frame_reference(const std::string& geo_id, const std::string& source, int t);

/// Loads every tile of a dataset and checks it against the configured sources.
struct LoadedTile {
    std::string geo_id;
    std::string split;
    std::vector<SourceImage> images;
    LabelMap labels;
    FractionVector fraction{};

    const Tensor& image(const std::string& source) const;
};

std::vector<LoadedTile> load_dataset(const std::filesystem::path& root, const std::vector<SourceSpec>& sources);

}  // namespace phenoswin
