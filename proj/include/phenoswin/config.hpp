#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace phenoswin {

/// Maps an input sequence length to the first-stage temporal patch size.
struct TemporalPatchRule {
    int threshold = 16;  // T < threshold -> short_patch, otherwise long_patch
    int short_patch = 2;
    int long_patch = 4;

    int select(int frames) const { return frames < threshold ? short_patch : long_patch; }
    friend bool operator==(const TemporalPatchRule&, const TemporalPatchRule&) = default;
};

struct SourceSpec {
    std::string name;
    int bands = 0;
    int tile_size = 64;
    TemporalPatchRule temporal_patch_rule;
    int spatial_patch = 4;
    int frames_per_year = 32;  // temporal cadence of the annual sequence

    friend bool operator==(const SourceSpec&, const SourceSpec&) = default;
};

/// Default band count for the built-in modalities, 0 for unknown names.
int default_band_count(const std::string& source_name);

struct ModelConfig {
    int embed_dim = 32;
    std::array<int, 4> depths{2, 2, 2, 2};
    std::array<int, 4> heads{2, 2, 4, 4};
    int window_temporal = 2;
    int window_spatial = 7;
    std::array<int, 3> spatial_merge_factors{2, 2, 2};
    std::array<int, 3> temporal_merge_factors{2, 2, 2};
    bool temporal_downsampling = true;
    int num_fraction_classes = 9;
    int hidden_dim = 0;  // 0 selects the stage-4 channel count
    int mlp_ratio = 4;
    bool post_embed_norm = true;
    bool relative_position_bias = true;

    // Segmentation decoder.
    std::array<int, 3> decoder_channels{128, 64, 32};
    int num_classes = 2;
    int decoder_reference_frames = 16;  // sequence length the decoder's temporal slots are sized for
    std::string final_upsample = "bilinear";  // "bilinear" or "learned"
    int aux_channels = 0;
    int aux_layer = 1;  // decoder layer (1..3) receiving the auxiliary features

    std::array<int, 4> stage_channels() const;
    int fraction_hidden_dim() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ScheduleParams {
    double warmup_start = 1e-7;
    double peak = 1e-5;
    std::int64_t warmup_iterations = 5000;
    double floor = 1e-6;
    std::int64_t total_iterations = 200;
    std::string decay = "cosine";  // "cosine" or "linear"

    friend bool operator==(const ScheduleParams&, const ScheduleParams&) = default;
};

struct TrainingSettings {
    std::uint64_t seed = 0;

    // Pretraining.
    ScheduleParams schedule;
    int pretrain_batch_size = 4;
    double ema_tau = 0.001;
    bool mean_teacher = true;
    bool fraction_supervision = true;
    double consistency_weight = 1.0;
    std::string frame_mode = "fixed16";  // fixed16 | fixed | variable | single
    int frames = 16;                      // sequence length for fixed / single modes
    int min_frames = 3;
    int max_frames = 32;
    std::int64_t checkpoint_every = 0;

    // Optimizer (decoupled weight decay).
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.05;
    double grad_clip = 1.0;

    // Finetuning.
    double finetune_lr = 6e-5;
    int finetune_epochs = 50;
    int finetune_batch_size = 4;
    double keep_fraction = 0.25;
    std::int64_t min_kept = 4096;
    double data_ratio = 1.0;
    std::vector<std::string> freeze;
    std::optional<int> ignore_label;
    int eval_frames = 16;

    friend bool operator==(const TrainingSettings&, const TrainingSettings&) = default;
};

struct DataSettings {
    std::string root = "data";
    int num_tiles = 8;
    int num_classes = 2;
    double noise = 0.05;
    std::string task = "distinct";  // distinct | phase
    int smoothing = 4;              // box-blur radius of the latent class fields
    double val_fraction = 0.25;
    double test_fraction = 0.25;
    std::uint64_t seed = 0;

    friend bool operator==(const DataSettings&, const DataSettings&) = default;
};

struct Config {
    ModelConfig model;
    std::vector<SourceSpec> sources;
    TrainingSettings training;
    DataSettings data;

    const SourceSpec& source(const std::string& name) const;
    friend bool operator==(const Config&, const Config&) = default;
};

/// Thrown for any schema or invariant violation; the message names the field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Config parse_config(const nlohmann::json& j);
Config load_config(const std::filesystem::path& path);
nlohmann::json to_json(const Config& config);
void validate(const Config& config);

/// Stable FNV-1a hash of the canonical JSON form, as 16 hex digits.
std::string config_hash(const Config& config);

/// Product of the spatial reduction factors (spatial patch times all merge factors).
int spatial_reduction(const ModelConfig& model, const SourceSpec& source);

}  // namespace phenoswin
