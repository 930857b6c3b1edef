#pragma once

// Pretraining and finetuning loops: frame sampling, learning-rate schedule,
// optimization and best-on-validation model selection.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "phenoswin/checkpoint.hpp"
#include "phenoswin/decoder.hpp"
#include "phenoswin/evaluation.hpp"
#include "phenoswin/pretrain.hpp"
#include "phenoswin/synthetic.hpp"

namespace phenoswin {

/// Linear warmup from warmup_start to peak, then cosine (or linear) decay to floor at total_iterations.
double lr_at(std::int64_t iteration, const ScheduleParams& params);

/// Sorted frame indices for one draw. Modes: fixed16, fixed (settings.frames),
/// variable (length uniform in [min_frames, max_frames]) and single (one frame).
std::vector<int> sample_frames(int length, const std::string& mode, const TrainingSettings& settings, Rng& rng);

/// `count` evenly spaced, strictly increasing indices from [0, length).
std::vector<int> evenly_spaced_frames(int length, int count);

/// Picks time steps of a [C, T, H, W] sequence (indices may repeat).
Tensor select_frames(const Tensor& sequence, const std::vector<int>& frames);

/// Frame indices fed to the model at evaluation: evenly spaced, or one frame
/// replicated for single-frame runs.
std::vector<int> eval_frame_plan(int length, int frames, const TrainingSettings& settings, const std::string& key);

using LogSink = std::function<void(const nlohmann::json&)>;

struct PretrainOptions {
    std::filesystem::path checkpoint_dir;  // periodic checkpoints when non-empty
    LogSink log;
};

struct PretrainResult {
    PretrainNets nets;
    std::int64_t iterations = 0;
};

PretrainResult pretrain(const Config& config, const std::vector<LoadedTile>& tiles, const PretrainOptions& options = {});

nlohmann::json run_metadata(const Config& config, const std::string& kind, std::int64_t iteration);

// ---- segmentation -------------------------------------------------------------

struct SegmentationModel {
    ModelConfig model;
    std::vector<SourceSpec> sources;
    ParamStore store;
};

SegmentationModel make_segmentation_model(const ModelConfig& model, const std::vector<SourceSpec>& sources,
                                          std::uint64_t seed);

/// Copies backbone and embedding weights; rejects missing or mis-shaped keys.
void load_backbone(SegmentationModel& model, const TensorMap& pretrained);

/// Rebuilds a finetuned model from its checkpoint directory.
SegmentationModel load_segmentation_model(const Config& config, const std::filesystem::path& checkpoint);

struct NamedInput {
    std::string source;
    Tensor input;  // [C, T, H, W]
};

DecoderOutput segment(SegmentationModel& model, const std::vector<NamedInput>& inputs, bool training,
                      const std::optional<Tensor>& aux = std::nullopt);

LabelMap predict_labels(SegmentationModel& model, const std::vector<NamedInput>& inputs, Tensor* probabilities = nullptr);

/// Model inputs for a tile at evaluation time.
std::vector<NamedInput> eval_inputs(const SegmentationModel& model, const LoadedTile& tile, const TrainingSettings& settings,
                                    int frames);

ConfusionCounts evaluate_tiles(SegmentationModel& model, const std::vector<const LoadedTile*>& tiles,
                               const TrainingSettings& settings, int frames);

/// 1-based epoch with the highest score; earliest wins ties.
int select_best_epoch(const std::vector<double>& scores);

/// Seeded subset of ceil(ratio * n) indices, sorted.
std::vector<int> data_ratio_subset(int n, double ratio, std::uint64_t seed);

std::vector<const LoadedTile*> tiles_in_split(const std::vector<LoadedTile>& tiles, const std::string& split);

struct FinetuneOptions {
    const TensorMap* pretrained = nullptr;  // null trains from scratch
    LogSink log;
    std::optional<double> stop_at;  // end early once validation F1 reaches this
};

struct FinetuneResult {
    SegmentationModel model;
    std::vector<double> val_f1;
    int best_epoch = 0;
};

FinetuneResult finetune(const Config& config, const std::vector<LoadedTile>& tiles, const FinetuneOptions& options = {});

}  // namespace phenoswin
