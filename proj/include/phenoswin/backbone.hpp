#pragma once

// Multi-source temporal encoder: per-source 3-D patch embedding followed by
// four windowed-attention stages joined by synchronized spatiotemporal
// patch merging (strided spatial gather + temporal mean pooling).

#include <array>
#include <string>

#include "phenoswin/config.hpp"
#include "phenoswin/layout.hpp"
#include "phenoswin/params.hpp"

namespace phenoswin {

/// First-stage temporal patch size for a sequence of `frames` (supported range 3..32).
int temporal_patch_size(int frames, const TemporalPatchRule& rule = {});

struct StageShape {
    Index frames = 0;
    Index height = 0;
    Index width = 0;
    Index channels = 0;
    friend bool operator==(const StageShape&, const StageShape&) = default;
};

/// Temporal length after merging with factor `factor` (trailing partial window kept).
Index merged_frames(Index frames, int factor, bool temporal_downsampling);

/// Closed-form (T_i, H_i, W_i, C_i) for all four stages.
std::array<StageShape, 4> stage_shapes(const ModelConfig& model, const SourceSpec& source, int frames, Index height,
                                       Index width);

struct PatchEmbedParams {
    int temporal_patch = 4;
    int spatial_patch = 4;
    int in_channels = 0;
    int out_channels = 0;
};

struct MergeParams {
    int temporal_factor = 2;
    int spatial_factor = 2;
    int in_channels = 0;
    bool temporal_downsampling = true;
};

struct WindowParams {
    int temporal = 2;
    int spatial = 7;
};

/// Effective window, shift and padded extents for one block on a given grid.
struct WindowGeometry {
    std::array<Index, 3> dims{};    // T, H, W
    std::array<Index, 3> window{};  // effective window per axis
    std::array<Index, 3> shift{};
    std::array<Index, 3> padded{};
    Index windows() const { return (padded[0] / window[0]) * (padded[1] / window[1]) * (padded[2] / window[2]); }
    Index slots() const { return window[0] * window[1] * window[2]; }
};

WindowGeometry window_geometry(Index frames, Index height, Index width, const WindowParams& params, bool shifted);

/// Index maps tying tokens to window slots, with the attention mask and
/// relative-position lookup for one geometry.
struct WindowLayout {
    WindowGeometry geometry;
    ag::RowIndex token_of_slot;  // slot row -> token row, -1 for padding
    ag::RowIndex slot_of_token;  // token row -> slot row
    ag::RowIndex relative_index;  // (i * slots + j) -> row of the relative bias table
    std::shared_ptr<const std::vector<std::uint8_t>> allowed;
};

WindowLayout make_window_layout(const WindowGeometry& geometry, const WindowParams& configured);

Index relative_bias_table_size(const WindowParams& params);

// ---- parameter creation -------------------------------------------------------

void init_patch_embed(ParamStore& store, const ModelConfig& model, const SourceSpec& source, Rng& rng);
void init_swin_block(ParamStore& store, const std::string& prefix, int channels, int heads, const ModelConfig& model,
                     Rng& rng);
void init_backbone(ParamStore& store, const ModelConfig& model, const std::vector<SourceSpec>& sources, Rng& rng);

/// Parameter names belonging to the shared backbone (stages, blocks, merges).
bool is_backbone_parameter(const std::string& name);

// ---- forward ops --------------------------------------------------------------

/// [C, T, H, W] input -> stage-1 tokens. Uses the source's embedding weights,
/// folded along time when `params.temporal_patch` is shorter than the stored kernel.
StageFeatures patch_embed(const ParamStore& store, const SourceSpec& source, const Tensor& input,
                          const PatchEmbedParams& params, bool post_norm);

/// Pre-norm windowed attention + feed-forward block. `probe` receives the
/// attention probabilities ([windows, heads, slots, slots]) when non-null.
StageFeatures swin_block(const ParamStore& store, const std::string& prefix, const StageFeatures& input, int heads,
                         const WindowParams& window, bool shifted, bool relative_bias, Tensor* probe = nullptr,
                         WindowLayout* layout_out = nullptr);

/// Temporal mean pooling then strided spatial gather, before projection:
/// [T, H, W, C] -> [T', H/D, W/D, D*D*C] with sub-grids ordered (dy, dx) row-major.
StageFeatures merge_gather_pool(const StageFeatures& input, const MergeParams& params);

/// Full merge: gather/pool followed by the learned projection to 2*C.
StageFeatures patch_merge(const ParamStore& store, const std::string& prefix, const StageFeatures& input,
                          const MergeParams& params);

struct BackboneOutput {
    std::array<StageFeatures, 4> stages;  // X_1 .. X_4
};

BackboneOutput backbone_forward(const ParamStore& store, const ModelConfig& model, const SourceSpec& source,
                                const Tensor& input);

}  // namespace phenoswin
