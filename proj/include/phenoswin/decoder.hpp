#pragma once

// Segmentation decoder: three upsample-and-fuse layers over encoder skips from
// every source, optional auxiliary feature injection, classification and a
// final upsample back to input resolution.

#include <array>
#include <optional>
#include <vector>

#include "phenoswin/backbone.hpp"

namespace phenoswin {

/// [T, H, W, C] stage features -> [H*W, T*C] rows, column index t*C + c.
ag::Var rearrange(const StageFeatures& features);
/// Inverse of `rearrange` on plain values: [H*W, T*C] -> [T, H, W, C].
Tensor unrearrange(const Tensor& packed, Index frames, Index height, Index width, Index channels);

/// Linear resampling of the time axis to `frames` slots (identity when equal).
StageFeatures resample_frames(const StageFeatures& features, Index frames);

/// Bilinear interpolation weights (half-pixel centres, edge clamped) from an
/// in_h x in_w grid to out_h x out_w, as a row map over row-major pixels.
ag::SparseMapPtr bilinear_map(Index in_h, Index in_w, Index out_h, Index out_w);

/// 3x3 convolution with zero padding on [H*W, C_in] rows; weight is [9*C_in, C_out]
/// laid out (ky, kx, c_in).
ag::Var conv3x3(const ag::Var& x, Index height, Index width, const ag::Var& weight, const ag::Var& bias);

/// Decoder temporal slots per stage for one source (stage lengths at the reference sequence length).
std::array<Index, 4> decoder_slots(const ModelConfig& model, const SourceSpec& source);

/// Concatenated input channels of decoder layers 1..3.
std::array<Index, 3> decoder_concat_channels(const ModelConfig& model, const std::vector<SourceSpec>& sources);

void init_decoder(ParamStore& store, const ModelConfig& model, const std::vector<SourceSpec>& sources, Rng& rng);

struct SourceFeatures {
    const SourceSpec* source = nullptr;
    const BackboneOutput* features = nullptr;
};

struct DecoderOutput {
    ag::Var logits;  // [H*W, num_classes]
    Index height = 0;
    Index width = 0;
    std::array<Index, 3> concat_channels{};
};

/// `aux` is [H_a, W_a, C_a]. BatchNorm uses batch statistics (and updates the
/// running buffers) when `training`, running statistics otherwise.
DecoderOutput decode(ParamStore& store, const ModelConfig& model, const std::vector<SourceFeatures>& inputs,
                     const std::optional<Tensor>& aux, bool training);

/// Cross-entropy averaged over the max(ceil(keep * P), min_kept) highest-loss pixels.
ag::Var ce_loss_hard_mining(const ag::Var& logits, const std::vector<int>& labels, double keep_fraction,
                            Index min_kept, std::optional<int> ignore_label = std::nullopt);

/// Row-wise argmax of a [P, K] logit matrix.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace phenoswin
