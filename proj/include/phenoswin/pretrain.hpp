#pragma once

// Land-cover-fraction pretraining objective: global pooling, the fraction
// regression head, L1 supervision, teacher consistency and EMA updates.

#include <optional>
#include <string>
#include <vector>

#include "phenoswin/backbone.hpp"
#include "phenoswin/fractions.hpp"
#include "phenoswin/optim.hpp"

namespace phenoswin {

/// Mean over every (t, h, w) position: [T*H*W, C] -> [1, C].
ag::Var global_pool(const StageFeatures& x4);

void init_fraction_head(ParamStore& store, const ModelConfig& model, Rng& rng);

/// sigmoid(relu(x W1 + b1) W2 + b2); weights are stored input-major ([in, out]).
ag::Var fraction_head(const ParamStore& store, const ag::Var& pooled);

/// Backbone + pooling + head for one [C, T, H, W] input -> [1, 9].
ag::Var predict_fractions(const ParamStore& store, const ModelConfig& model, const SourceSpec& source,
                          const Tensor& input);

/// Batch mean of per-sample summed absolute errors.
ag::Var l1_fraction_loss(const std::vector<ag::Var>& predictions, const std::vector<FractionVector>& targets);

/// Same L1 form against teacher outputs, which are constants (no gradient reaches the teacher).
ag::Var teacher_consistency_loss(const std::vector<Tensor>& teacher_outputs, const std::vector<ag::Var>& predictions);

/// theta_t <- (1 - tau) * theta_t + tau * theta_s, elementwise over every parameter.
void ema_update(ParamStore& teacher, const ParamStore& student, double tau);

struct FractionSample {
    Tensor input;  // [C, T, H, W]
    FractionVector target{};
};

struct SourceBatch {
    std::string source;
    std::vector<FractionSample> samples;
};

struct PretrainNets {
    ModelConfig model;
    std::vector<SourceSpec> sources;
    ParamStore student;
    std::optional<ParamStore> teacher;
};

/// Student, teacher (mean-teacher runs) and fraction head, all from one seed.
PretrainNets make_pretrain_nets(const ModelConfig& model, const std::vector<SourceSpec>& sources, std::uint64_t seed,
                                bool mean_teacher);

struct PretrainStepOptions {
    double lr = 1e-5;
    double tau = 0.001;
    bool fraction_supervision = true;
    bool mean_teacher = true;
    double consistency_weight = 1.0;
};

struct SourceLoss {
    std::string source;
    std::optional<double> fraction_loss;  // L_p
    std::optional<double> teacher_loss;   // L_t
    double total = 0.0;
};

struct StepReport {
    std::vector<SourceLoss> sources;
    std::vector<std::string> warnings;
    double total = 0.0;
    double grad_norm = 0.0;
};

/// One optimization step over independent per-source batches: per-source
/// L_p + L_t summed, one student update, then one EMA update of the teacher.
StepReport pretrain_step(const std::vector<SourceBatch>& batches, PretrainNets& nets, AdamW& optimizer,
                         const PretrainStepOptions& options);

}  // namespace phenoswin
