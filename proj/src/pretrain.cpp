#include "phenoswin/pretrain.hpp"

#include <cmath>
#include <iostream>
#include <set>
#include <stdexcept>

namespace phenoswin {

ag::Var global_pool(const StageFeatures& x4) { return ag::mean_rows(x4.data); }

void init_fraction_head(ParamStore& store, const ModelConfig& model, Rng& rng) {
    const Index c4 = model.stage_channels()[3];
    const Index d = model.fraction_hidden_dim();
    store.add("head.fc1.weight", normal_tensor({c4, d}, std::sqrt(2.0 / static_cast<double>(c4)), rng));
    store.add("head.fc1.bias", Tensor({d}));
    store.add("head.fc2.weight", normal_tensor({d, model.num_fraction_classes}, std::sqrt(1.0 / static_cast<double>(d)), rng));
    store.add("head.fc2.bias", Tensor({model.num_fraction_classes}));
}

ag::Var fraction_head(const ParamStore& store, const ag::Var& pooled) {
    ag::Var hidden = ag::relu(ag::affine(pooled, store.get("head.fc1.weight"), store.get("head.fc1.bias")));
    return ag::sigmoid(ag::affine(hidden, store.get("head.fc2.weight"), store.get("head.fc2.bias")));
}

ag::Var predict_fractions(const ParamStore& store, const ModelConfig& model, const SourceSpec& source,
                          const Tensor& input) {
    const BackboneOutput features = backbone_forward(store, model, source, input);
    return fraction_head(store, global_pool(features.stages[3]));
}

ag::Var l1_fraction_loss(const std::vector<ag::Var>& predictions, const std::vector<FractionVector>& targets) {
    if (predictions.size() != targets.size() || predictions.empty())
        throw std::invalid_argument("l1_fraction_loss: need equally many (non-zero) predictions and targets");
    ag::Var total;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i].value().numel() != kFractionBins)
            throw std::invalid_argument("l1_fraction_loss: prediction must have 9 entries, got " +
                                        shape_string(predictions[i].shape()));
        Tensor target({1, kFractionBins}, std::vector<double>(targets[i].begin(), targets[i].end()));
        ag::Var term = ag::l1_sum(predictions[i], target);
        total = total.defined() ? ag::add(total, term) : term;
    }
    return ag::scale(total, 1.0 / static_cast<double>(predictions.size()));
}

ag::Var teacher_consistency_loss(const std::vector<Tensor>& teacher_outputs, const std::vector<ag::Var>& predictions) {
    if (predictions.size() != teacher_outputs.size() || predictions.empty())
        throw std::invalid_argument("teacher_consistency_loss: need equally many teacher and student outputs");
    ag::Var total;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (teacher_outputs[i].numel() != predictions[i].value().numel())
            throw std::invalid_argument("teacher_consistency_loss: output size mismatch");
        ag::Var term = ag::l1_sum(predictions[i], teacher_outputs[i]);
        total = total.defined() ? ag::add(total, term) : term;
    }
    return ag::scale(total, 1.0 / static_cast<double>(predictions.size()));
}

void ema_update(ParamStore& teacher, const ParamStore& student, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("ema_update: tau must lie in (0, 1)");
    if (teacher.params().size() != student.params().size())
        throw std::invalid_argument("ema_update: teacher and student parameter sets differ");
    for (const auto& [name, s] : student.params()) {
        if (!teacher.contains(name)) throw std::invalid_argument("ema_update: teacher lacks parameter '" + name + "'");
        if (teacher.get(name).shape() != s.shape())
            throw std::invalid_argument("ema_update: shape mismatch for '" + name + "'");
    }
    for (auto& [name, t] : teacher.params()) {
        auto tv = t.mutable_value().data();
        const auto sv = student.get(name).value().data();
        for (std::size_t i = 0; i < tv.size(); ++i) tv[i] = (1.0 - tau) * tv[i] + tau * sv[i];
    }
}

PretrainNets make_pretrain_nets(const ModelConfig& model, const std::vector<SourceSpec>& sources, std::uint64_t seed,
                                bool mean_teacher) {
    PretrainNets nets;
    nets.model = model;
    nets.sources = sources;
    Rng rng(derive_seed(seed, "init"));
    init_backbone(nets.student, model, sources, rng);
    init_fraction_head(nets.student, model, rng);
    if (mean_teacher) nets.teacher = nets.student.clone();
    return nets;
}

StepReport pretrain_step(const std::vector<SourceBatch>& batches, PretrainNets& nets, AdamW& optimizer,
                         const PretrainStepOptions& options) {
    StepReport report;
    const bool use_teacher = options.mean_teacher && nets.teacher.has_value();
    if (options.mean_teacher && !nets.teacher)
        throw std::invalid_argument("pretrain_step: mean-teacher enabled but no teacher network exists");

    std::set<std::string> present;
    for (const auto& b : batches) {
        bool known = false;
        for (const auto& s : nets.sources) known |= s.name == b.source;
        if (!known) throw std::invalid_argument("pretrain_step: batch for unknown source '" + b.source + "'");
        if (!b.samples.empty()) present.insert(b.source);
    }
    for (const auto& s : nets.sources)
        if (!present.contains(s.name)) {
            std::string msg = "no batch for source '" + s.name + "' this step; skipped";
            std::cerr << "warning: " << msg << '\n';
            report.warnings.push_back(std::move(msg));
        }

    nets.student.zero_grad();
    for (const SourceSpec& source : nets.sources) {
        const SourceBatch* batch = nullptr;
        for (const auto& b : batches)
            if (b.source == source.name && !b.samples.empty()) batch = &b;
        if (!batch) continue;

        SourceLoss loss;
        loss.source = source.name;
        const double inv_b = 1.0 / static_cast<double>(batch->samples.size());
        double lp = 0.0, lt = 0.0;
        // Per-sample backward keeps only one graph alive; gradients accumulate.
        for (const FractionSample& sample : batch->samples) {
            ag::Var pred = predict_fractions(nets.student, nets.model, source, sample.input);
            ag::Var objective;
            if (options.fraction_supervision) {
                ag::Var term = ag::scale(l1_fraction_loss({pred}, {sample.target}), inv_b);
                lp += term.value()[0];
                objective = term;
            }
            if (use_teacher) {
                Tensor q;
                {
                    ag::NoGradGuard no_grad;
                    q = predict_fractions(*nets.teacher, nets.model, source, sample.input).value();
                }
                ag::Var term = ag::scale(teacher_consistency_loss({q}, {pred}), inv_b);
                lt += term.value()[0];
                ag::Var weighted = ag::scale(term, options.consistency_weight);
                objective = objective.defined() ? ag::add(objective, weighted) : weighted;
            }
            if (objective.defined()) ag::backward(objective);
        }
        if (options.fraction_supervision) loss.fraction_loss = lp;
        if (use_teacher) loss.teacher_loss = lt;
        loss.total = lp + options.consistency_weight * lt;
        report.total += loss.total;
        report.sources.push_back(loss);
    }
    report.grad_norm = optimizer.step(nets.student, options.lr);
    if (use_teacher) ema_update(*nets.teacher, nets.student, options.tau);
    return report;
}

}  // namespace phenoswin
