#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "phenoswin/config.hpp"
#include "phenoswin/fractions.hpp"
#include "json.hpp"

namespace phenoswin {

struct ClassCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;
    std::int64_t total() const { return tp + fp + tn + fn; }
    friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

/// One-vs-rest counts per class plus the global agreement count.
struct ConfusionCounts {
    std::vector<ClassCounts> per_class;
    std::int64_t evaluated = 0;
    std::int64_t correct = 0;

    ConfusionCounts& operator+=(const ConfusionCounts& other);
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts confusion(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes,
                          std::optional<int> ignore = std::nullopt);
ConfusionCounts confusion(const LabelMap& pred, const LabelMap& gt, int num_classes,
                          std::optional<int> ignore = std::nullopt);

/// A ratio whose zero denominator is reported as 0 with `undefined` set.
struct Ratio {
    double value = 0.0;
    bool undefined = false;
};

struct ClassMetrics {
    Ratio precision;
    Ratio recall;
    Ratio f1;
    Ratio oa;
};

ClassMetrics class_metrics(const ClassCounts& c);

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    ClassMetrics macro;      // unweighted mean over all classes, background included
    Ratio overall_accuracy;  // global agreement
    int positive_class = 1;
};

MetricsReport metrics(const ConfusionCounts& counts, int positive_class = 1);

nlohmann::json report_json(const MetricsReport& report, const ConfusionCounts& counts, const std::string& config_hash);

// ---- FLOP accounting ----------------------------------------------------------

/// Multiply-accumulates of one attention window with `slots` tokens and `channels` channels:
/// q/k/v and output projections plus logits and the weighted sum.
std::int64_t attention_window_macs(std::int64_t slots, std::int64_t channels);

struct StageFlops {
    std::int64_t embed = 0;
    std::int64_t attention = 0;
    std::int64_t mlp = 0;
    std::int64_t merge = 0;
    std::int64_t total() const { return embed + attention + mlp + merge; }
};

struct FlopsReport {
    std::array<StageFlops, 4> stages{};
    std::int64_t decoder = 0;
    std::int64_t backbone() const;
    std::int64_t total() const { return backbone() + decoder; }
};

/// Closed-form MAC count of one forward pass (backbone and decoder) for a
/// [bands, T, H, W] input.
FlopsReport flops_estimate(const ModelConfig& model, const SourceSpec& source, int frames, std::int64_t height,
                           std::int64_t width, bool include_decoder = true);

nlohmann::json flops_json(const FlopsReport& report);

// ---- plots --------------------------------------------------------------------

/// RGB raster written as PNG.
class Canvas {
public:
    Canvas(int width, int height, std::array<std::uint8_t, 3> background = {255, 255, 255});
    void fill_rect(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> color);
    void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> color);
    void save_png(const std::filesystem::path& path) const;
    int width() const { return width_; }
    int height() const { return height_; }

private:
    int width_;
    int height_;
    std::vector<std::uint8_t> rgb_;
};

std::array<std::uint8_t, 3> class_color(int cls);

void plot_f1_bars(const MetricsReport& report, const std::filesystem::path& path);
void plot_curves(const std::vector<std::vector<double>>& series, const std::filesystem::path& path);
void plot_prediction_panel(const LabelMap& prediction, const LabelMap& label, const std::filesystem::path& path);

}  // namespace phenoswin
