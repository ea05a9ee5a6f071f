#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "moog/tensor.hpp"

namespace moog {

// Named scalar metrics plus how many frames/points/boxes went into each.
// Empty denominators leave the metric absent rather than emitting NaN.
struct MetricReport {
    struct Value {
        double value = 0.0;
        int64_t count = 0;
    };
    std::map<std::string, Value> metrics;
    std::map<std::string, std::string> config_echo;

    void set(const std::string& name, double v, int64_t count) { metrics[name] = Value{v, count}; }
    bool has(const std::string& name) const { return metrics.count(name) != 0; }
    double get(const std::string& name) const {
        auto it = metrics.find(name);
        require(it != metrics.end(), "metric absent: " + name);
        return it->second.value;
    }

    std::string to_json() const;
};

// 10 log10(max^2 / MSE); an exact match reports the 99 dB cap.
double psnr(const TensorF& pred, const TensorF& gt, double max_val = 1.0);

constexpr double kPsnrCapDb = 99.0;

// Point-track predictions over a sequence, normalized coordinates.
// A point counts as visible iff sigmoid(vis) > 0.5 and sigmoid(cert) > 0.5.
struct PointPrediction {
    int num_points = 0;
    int num_frames = 0;
    std::vector<double> x, y;        // [N*T]
    std::vector<double> vis_logit;   // [N*T]
    std::vector<double> cert_logit;  // [N*T]

    int64_t idx(int n, int t) const { return static_cast<int64_t>(n) * num_frames + t; }
    bool visible(int n, int t) const;
};

struct PointGroundTruth {
    int num_points = 0;
    int num_frames = 0;
    std::vector<double> x, y;      // [N*T]
    std::vector<uint8_t> visible;  // [N*T]
    std::vector<uint8_t> query_mask;  // [N]; 0 excludes the query from evaluation

    int64_t idx(int n, int t) const { return static_cast<int64_t>(n) * num_frames + t; }
};

// Average Jaccard over distance thresholds {1,2,4,8,16} px at 256-scale
// (applied as fractions of the normalized coordinate range, so they scale
// linearly with evaluation resolution). Frame 0 is the query frame and is
// excluded. Returns nothing when no evaluable pair exists.
std::optional<double> average_jaccard(const PointPrediction& pred, const PointGroundTruth& gt);

// mean |pred-gt|/gt over unmasked entries; gt must be positive there
std::optional<double> absrel(const TensorF& pred, const TensorF& gt, const std::vector<uint8_t>& mask);

struct BoxSequence {
    int num_boxes = 0;
    int num_frames = 0;
    std::vector<double> ymin, xmin, ymax, xmax;  // [M*T]
    std::vector<uint8_t> present;                // [M*T]

    int64_t idx(int m, int t) const { return static_cast<int64_t>(m) * num_frames + t; }
};

double box_iou(double ay0, double ax0, double ay1, double ax1, double by0, double bx0, double by1, double bx1);

// mean IoU over present (box, frame) pairs, excluding frame 0
std::optional<double> mean_iou(const BoxSequence& pred, const BoxSequence& gt);

}  // namespace moog
