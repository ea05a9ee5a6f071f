#include "moog/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace moog {

std::string MetricReport::to_json() const {
    nlohmann::ordered_json j;
    for (const auto& [name, v] : metrics) {
        j[name] = v.value;
        j[name + "_count"] = v.count;
    }
    if (!config_echo.empty()) {
        nlohmann::ordered_json cfg;
        for (const auto& [k, v] : config_echo) cfg[k] = v;
        j["config"] = cfg;
    }
    return j.dump(2);
}

double psnr(const TensorF& pred, const TensorF& gt, double max_val) {
    require(pred.same_shape(gt), "psnr: shape mismatch " + shape_str(pred.shape) + " vs " + shape_str(gt.shape));
    double mse = 0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(pred.size());
    if (mse == 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(max_val * max_val / mse));
}

bool PointPrediction::visible(int n, int t) const {
    // sigmoid(x) > 0.5  <=>  x > 0
    return vis_logit[static_cast<size_t>(idx(n, t))] > 0.0 && cert_logit[static_cast<size_t>(idx(n, t))] > 0.0;
}

std::optional<double> average_jaccard(const PointPrediction& pred, const PointGroundTruth& gt) {
    require(pred.num_points == gt.num_points && pred.num_frames == gt.num_frames,
            "average_jaccard: prediction/ground-truth sizes disagree");
    const int N = gt.num_points, T = gt.num_frames;
    static const double thresholds_px256[] = {1.0, 2.0, 4.0, 8.0, 16.0};

    bool any_pair = false;
    double sum_j = 0;
    for (double th : thresholds_px256) {
        double thr = th / 256.0;
        int64_t tp = 0, fp = 0, fn = 0;
        for (int n = 0; n < N; ++n) {
            if (!gt.query_mask.empty() && !gt.query_mask[static_cast<size_t>(n)]) continue;
            for (int t = 1; t < T; ++t) {
                int64_t i = gt.idx(n, t);
                bool gt_vis = gt.visible[static_cast<size_t>(i)] != 0;
                bool pd_vis = pred.visible(n, t);
                if (!gt_vis && !pd_vis) continue;  // both occluded: no contribution
                any_pair = true;
                double dx = pred.x[static_cast<size_t>(i)] - gt.x[static_cast<size_t>(i)];
                double dy = pred.y[static_cast<size_t>(i)] - gt.y[static_cast<size_t>(i)];
                bool close = std::sqrt(dx * dx + dy * dy) <= thr;
                if (gt_vis && pd_vis && close)
                    ++tp;
                else {
                    if (pd_vis && (!gt_vis || !close)) ++fp;
                    if (gt_vis && (!pd_vis || !close)) ++fn;
                }
            }
        }
        int64_t denom = tp + fp + fn;
        sum_j += denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
    }
    if (!any_pair) return std::nullopt;
    return sum_j / 5.0;
}

std::optional<double> absrel(const TensorF& pred, const TensorF& gt, const std::vector<uint8_t>& mask) {
    require(pred.same_shape(gt), "absrel: shape mismatch");
    require(static_cast<int64_t>(mask.size()) == gt.size(), "absrel: mask size mismatch");
    double sum = 0;
    int64_t count = 0;
    for (int64_t i = 0; i < gt.size(); ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        double g = gt[i];
        require(g > 0, "absrel: non-positive ground truth under mask");
        sum += std::abs(static_cast<double>(pred[i]) - g) / g;
        ++count;
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
}

double box_iou(double ay0, double ax0, double ay1, double ax1, double by0, double bx0, double by1, double bx1) {
    double iy = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    double ix = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    double inter = iy * ix;
    double area_a = std::max(0.0, ay1 - ay0) * std::max(0.0, ax1 - ax0);
    double area_b = std::max(0.0, by1 - by0) * std::max(0.0, bx1 - bx0);
    double uni = area_a + area_b - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

std::optional<double> mean_iou(const BoxSequence& pred, const BoxSequence& gt) {
    require(pred.num_boxes == gt.num_boxes && pred.num_frames == gt.num_frames,
            "mean_iou: prediction/ground-truth sizes disagree");
    double sum = 0;
    int64_t count = 0;
    for (int m = 0; m < gt.num_boxes; ++m)
        for (int t = 1; t < gt.num_frames; ++t) {
            int64_t i = gt.idx(m, t);
            if (!gt.present[static_cast<size_t>(i)]) continue;
            sum += box_iou(pred.ymin[static_cast<size_t>(i)], pred.xmin[static_cast<size_t>(i)],
                           pred.ymax[static_cast<size_t>(i)], pred.xmax[static_cast<size_t>(i)],
                           gt.ymin[static_cast<size_t>(i)], gt.xmin[static_cast<size_t>(i)],
                           gt.ymax[static_cast<size_t>(i)], gt.xmax[static_cast<size_t>(i)]);
            ++count;
        }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
}

}  // namespace moog
