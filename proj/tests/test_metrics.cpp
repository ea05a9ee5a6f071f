#include <doctest.h>

#include "moog/metrics.hpp"
#include "moog/rng.hpp"

using namespace moog;

namespace {

// brute-force per-pair classifier, written independently of average_jaccard
double aj_oracle(const PointPrediction& pred, const PointGroundTruth& gt, bool* any) {
    double sum = 0;
    *any = false;
    for (double th : {1.0, 2.0, 4.0, 8.0, 16.0}) {
        double thr = th / 256.0;
        double tp = 0, fp = 0, fn = 0;
        for (int n = 0; n < gt.num_points; ++n) {
            if (!gt.query_mask.empty() && !gt.query_mask[static_cast<size_t>(n)]) continue;
            for (int t = 1; t < gt.num_frames; ++t) {
                auto i = static_cast<size_t>(gt.idx(n, t));
                bool gv = gt.visible[i];
                bool pv = pred.vis_logit[i] > 0 && pred.cert_logit[i] > 0;
                double d = std::hypot(pred.x[i] - gt.x[i], pred.y[i] - gt.y[i]);
                if (gv && pv && d <= thr) tp += 1;
                if (pv && (!gv || d > thr)) fp += 1;
                if (gv && (!pv || d > thr)) fn += 1;
                if (gv || pv) *any = true;
            }
        }
        sum += (tp + fp + fn) == 0 ? 1.0 : tp / (tp + fp + fn);
    }
    return sum / 5.0;
}

PointPrediction random_pred(RngState& rng, int N, int T) {
    PointPrediction p;
    p.num_points = N;
    p.num_frames = T;
    for (int i = 0; i < N * T; ++i) {
        p.x.push_back(rng.next_uniform());
        p.y.push_back(rng.next_uniform());
        p.vis_logit.push_back(rng.next_gaussian());
        p.cert_logit.push_back(rng.next_gaussian());
    }
    return p;
}

PointGroundTruth random_gt(RngState& rng, int N, int T) {
    PointGroundTruth g;
    g.num_points = N;
    g.num_frames = T;
    for (int i = 0; i < N * T; ++i) {
        g.x.push_back(rng.next_uniform());
        g.y.push_back(rng.next_uniform());
        g.visible.push_back(rng.next_uniform() < 0.7 ? 1 : 0);
    }
    for (int n = 0; n < N; ++n) g.query_mask.push_back(rng.next_uniform() < 0.9 ? 1 : 0);
    return g;
}

}  // namespace

TEST_CASE("psnr: analytic, identical and oracle cases") {
    TensorF gt({10, 10});
    TensorF pred({10, 10});
    for (int64_t i = 0; i < gt.size(); ++i) pred[i] = 0.1f;  // mse 0.01
    CHECK(psnr(pred, gt) == doctest::Approx(20.0));
    CHECK(psnr(gt, gt) == kPsnrCapDb);
    TensorF other({5, 5});
    CHECK_THROWS_AS(psnr(pred, other), std::runtime_error);

    auto rng = RngState::from_seed(4);
    TensorF a({8, 8}), b({8, 8});
    for (int64_t i = 0; i < a.size(); ++i) {
        a[i] = static_cast<float>(rng.next_uniform());
        b[i] = static_cast<float>(rng.next_uniform());
    }
    double mse = 0;
    for (int64_t i = 0; i < a.size(); ++i) mse += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
    mse /= static_cast<double>(a.size());
    CHECK(psnr(a, b) == doctest::Approx(10 * std::log10(1.0 / mse)));
}

TEST_CASE("average_jaccard: perfect and fully-wrong predictions") {
    PointGroundTruth gt;
    gt.num_points = 2;
    gt.num_frames = 3;
    gt.x = {0.1, 0.2, 0.3, 0.6, 0.5, 0.4};
    gt.y = {0.5, 0.5, 0.5, 0.2, 0.2, 0.2};
    gt.visible = {1, 1, 1, 1, 1, 1};
    gt.query_mask = {1, 1};

    PointPrediction perfect;
    perfect.num_points = 2;
    perfect.num_frames = 3;
    perfect.x = gt.x;
    perfect.y = gt.y;
    perfect.vis_logit.assign(6, 5.0);
    perfect.cert_logit.assign(6, 5.0);
    CHECK(average_jaccard(perfect, gt).value() == doctest::Approx(1.0));

    PointPrediction occluded = perfect;
    occluded.vis_logit.assign(6, -5.0);
    CHECK(average_jaccard(occluded, gt).value() == doctest::Approx(0.0));
}

TEST_CASE("average_jaccard: 2-point hand case equals the brute-force classifier") {
    PointGroundTruth gt;
    gt.num_points = 2;
    gt.num_frames = 2;
    gt.x = {0.5, 0.5, 0.2, 0.2};
    gt.y = {0.5, 0.5, 0.8, 0.8};
    gt.visible = {1, 1, 1, 0};
    gt.query_mask = {1, 1};
    PointPrediction pred;
    pred.num_points = 2;
    pred.num_frames = 2;
    pred.x = {0.5, 0.5 + 3.0 / 256.0, 0.2, 0.2};
    pred.y = {0.5, 0.5, 0.8, 0.8};
    pred.vis_logit = {4, 4, 4, 4};
    pred.cert_logit = {4, 4, 4, -4};
    bool any = false;
    double expect = aj_oracle(pred, gt, &any);
    CHECK(average_jaccard(pred, gt).value() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("average_jaccard: matches the oracle on 120 random instances") {
    auto rng = RngState::from_seed(8);
    for (int it = 0; it < 120; ++it) {
        int N = 1 + static_cast<int>(rng.next_below(5));
        int T = 2 + static_cast<int>(rng.next_below(4));
        auto pred = random_pred(rng, N, T);
        auto gt = random_gt(rng, N, T);
        // sharpen some predictions toward gt so every threshold band is hit
        for (int i = 0; i < N * T; ++i)
            if (rng.next_uniform() < 0.5) {
                pred.x[static_cast<size_t>(i)] = gt.x[static_cast<size_t>(i)] + rng.next_gaussian() * 0.01;
                pred.y[static_cast<size_t>(i)] = gt.y[static_cast<size_t>(i)] + rng.next_gaussian() * 0.01;
            }
        bool any = false;
        double expect = aj_oracle(pred, gt, &any);
        auto got = average_jaccard(pred, gt);
        if (!any) {
            CHECK(!got.has_value());
        } else {
            REQUIRE(got.has_value());
            CHECK(got.value() == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("average_jaccard: monotone in thresholds via growing errors") {
    // with fixed visibility, shrinking position errors cannot lower AJ
    auto rng = RngState::from_seed(9);
    auto gt = random_gt(rng, 4, 4);
    gt.visible.assign(gt.visible.size(), 1);
    gt.query_mask.assign(gt.query_mask.size(), 1);
    double prev = -1;
    for (double noise : {0.2, 0.05, 0.01, 0.0}) {
        PointPrediction pred;
        pred.num_points = 4;
        pred.num_frames = 4;
        auto r2 = RngState::from_seed(10);
        for (size_t i = 0; i < gt.x.size(); ++i) {
            pred.x.push_back(gt.x[i] + noise * r2.next_gaussian());
            pred.y.push_back(gt.y[i] + noise * r2.next_gaussian());
            pred.vis_logit.push_back(1.0);
            pred.cert_logit.push_back(1.0);
        }
        double aj = average_jaccard(pred, gt).value();
        CHECK(aj >= prev - 1e-12);
        prev = aj;
    }
    CHECK(prev == doctest::Approx(1.0));
}

TEST_CASE("average_jaccard: empty evaluable set reports absent") {
    PointGroundTruth gt;
    gt.num_points = 1;
    gt.num_frames = 2;
    gt.x = {0.5, 0.5};
    gt.y = {0.5, 0.5};
    gt.visible = {1, 0};
    gt.query_mask = {0};  // the only query is masked out
    PointPrediction pred;
    pred.num_points = 1;
    pred.num_frames = 2;
    pred.x = {0.5, 0.5};
    pred.y = {0.5, 0.5};
    pred.vis_logit = {1, 1};
    pred.cert_logit = {1, 1};
    CHECK(!average_jaccard(pred, gt).has_value());
}

TEST_CASE("absrel: exact, doubled, masked oracle") {
    TensorF gt({4}, {1.f, 2.f, 4.f, 8.f});
    CHECK(absrel(gt, gt, {1, 1, 1, 1}).value() == 0.0);
    TensorF twice({4}, {2.f, 4.f, 8.f, 16.f});
    CHECK(absrel(twice, gt, {1, 1, 1, 1}).value() == doctest::Approx(1.0));
    CHECK(!absrel(twice, gt, {0, 0, 0, 0}).has_value());

    auto rng = RngState::from_seed(12);
    for (int it = 0; it < 100; ++it) {
        int n = 3 + static_cast<int>(rng.next_below(10));
        TensorF g({n}), p({n});
        std::vector<uint8_t> m;
        for (int i = 0; i < n; ++i) {
            g[i] = static_cast<float>(rng.uniform_in(0.5, 3.0));
            p[i] = static_cast<float>(rng.uniform_in(0.0, 3.0));
            m.push_back(rng.next_uniform() < 0.8 ? 1 : 0);
        }
        double sum = 0;
        int64_t cnt = 0;
        for (int i = 0; i < n; ++i)
            if (m[static_cast<size_t>(i)]) {
                sum += std::abs(static_cast<double>(p[i]) - g[i]) / g[i];
                ++cnt;
            }
        auto got = absrel(p, g, m);
        if (cnt == 0)
            CHECK(!got.has_value());
        else
            CHECK(got.value() == doctest::Approx(sum / cnt).epsilon(1e-12));
    }
}

TEST_CASE("mean_iou: analytic boxes") {
    CHECK(box_iou(0, 0, 1, 1, 0, 0, 1, 1) == doctest::Approx(1.0));
    CHECK(box_iou(0, 0, 0.4, 0.4, 0.5, 0.5, 1, 1) == doctest::Approx(0.0));
    CHECK(box_iou(0, 0, 1, 1, 0, 0, 0.5, 1) == doctest::Approx(0.5));
}

TEST_CASE("mean_iou: excludes the first frame, matches a scalar oracle") {
    auto rng = RngState::from_seed(13);
    for (int it = 0; it < 100; ++it) {
        int M = 1 + static_cast<int>(rng.next_below(4));
        int T = 2 + static_cast<int>(rng.next_below(4));
        BoxSequence pred, gt;
        pred.num_boxes = gt.num_boxes = M;
        pred.num_frames = gt.num_frames = T;
        for (int i = 0; i < M * T; ++i) {
            auto mk = [&](BoxSequence& b) {
                double y0 = rng.next_uniform() * 0.6, x0 = rng.next_uniform() * 0.6;
                b.ymin.push_back(y0);
                b.xmin.push_back(x0);
                b.ymax.push_back(y0 + rng.uniform_in(0.05, 0.4));
                b.xmax.push_back(x0 + rng.uniform_in(0.05, 0.4));
            };
            mk(pred);
            mk(gt);
            pred.present.push_back(1);
            gt.present.push_back(rng.next_uniform() < 0.85 ? 1 : 0);
        }
        double sum = 0;
        int64_t cnt = 0;
        for (int m = 0; m < M; ++m)
            for (int t = 1; t < T; ++t) {
                auto i = static_cast<size_t>(gt.idx(m, t));
                if (!gt.present[i]) continue;
                sum += box_iou(pred.ymin[i], pred.xmin[i], pred.ymax[i], pred.xmax[i], gt.ymin[i], gt.xmin[i],
                               gt.ymax[i], gt.xmax[i]);
                ++cnt;
            }
        auto got = mean_iou(pred, gt);
        if (cnt == 0)
            CHECK(!got.has_value());
        else
            CHECK(got.value() == doctest::Approx(sum / cnt).epsilon(1e-12));
    }
}

TEST_CASE("metrics are invariant to point and box ordering") {
    auto rng = RngState::from_seed(14);
    auto pred = random_pred(rng, 5, 3);
    auto gt = random_gt(rng, 5, 3);
    gt.query_mask.assign(5, 1);
    double base = average_jaccard(pred, gt).value();
    // swap points 1 and 3 everywhere
    auto swap_pt = [&](auto& v, int a, int b, int T) {
        for (int t = 0; t < T; ++t) std::swap(v[static_cast<size_t>(a * T + t)], v[static_cast<size_t>(b * T + t)]);
    };
    for (auto* v : {&pred.x, &pred.y, &pred.vis_logit, &pred.cert_logit}) swap_pt(*v, 1, 3, 3);
    for (auto* v : {&gt.x, &gt.y}) swap_pt(*v, 1, 3, 3);
    swap_pt(gt.visible, 1, 3, 3);
    CHECK(average_jaccard(pred, gt).value() == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("metric report serializes values with counts and never NaN") {
    MetricReport rep;
    rep.set("psnr_db", 21.5, 16);
    rep.set("aj", 0.75, 40);
    rep.config_echo["profile"] = "desk";
    std::string j = rep.to_json();
    CHECK(j.find("\"psnr_db\": 21.5") != std::string::npos);
    CHECK(j.find("\"psnr_db_count\": 16") != std::string::npos);
    CHECK(j.find("nan") == std::string::npos);
    CHECK(rep.has("aj"));
    CHECK(!rep.has("absrel"));
    CHECK_THROWS_AS(rep.get("absrel"), std::runtime_error);
}
