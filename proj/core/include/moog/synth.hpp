#pragma once

#include <string>
#include <vector>

#include "moog/rng.hpp"
#include "moog/tensor.hpp"

namespace moog {

// Layered moving sprites over a constant or drifting gradient background.
// Every annotation is exact by construction: point tracks with occlusion
// flags, layer-derived pseudo-depth (stored log(1+d)-transformed), and tight
// per-sprite boxes.
struct SceneConfig {
    int height = 32, width = 32;
    int sprites_min = 2, sprites_max = 3;
    bool allow_disc = true, allow_rect = true;
    double speed_min = 0.5, speed_max = 1.5;  // sprite speed, px/frame
    double camera_speed = 0.0;                // global drift magnitude, px/frame
    bool bounce = true;
    enum class Background { constant, gradient };
    Background background = Background::gradient;
    int points = 16;
    int frames = 10;

    void validate() const {
        require(height >= 4 && width >= 4, "scene: frame too small");
        require(sprites_min >= 1 && sprites_max >= sprites_min, "scene: need at least one sprite");
        require(allow_disc || allow_rect, "scene: no sprite shapes enabled");
        require(speed_min >= 0 && speed_max >= speed_min, "scene: bad speed range");
        require(points >= 1, "scene: need at least one point");
        require(frames >= 1, "scene: need at least one frame");
        double vmax = speed_max + camera_speed;
        require(vmax <= std::min(height, width) / 4.0,
                "scene: velocities let sprites cross more than a quarter frame per step");
    }
};

struct Sprite {
    enum class Shape { disc, rect };
    Shape shape = Shape::disc;
    double rx = 2, ry = 2;  // half extents, px
    float color[3] = {0.5f, 0.5f, 0.5f};
    double vx = 0, vy = 0;  // px/frame (camera drift folded in)
};

// Sprite trajectories plus point attachments; the ground the rasterizer and
// the test oracle both stand on. Draw order is the vector order: a later
// sprite covers an earlier one.
struct SceneInstance {
    SceneConfig cfg;
    std::vector<Sprite> sprites;
    std::vector<double> centers_x;  // [sprites * frames]
    std::vector<double> centers_y;
    double cam_vx = 0, cam_vy = 0;
    float bg_base[3] = {0.5f, 0.5f, 0.5f};
    double bg_freq_x[3] = {0, 0, 0}, bg_freq_y[3] = {0, 0, 0}, bg_phase[3] = {0, 0, 0};

    int sprite_count() const { return static_cast<int>(sprites.size()); }
    double center_x(int s, int t) const { return centers_x[static_cast<size_t>(s) * cfg.frames + t]; }
    double center_y(int s, int t) const { return centers_y[static_cast<size_t>(s) * cfg.frames + t]; }

    struct PointAttach {
        int sprite = -1;  // -1: background (drifts with the camera)
        double off_x = 0, off_y = 0;  // sprite frame offset, or absolute position at t=0
    };
    std::vector<PointAttach> points;

    bool covers(int s, double px, double py, int t) const;
    // draw order of the topmost sprite covering the pixel, or -1
    int top_sprite_at(double px, double py, int t) const;
    void background_color(double px, double py, int t, float out[3]) const;
    void point_position(int p, int t, double* x, double* y) const;
};

struct VideoSample {
    int frames_count = 0, height = 0, width = 0, num_points = 0, num_boxes = 0;
    TensorF frames;                   // [T,H,W,3] in [0,1]
    TensorF tracks;                   // [N,T,2] normalized (x,y)
    std::vector<uint8_t> visibility;  // [N*T]
    std::vector<uint8_t> in_scene;    // [N*T]
    TensorF depth;                    // [T,H,W], log(1+d)
    std::vector<uint8_t> depth_mask;  // [T*H*W]
    TensorF boxes;                    // [M,T,4] normalized (ymin,xmin,ymax,xmax)
    std::vector<uint8_t> box_present; // [M*T]

    int64_t track_idx(int n, int t) const { return static_cast<int64_t>(n) * frames_count + t; }
    int64_t box_idx(int m, int t) const { return static_cast<int64_t>(m) * frames_count + t; }
};

SceneInstance make_scene(const SceneConfig& cfg, uint64_t seed);
VideoSample render_scene(const SceneInstance& scene);

inline VideoSample gen_scene(const SceneConfig& cfg, uint64_t seed) { return render_scene(make_scene(cfg, seed)); }

// Random resized crop; annotations follow the same affine map. Points leaving
// the crop flip to in_scene=false, depth masks vanish outside source
// coverage. Degenerate draws are resampled (10 tries) before falling back to
// the identity region.
struct CropParams {
    double area_min = 0.3, area_max = 2.0;
    double aspect_min = 0.5, aspect_max = 2.0;
};

VideoSample random_crop(const VideoSample& sample, RngState& rng, int out_h, int out_w, const CropParams& p = {});

void write_dataset(const std::vector<VideoSample>& samples, const std::string& path);
std::vector<VideoSample> read_dataset(const std::string& path);

}  // namespace moog
