#include "moog/synth.hpp"

#include <algorithm>
#include <cmath>

#include "moog/serial.hpp"

namespace moog {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

// nearest pixel, clamped into the frame
int round_clamp(double v, int lo, int hi) {
    int r = static_cast<int>(std::llround(v));
    return std::max(lo, std::min(hi, r));
}

}  // namespace

bool SceneInstance::covers(int s, double px, double py, int t) const {
    const Sprite& sp = sprites[static_cast<size_t>(s)];
    double dx = px - center_x(s, t);
    double dy = py - center_y(s, t);
    if (sp.shape == Sprite::Shape::rect) return std::abs(dx) <= sp.rx && std::abs(dy) <= sp.ry;
    double nx = dx / sp.rx, ny = dy / sp.ry;
    return nx * nx + ny * ny <= 1.0;
}

int SceneInstance::top_sprite_at(double px, double py, int t) const {
    for (int s = sprite_count() - 1; s >= 0; --s)
        if (covers(s, px, py, t)) return s;
    return -1;
}

void SceneInstance::background_color(double px, double py, int t, float out[3]) const {
    if (cfg.background == SceneConfig::Background::constant) {
        for (int c = 0; c < 3; ++c) out[c] = bg_base[c];
        return;
    }
    double sx = px - cam_vx * t;
    double sy = py - cam_vy * t;
    for (int c = 0; c < 3; ++c) {
        double v = bg_base[c] + 0.3 * std::sin(kTwoPi * (bg_freq_x[c] * sx + bg_freq_y[c] * sy) + bg_phase[c]);
        out[c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
}

void SceneInstance::point_position(int p, int t, double* x, double* y) const {
    const PointAttach& pa = points[static_cast<size_t>(p)];
    if (pa.sprite < 0) {
        *x = pa.off_x + cam_vx * t;
        *y = pa.off_y + cam_vy * t;
    } else {
        *x = center_x(pa.sprite, t) + pa.off_x;
        *y = center_y(pa.sprite, t) + pa.off_y;
    }
}

SceneInstance make_scene(const SceneConfig& cfg, uint64_t seed) {
    cfg.validate();
    SceneInstance sc;
    sc.cfg = cfg;
    RngState root = RngState::from_seed(seed);

    RngState cam = root.child("camera");
    if (cfg.camera_speed > 0) {
        double angle = cam.uniform_in(0, kTwoPi);
        sc.cam_vx = cfg.camera_speed * std::cos(angle);
        sc.cam_vy = cfg.camera_speed * std::sin(angle);
    }

    RngState bg = root.child("background");
    for (int c = 0; c < 3; ++c) {
        sc.bg_base[c] = static_cast<float>(bg.uniform_in(0.35, 0.65));
        // low spatial frequencies; at most two periods across the frame
        sc.bg_freq_x[c] = bg.uniform_in(0.5, 2.0) / cfg.width;
        sc.bg_freq_y[c] = bg.uniform_in(0.5, 2.0) / cfg.height;
        sc.bg_phase[c] = bg.uniform_in(0, kTwoPi);
    }

    RngState srng = root.child("sprites");
    int count = cfg.sprites_min +
                static_cast<int>(srng.next_below(static_cast<uint64_t>(cfg.sprites_max - cfg.sprites_min + 1)));
    double rmin = 0.10 * std::min(cfg.height, cfg.width);
    double rmax = 0.22 * std::min(cfg.height, cfg.width);
    for (int s = 0; s < count; ++s) {
        RngState r = srng.child_index(static_cast<uint64_t>(s));
        Sprite sp;
        bool disc = cfg.allow_disc && (!cfg.allow_rect || r.next_uniform() < 0.5);
        sp.shape = disc ? Sprite::Shape::disc : Sprite::Shape::rect;
        sp.rx = r.uniform_in(rmin, rmax);
        sp.ry = r.uniform_in(rmin, rmax);
        for (int c = 0; c < 3; ++c) sp.color[c] = static_cast<float>(r.uniform_in(0.05, 0.95));
        double speed = r.uniform_in(cfg.speed_min, cfg.speed_max);
        double angle = r.uniform_in(0, kTwoPi);
        sp.vx = speed * std::cos(angle) + sc.cam_vx;
        sp.vy = speed * std::sin(angle) + sc.cam_vy;
        require(2 * sp.rx < cfg.width - 1 && 2 * sp.ry < cfg.height - 1, "scene: sprite larger than frame");
        double x = r.uniform_in(sp.rx, cfg.width - 1 - sp.rx);
        double y = r.uniform_in(sp.ry, cfg.height - 1 - sp.ry);
        sc.sprites.push_back(sp);

        // simulate the trajectory; elastic wall bounces flip the velocity sign
        double vx = sp.vx, vy = sp.vy;
        for (int t = 0; t < cfg.frames; ++t) {
            sc.centers_x.push_back(x);
            sc.centers_y.push_back(y);
            x += vx;
            y += vy;
            if (cfg.bounce) {
                double lox = sp.rx, hix = cfg.width - 1 - sp.rx;
                double loy = sp.ry, hiy = cfg.height - 1 - sp.ry;
                if (x < lox) { x = 2 * lox - x; vx = -vx; }
                if (x > hix) { x = 2 * hix - x; vx = -vx; }
                if (y < loy) { y = 2 * loy - y; vy = -vy; }
                if (y > hiy) { y = 2 * hiy - y; vy = -vy; }
            }
        }
    }

    // points: at most 10% of them on any single sprite, remainder on the
    // background (which drifts with the camera)
    RngState prng = root.child("points");
    int per_sprite_cap = cfg.points / 10;
    int remaining = cfg.points;
    for (int s = 0; s < count && remaining > 0; ++s) {
        int want = std::min(per_sprite_cap, remaining);
        const Sprite& sp = sc.sprites[static_cast<size_t>(s)];
        for (int i = 0; i < want; ++i) {
            SceneInstance::PointAttach pa;
            pa.sprite = s;
            for (int tries = 0; tries < 64; ++tries) {
                pa.off_x = prng.uniform_in(-sp.rx, sp.rx);
                pa.off_y = prng.uniform_in(-sp.ry, sp.ry);
                double nx = pa.off_x / sp.rx, ny = pa.off_y / sp.ry;
                if (sp.shape == Sprite::Shape::rect || nx * nx + ny * ny <= 1.0) break;
            }
            sc.points.push_back(pa);
            --remaining;
        }
    }
    while (remaining > 0) {
        SceneInstance::PointAttach pa;
        for (int tries = 0; tries < 32; ++tries) {
            pa.off_x = prng.uniform_in(0, cfg.width - 1);
            pa.off_y = prng.uniform_in(0, cfg.height - 1);
            if (sc.top_sprite_at(pa.off_x, pa.off_y, 0) < 0) break;
        }
        sc.points.push_back(pa);
        --remaining;
    }
    return sc;
}

VideoSample render_scene(const SceneInstance& sc) {
    const SceneConfig& cfg = sc.cfg;
    const int T = cfg.frames, H = cfg.height, W = cfg.width;
    const int N = static_cast<int>(sc.points.size());
    const int M = sc.sprite_count();

    VideoSample v;
    v.frames_count = T;
    v.height = H;
    v.width = W;
    v.num_points = N;
    v.num_boxes = M;
    v.frames = TensorF({T, H, W, 3});
    v.tracks = TensorF({N, T, 2});
    v.visibility.assign(static_cast<size_t>(N) * T, 0);
    v.in_scene.assign(static_cast<size_t>(N) * T, 0);
    v.depth = TensorF({T, H, W});
    v.depth_mask.assign(static_cast<size_t>(T) * H * W, 1);
    v.boxes = TensorF({M, T, 4});
    v.box_present.assign(static_cast<size_t>(M) * T, 0);

    for (int t = 0; t < T; ++t) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                int64_t pix = (static_cast<int64_t>(t) * H + y) * W + x;
                int top = sc.top_sprite_at(x, y, t);
                float rgb[3];
                if (top >= 0)
                    for (int c = 0; c < 3; ++c) rgb[c] = sc.sprites[static_cast<size_t>(top)].color[c];
                else
                    sc.background_color(x, y, t, rgb);
                for (int c = 0; c < 3; ++c) v.frames[pix * 3 + c] = rgb[c];
                // layer index counted from the camera: topmost sprite 0,
                // deeper sprites higher, background deepest of all
                int layer_index = top >= 0 ? (M - 1 - top) : M;
                v.depth[pix] = static_cast<float>(std::log1p(1.0 + layer_index));
            }

        for (int p = 0; p < N; ++p) {
            double px, py;
            sc.point_position(p, t, &px, &py);
            int64_t i = v.track_idx(p, t);
            v.tracks[i * 2] = static_cast<float>(px / (W - 1));
            v.tracks[i * 2 + 1] = static_cast<float>(py / (H - 1));
            bool in = px >= 0 && px <= W - 1 && py >= 0 && py <= H - 1;
            v.in_scene[static_cast<size_t>(i)] = in ? 1 : 0;
            if (!in) continue;
            int qx = round_clamp(px, 0, W - 1), qy = round_clamp(py, 0, H - 1);
            int owner = sc.points[static_cast<size_t>(p)].sprite;
            bool occluded = false;
            for (int s = owner + 1; s < M && !occluded; ++s) occluded = sc.covers(s, qx, qy, t);
            v.visibility[static_cast<size_t>(i)] = occluded ? 0 : 1;
        }

        for (int m = 0; m < M; ++m) {
            const Sprite& sp = sc.sprites[static_cast<size_t>(m)];
            double y0 = sc.center_y(m, t) - sp.ry, y1 = sc.center_y(m, t) + sp.ry;
            double x0 = sc.center_x(m, t) - sp.rx, x1 = sc.center_x(m, t) + sp.rx;
            y0 = std::max(0.0, y0);
            x0 = std::max(0.0, x0);
            y1 = std::min(static_cast<double>(H - 1), y1);
            x1 = std::min(static_cast<double>(W - 1), x1);
            int64_t i = v.box_idx(m, t);
            bool present = y1 > y0 && x1 > x0;
            v.box_present[static_cast<size_t>(i)] = present ? 1 : 0;
            v.boxes[i * 4 + 0] = static_cast<float>(y0 / (H - 1));
            v.boxes[i * 4 + 1] = static_cast<float>(x0 / (W - 1));
            v.boxes[i * 4 + 2] = static_cast<float>(y1 / (H - 1));
            v.boxes[i * 4 + 3] = static_cast<float>(x1 / (W - 1));
        }
    }
    return v;
}

namespace {

float bilinear(const TensorF& frames, int t, double sx, double sy, int c, int H, int W) {
    sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
    sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
    int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
    int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
    double fx = sx - x0, fy = sy - y0;
    auto at = [&](int y, int x) {
        return static_cast<double>(frames[((static_cast<int64_t>(t) * H + y) * W + x) * 3 + c]);
    };
    double top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx;
    double bot = at(y1, x0) * (1 - fx) + at(y1, x1) * fx;
    return static_cast<float>(top * (1 - fy) + bot * fy);
}

}  // namespace

VideoSample random_crop(const VideoSample& in, RngState& rng, int out_h, int out_w, const CropParams& p) {
    const int H = in.height, W = in.width, T = in.frames_count;
    double crop_w = W, crop_h = H, x0 = 0, y0 = 0;
    bool ok = false;
    for (int tries = 0; tries < 10 && !ok; ++tries) {
        double area = rng.uniform_in(p.area_min, p.area_max);
        double aspect = rng.uniform_in(p.aspect_min, p.aspect_max);
        crop_w = W * std::sqrt(area * aspect);
        crop_h = H * std::sqrt(area / aspect);
        double cx = rng.uniform_in(0, W - 1);
        double cy = rng.uniform_in(0, H - 1);
        x0 = cx - (crop_w - 1) / 2;
        y0 = cy - (crop_h - 1) / 2;
        // reject degenerate or frame-missing draws
        ok = crop_w >= 2 && crop_h >= 2 && x0 < W - 1 && y0 < H - 1 && x0 + crop_w - 1 > 0 && y0 + crop_h - 1 > 0;
    }
    if (!ok) {
        crop_w = W;
        crop_h = H;
        x0 = y0 = 0;
    }

    double sx = (crop_w - 1) / (out_w - 1);
    double sy = (crop_h - 1) / (out_h - 1);

    VideoSample out;
    out.frames_count = T;
    out.height = out_h;
    out.width = out_w;
    out.num_points = in.num_points;
    out.num_boxes = in.num_boxes;
    out.frames = TensorF({T, out_h, out_w, 3});
    out.tracks = TensorF({in.num_points, T, 2});
    out.visibility.assign(in.visibility.size(), 0);
    out.in_scene.assign(in.in_scene.size(), 0);
    out.depth = TensorF({T, out_h, out_w});
    out.depth_mask.assign(static_cast<size_t>(T) * out_h * out_w, 0);
    out.boxes = TensorF({in.num_boxes, T, 4});
    out.box_present.assign(in.box_present.size(), 0);

    for (int t = 0; t < T; ++t)
        for (int v = 0; v < out_h; ++v)
            for (int u = 0; u < out_w; ++u) {
                double src_x = x0 + u * sx;
                double src_y = y0 + v * sy;
                int64_t pix = (static_cast<int64_t>(t) * out_h + v) * out_w + u;
                for (int c = 0; c < 3; ++c) out.frames[pix * 3 + c] = bilinear(in.frames, t, src_x, src_y, c, H, W);
                // depth keeps exact layer values: nearest neighbor, masked outside coverage
                int nx = static_cast<int>(std::llround(src_x));
                int ny = static_cast<int>(std::llround(src_y));
                if (nx >= 0 && nx < W && ny >= 0 && ny < H) {
                    int64_t spix = (static_cast<int64_t>(t) * H + ny) * W + nx;
                    out.depth[pix] = in.depth[spix];
                    out.depth_mask[static_cast<size_t>(pix)] = in.depth_mask[static_cast<size_t>(spix)];
                }
            }

    for (int n = 0; n < in.num_points; ++n)
        for (int t = 0; t < T; ++t) {
            int64_t i = in.track_idx(n, t);
            double px = static_cast<double>(in.tracks[i * 2]) * (W - 1);
            double py = static_cast<double>(in.tracks[i * 2 + 1]) * (H - 1);
            double un = (px - x0) / (crop_w - 1);
            double vn = (py - y0) / (crop_h - 1);
            out.tracks[i * 2] = static_cast<float>(un);
            out.tracks[i * 2 + 1] = static_cast<float>(vn);
            bool in_crop = in.in_scene[static_cast<size_t>(i)] && un >= 0 && un <= 1 && vn >= 0 && vn <= 1;
            out.in_scene[static_cast<size_t>(i)] = in_crop ? 1 : 0;
            out.visibility[static_cast<size_t>(i)] = (in_crop && in.visibility[static_cast<size_t>(i)]) ? 1 : 0;
        }

    for (int m = 0; m < in.num_boxes; ++m)
        for (int t = 0; t < T; ++t) {
            int64_t i = in.box_idx(m, t);
            if (!in.box_present[static_cast<size_t>(i)]) continue;
            double by0 = (static_cast<double>(in.boxes[i * 4 + 0]) * (H - 1) - y0) / (crop_h - 1);
            double bx0 = (static_cast<double>(in.boxes[i * 4 + 1]) * (W - 1) - x0) / (crop_w - 1);
            double by1 = (static_cast<double>(in.boxes[i * 4 + 2]) * (H - 1) - y0) / (crop_h - 1);
            double bx1 = (static_cast<double>(in.boxes[i * 4 + 3]) * (W - 1) - x0) / (crop_w - 1);
            by0 = std::clamp(by0, 0.0, 1.0);
            bx0 = std::clamp(bx0, 0.0, 1.0);
            by1 = std::clamp(by1, 0.0, 1.0);
            bx1 = std::clamp(bx1, 0.0, 1.0);
            out.boxes[i * 4 + 0] = static_cast<float>(by0);
            out.boxes[i * 4 + 1] = static_cast<float>(bx0);
            out.boxes[i * 4 + 2] = static_cast<float>(by1);
            out.boxes[i * 4 + 3] = static_cast<float>(bx1);
            out.box_present[static_cast<size_t>(i)] = (by1 > by0 && bx1 > bx0) ? 1 : 0;
        }
    return out;
}

// ---- dataset container ----
// magic "MOOGDS1\0" | u32 sample count | per sample: u32 section count,
// sections (name str16, dtype u8, rank u8, dims u32..., payload LE) | crc32
// of everything after the magic.

namespace {

constexpr char kMagic[8] = {'M', 'O', 'O', 'G', 'D', 'S', '1', '\0'};

void write_f32_section(ByteWriter& w, const std::string& name, const TensorF& t) {
    w.str16(name);
    w.u8(0);
    w.u8(static_cast<uint8_t>(t.rank()));
    for (int d : t.shape) w.u32(static_cast<uint32_t>(d));
    for (float v : t.data) w.f32(v);
}

void write_u8_section(ByteWriter& w, const std::string& name, const std::vector<uint8_t>& bytes,
                      const std::vector<int>& shape) {
    w.str16(name);
    w.u8(1);
    w.u8(static_cast<uint8_t>(shape.size()));
    for (int d : shape) w.u32(static_cast<uint32_t>(d));
    w.bytes(bytes.data(), bytes.size());
}

struct Section {
    uint8_t dtype = 0;
    std::vector<int> shape;
    TensorF f32;
    std::vector<uint8_t> u8;
};

Section read_section(ByteReader& r, std::string* name) {
    Section s;
    *name = r.str16();
    s.dtype = r.u8();
    require(s.dtype <= 1, "dataset: unknown dtype code " + std::to_string(s.dtype) + " in section " + *name);
    int rank = r.u8();
    int64_t n = 1;
    for (int i = 0; i < rank; ++i) {
        int d = static_cast<int>(r.u32());
        require(d > 0 && d < (1 << 28), "dataset: bad dimension in section " + *name);
        s.shape.push_back(d);
        n *= d;
    }
    if (s.dtype == 0) {
        s.f32 = TensorF::uninit(s.shape);
        for (auto& v : s.f32.data) v = r.f32();
    } else {
        s.u8.resize(static_cast<size_t>(n));
        r.bytes(s.u8.data(), s.u8.size());
    }
    return s;
}

}  // namespace

void write_dataset(const std::vector<VideoSample>& samples, const std::string& path) {
    ByteWriter body;
    body.u32(static_cast<uint32_t>(samples.size()));
    for (const VideoSample& s : samples) {
        body.u32(8);
        write_f32_section(body, "frames", s.frames);
        write_f32_section(body, "tracks", s.tracks);
        write_u8_section(body, "visibility", s.visibility, {s.num_points, s.frames_count});
        write_u8_section(body, "in_scene", s.in_scene, {s.num_points, s.frames_count});
        write_f32_section(body, "depth", s.depth);
        write_u8_section(body, "depth_mask", s.depth_mask, {s.frames_count, s.height, s.width});
        write_f32_section(body, "boxes", s.boxes);
        write_u8_section(body, "box_present", s.box_present, {s.num_boxes, s.frames_count});
    }

    ByteWriter file;
    file.bytes(kMagic, 8);
    file.bytes(body.buf.data(), body.buf.size());
    file.u32(crc32(body.buf.data(), body.buf.size()));
    write_file_bytes(path, file.buf);
}

std::vector<VideoSample> read_dataset(const std::string& path) {
    std::vector<uint8_t> bytes = read_file_bytes(path);
    require(bytes.size() >= 12, "truncated dataset file: " + path);
    if (std::memcmp(bytes.data(), "MOOGDS", 6) != 0) fail("not a dataset file (bad magic): " + path);
    require(std::memcmp(bytes.data(), kMagic, 8) == 0,
            "unsupported dataset version in " + path + " (expected MOOGDS1)");
    size_t body_len = bytes.size() - 12;
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(bytes[bytes.size() - 4 + static_cast<size_t>(i)]) << (8 * i);
    uint32_t actual = crc32(bytes.data() + 8, body_len);
    require(stored == actual, "dataset checksum mismatch in " + path);

    ByteReader r(bytes.data() + 8, body_len, "dataset " + path);
    uint32_t count = r.u32();
    std::vector<VideoSample> samples;
    samples.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t sections = r.u32();
        VideoSample v;
        bool have[8] = {};
        for (uint32_t k = 0; k < sections; ++k) {
            std::string name;
            Section s = read_section(r, &name);
            if (name == "frames") { v.frames = std::move(s.f32); have[0] = true; }
            else if (name == "tracks") { v.tracks = std::move(s.f32); have[1] = true; }
            else if (name == "visibility") { v.visibility = std::move(s.u8); have[2] = true; }
            else if (name == "in_scene") { v.in_scene = std::move(s.u8); have[3] = true; }
            else if (name == "depth") { v.depth = std::move(s.f32); have[4] = true; }
            else if (name == "depth_mask") { v.depth_mask = std::move(s.u8); have[5] = true; }
            else if (name == "boxes") { v.boxes = std::move(s.f32); have[6] = true; }
            else if (name == "box_present") { v.box_present = std::move(s.u8); have[7] = true; }
            else fail("dataset: unknown section '" + name + "' in " + path);
        }
        for (bool h : have) require(h, "dataset: sample " + std::to_string(i) + " is missing sections");
        require(v.frames.rank() == 4 && v.frames.dim(3) == 3, "dataset: frames must be [T,H,W,3]");
        v.frames_count = v.frames.dim(0);
        v.height = v.frames.dim(1);
        v.width = v.frames.dim(2);
        require(v.tracks.rank() == 3 && v.tracks.dim(1) == v.frames_count && v.tracks.dim(2) == 2,
                "dataset: tracks must be [N,T,2]");
        v.num_points = v.tracks.dim(0);
        require(v.boxes.rank() == 3 && v.boxes.dim(1) == v.frames_count && v.boxes.dim(2) == 4,
                "dataset: boxes must be [M,T,4]");
        v.num_boxes = v.boxes.dim(0);
        samples.push_back(std::move(v));
    }
    return samples;
}

}  // namespace moog
