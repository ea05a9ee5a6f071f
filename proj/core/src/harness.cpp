#include "moog/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <thread>

#include "moog/analysis.hpp"
#include "moog/baselines.hpp"
#include "moog/optim.hpp"
#include "moog/readouts.hpp"
#include "moog/serial.hpp"

namespace moog {

namespace {

struct Bundle {
    Variant variant = Variant::moog;
    ModelConfig mc;
    BaselineConfig bc;
    ReadoutCfg rc;
    bool rgb = true, depth = false, points = false, boxes = false;
};

Bundle make_bundle(const RunConfig& cfg) {
    Bundle b;
    b.variant = cfg.variant_enum();
    b.mc = cfg.model();
    b.bc = cfg.baseline();
    b.rc = cfg.readout_cfg();
    b.rgb = cfg.has_readout("rgb");
    b.depth = cfg.has_readout("depth");
    b.points = cfg.has_readout("points");
    b.boxes = cfg.has_readout("boxes");
    return b;
}

TensorF frame_at(const VideoSample& s, int t) {
    TensorF f({s.height, s.width, 3});
    int64_t n = static_cast<int64_t>(s.height) * s.width * 3;
    std::copy_n(s.frames.data.begin() + static_cast<int64_t>(t) * n, n, f.data.begin());
    return f;
}

// [N,1] gt depth plus validity at the decoded pixel indices of one frame
void depth_targets(const VideoSample& s, int t, const std::vector<int64_t>& pixel_index, TensorF* gt,
                   std::vector<uint8_t>* mask) {
    *gt = TensorF({static_cast<int>(pixel_index.size()), 1});
    mask->resize(pixel_index.size());
    int64_t base = static_cast<int64_t>(t) * s.height * s.width;
    for (size_t i = 0; i < pixel_index.size(); ++i) {
        (*gt)[static_cast<int64_t>(i)] = s.depth[base + pixel_index[i]];
        (*mask)[i] = s.depth_mask[static_cast<size_t>(base + pixel_index[i])];
    }
}

// ---- training-time forward graphs ----

struct BackboneOut {
    std::optional<Var> ssl;
    std::vector<Var> tokens;  // per frame, readout keys/values
};

BackboneOut backbone_forward(Ctx<float>& ctx, const Bundle& b, const std::vector<TensorF>& frames, RngState rng) {
    auto& tape = ctx.tape;
    BackboneOut out;
    if (b.variant == Variant::moog) {
        auto roll = moog_unroll<float>(ctx, b.mc, frames, b.mc.tokens, rng);
        out.ssl = roll.total_loss;
        for (auto& st : roll.steps) out.tokens.push_back(tape.concat_rows({st.z_c, st.z_p}));
        return out;
    }
    // on-the-grid baselines auto-encode each frame through the shared decoder
    RngState grid_rng = rng.child("grids");
    Var state;
    Var sum;
    for (size_t t = 0; t < frames.size(); ++t) {
        Var enc = grid_encode(ctx, b.bc, frames[t]);
        auto grid = subsample_grid<float>(b.mc.height, b.mc.width, b.mc.decode_stride, grid_rng);
        auto dec = decode_tokens(ctx, b.mc, enc, grid.coords, false);
        Var target = tape.constant(sample_frame(frames[t], grid.pixel_index));
        Var diff = tape.sub(dec.pixels, target);
        Var loss_t = tape.mean_all(tape.mul(diff, diff));
        sum = t == 0 ? loss_t : tape.add(sum, loss_t);
        if (b.variant == Variant::grid_recurrent) {
            state = grid_rec_step(ctx, b.bc, t == 0 ? enc : state, enc);
            out.tokens.push_back(tape.concat_rows({state, enc}));
        } else {
            out.tokens.push_back(enc);
        }
    }
    if (b.rgb) out.ssl = tape.scale(sum, 1.0f / static_cast<float>(frames.size()));
    return out;
}

struct Window {
    const VideoSample* s = nullptr;
    int t0 = 0;
    int len = 0;
};

std::optional<Var> depth_term(Ctx<float>& ctx, const Bundle& b, const std::vector<Var>& tokens, const Window& w,
                              RngState rng) {
    auto& tape = ctx.tape;
    Var sum;
    bool any = false;
    for (int t = 0; t < w.len; ++t) {
        auto grid = subsample_grid<float>(b.mc.height, b.mc.width, b.mc.decode_stride, rng);
        Var pred = grid_readout(ctx, b.rc, "readout.depth", tokens[static_cast<size_t>(t)], grid.coords);
        TensorF gt;
        std::vector<uint8_t> mask;
        depth_targets(*w.s, w.t0 + t, grid.pixel_index, &gt, &mask);
        Var l = depth_loss(ctx, pred, gt, mask);
        sum = any ? tape.add(sum, l) : l;
        any = true;
    }
    if (!any) return std::nullopt;
    return tape.scale(sum, 1.0f / static_cast<float>(w.len));
}

// indices of tracks usable as queries: visible and in-scene at the window start
std::vector<int> valid_queries(const VideoSample& s, int t0) {
    std::vector<int> idx;
    for (int n = 0; n < s.num_points; ++n) {
        auto i = static_cast<size_t>(s.track_idx(n, t0));
        if (s.visibility[i] && s.in_scene[i]) idx.push_back(n);
    }
    return idx;
}

std::optional<Var> point_term(Ctx<float>& ctx, const Bundle& b, const std::vector<Var>& tokens, const Window& w) {
    auto& tape = ctx.tape;
    std::vector<int> q = valid_queries(*w.s, w.t0);
    if (q.empty()) return std::nullopt;
    int N = static_cast<int>(q.size());
    TensorF queries({N, 2});
    for (int i = 0; i < N; ++i) {
        int64_t gi = w.s->track_idx(q[static_cast<size_t>(i)], w.t0);
        queries[static_cast<int64_t>(i) * 2] = w.s->tracks[gi * 2];
        queries[static_cast<int64_t>(i) * 2 + 1] = w.s->tracks[gi * 2 + 1];
    }
    Var y = init_track_latents(ctx, b.rc, "readout.points", queries);
    Var sum;
    for (int t = 0; t < w.len; ++t) {
        auto ts = track_step(ctx, b.rc, "readout.points", y, tokens[static_cast<size_t>(t)]);
        y = ts.next;
        auto heads = point_head(ctx, "readout.points.head", ts.corrected);
        PointFrameTarget<float> gt;
        gt.coords = TensorF({N, 2});
        gt.visible.resize(static_cast<size_t>(N));
        gt.in_scene.resize(static_cast<size_t>(N));
        for (int i = 0; i < N; ++i) {
            int64_t gi = w.s->track_idx(q[static_cast<size_t>(i)], w.t0 + t);
            gt.coords[static_cast<int64_t>(i) * 2] = w.s->tracks[gi * 2];
            gt.coords[static_cast<int64_t>(i) * 2 + 1] = w.s->tracks[gi * 2 + 1];
            gt.visible[static_cast<size_t>(i)] = w.s->visibility[static_cast<size_t>(gi)];
            gt.in_scene[static_cast<size_t>(i)] = w.s->in_scene[static_cast<size_t>(gi)];
        }
        Var l = point_loss_frame(ctx, heads, gt);
        sum = t == 0 ? l : tape.add(sum, l);
    }
    return tape.scale(sum, 1.0f / static_cast<float>(w.len));
}

std::optional<Var> box_term(Ctx<float>& ctx, const Bundle& b, const std::vector<Var>& tokens, const Window& w) {
    auto& tape = ctx.tape;
    std::vector<int> q;
    for (int m = 0; m < w.s->num_boxes; ++m)
        if (w.s->box_present[static_cast<size_t>(w.s->box_idx(m, w.t0))]) q.push_back(m);
    if (q.empty()) return std::nullopt;
    int N = static_cast<int>(q.size());
    TensorF queries({N, 4});
    for (int i = 0; i < N; ++i) {
        int64_t gi = w.s->box_idx(q[static_cast<size_t>(i)], w.t0);
        for (int c = 0; c < 4; ++c) queries[static_cast<int64_t>(i) * 4 + c] = w.s->boxes[gi * 4 + c];
    }
    Var y = init_track_latents(ctx, b.rc, "readout.boxes", queries);
    Var sum;
    for (int t = 0; t < w.len; ++t) {
        auto ts = track_step(ctx, b.rc, "readout.boxes", y, tokens[static_cast<size_t>(t)]);
        y = ts.next;
        Var pred = box_head(ctx, "readout.boxes.head", ts.corrected);
        TensorF gt({N, 4});
        std::vector<uint8_t> present(static_cast<size_t>(N));
        for (int i = 0; i < N; ++i) {
            int64_t gi = w.s->box_idx(q[static_cast<size_t>(i)], w.t0 + t);
            for (int c = 0; c < 4; ++c) gt[static_cast<int64_t>(i) * 4 + c] = w.s->boxes[gi * 4 + c];
            present[static_cast<size_t>(i)] = w.s->box_present[static_cast<size_t>(gi)];
        }
        Var l = box_loss(ctx, pred, gt, present);
        sum = t == 0 ? l : tape.add(sum, l);
    }
    return tape.scale(sum, 1.0f / static_cast<float>(w.len));
}

struct SampleLoss {
    Var total;
    std::map<std::string, double> terms;
};

SampleLoss sample_loss(Ctx<float>& ctx, const Bundle& b, const Window& w, RngState rng) {
    auto& tape = ctx.tape;
    std::vector<TensorF> frames;
    for (int t = 0; t < w.len; ++t) frames.push_back(frame_at(*w.s, w.t0 + t));
    BackboneOut bb = backbone_forward(ctx, b, frames, rng.child("backbone"));

    SampleLoss out;
    std::vector<std::pair<std::string, Var>> terms;
    if (b.rgb && bb.ssl) terms.emplace_back("rgb", *bb.ssl);
    if (b.depth)
        if (auto d = depth_term(ctx, b, bb.tokens, w, rng.child("depth"))) terms.emplace_back("depth", *d);
    if (b.points)
        if (auto p = point_term(ctx, b, bb.tokens, w)) terms.emplace_back("points", *p);
    if (b.boxes)
        if (auto x = box_term(ctx, b, bb.tokens, w)) terms.emplace_back("boxes", *x);
    require(!terms.empty(), "no loss terms enabled; check the readouts config");

    Var total = terms[0].second;
    for (size_t i = 1; i < terms.size(); ++i) total = tape.add(total, terms[i].second);
    out.total = total;
    for (auto& [name, var] : terms) out.terms[name] = tape.val(var)[0];
    return out;
}

std::string terms_to_string(const std::map<std::string, double>& terms) {
    std::string s;
    for (const auto& [k, v] : terms) s += (s.empty() ? "" : ", ") + k + "=" + std::to_string(v);
    return s;
}

}  // namespace

ParamSetF build_params(const RunConfig& cfg) {
    cfg.validate();
    Bundle b = make_bundle(cfg);
    ParamSetF ps;
    RngState rng = RngState::from_seed(cfg.seed).child("init");
    if (b.variant == Variant::moog)
        moog_init_params(ps, b.mc, rng);
    else
        baseline_init_params(ps, b.bc, rng);
    if (b.depth) grid_readout_init(ps, b.rc, "readout.depth", b.mc.dim, 1, rng.child("readout.depth"));
    if (b.points) {
        track_readout_init(ps, b.rc, "readout.points", b.mc.dim, 2, rng.child("readout.points"));
        point_head_init(ps, b.rc, "readout.points.head", rng.child("readout.points.head"));
    }
    if (b.boxes) {
        track_readout_init(ps, b.rc, "readout.boxes", b.mc.dim, 4, rng.child("readout.boxes"));
        box_head_init(ps, b.rc, "readout.boxes.head", rng.child("readout.boxes.head"));
    }
    if (cfg.frozen_backbone)
        for (auto& e : ps)
            if (e.name.rfind("readout.", 0) != 0) e.trainable = false;
    return ps;
}

Checkpoint make_checkpoint(const RunConfig& cfg, const ParamSetF& params, const OptStateF& opt, uint64_t step) {
    Checkpoint ckpt;
    ckpt.step = step;
    nlohmann::ordered_json blob;
    blob["config"] = nlohmann::ordered_json::parse(cfg.to_json());
    blob["rng"]["seed"] = std::to_string(cfg.seed);
    ckpt.config_blob = blob.dump();
    for (const auto& e : params) ckpt.tensors.emplace(e.name, e.tensor);
    for (const auto& e : opt.m) ckpt.tensors.emplace("opt.m." + e.name, e.tensor);
    for (const auto& e : opt.v) ckpt.tensors.emplace("opt.v." + e.name, e.tensor);
    return ckpt;
}

void load_into(const Checkpoint& ckpt, ParamSetF& params, OptStateF* opt, bool strict) {
    for (auto& e : params) {
        if (ckpt.tensors.contains(e.name)) {
            const TensorF& src = ckpt.tensors.at(e.name);
            require(src.shape == e.tensor.shape, "checkpoint tensor " + e.name + " has shape " +
                                                     shape_str(src.shape) + ", expected " + shape_str(e.tensor.shape));
            e.tensor = src;
        } else if (strict) {
            fail("checkpoint is missing tensor: " + e.name);
        }
    }
    if (opt) {
        for (auto& e : opt->m) {
            std::string key = "opt.m." + e.name;
            if (ckpt.tensors.contains(key)) e.tensor = ckpt.tensors.at(key);
            else if (strict) fail("checkpoint is missing tensor: " + key);
        }
        for (auto& e : opt->v) {
            std::string key = "opt.v." + e.name;
            if (ckpt.tensors.contains(key)) e.tensor = ckpt.tensors.at(key);
            else if (strict) fail("checkpoint is missing tensor: " + key);
        }
        opt->step = static_cast<int64_t>(ckpt.step);
    }
}

void check_checkpoint_compat(const Checkpoint& ckpt, const RunConfig& cfg) {
    nlohmann::json blob;
    try {
        blob = nlohmann::json::parse(ckpt.config_blob);
    } catch (const nlohmann::json::parse_error&) {
        fail("checkpoint carries an unreadable config blob");
    }
    std::string profile = blob.value("/config/profile"_json_pointer, std::string());
    std::string variant = blob.value("/config/model.variant"_json_pointer, std::string());
    require(profile == cfg.profile, "checkpoint was trained with profile '" + profile + "' but the config says '" +
                                        cfg.profile + "'");
    require(variant == cfg.variant, "checkpoint was trained with variant '" + variant + "' but the config says '" +
                                        cfg.variant + "'");
}

TrainResult train(const RunConfig& cfg, const std::function<void(const std::string&)>& log_sink) {
    cfg.validate();
    require(!cfg.data_path.empty(), "train: data.path is required");
    std::vector<VideoSample> data = read_dataset(cfg.data_path);
    require(!data.empty(), "train: dataset is empty: " + cfg.data_path);
    std::vector<VideoSample> eval_set;
    if (!cfg.eval_path.empty()) eval_set = read_dataset(cfg.eval_path);

    Bundle bundle = make_bundle(cfg);
    for (const auto& s : data) {
        require(s.height == bundle.mc.height && s.width == bundle.mc.width,
                "train: dataset frames are " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                    " but the model expects " + std::to_string(bundle.mc.height) + "x" +
                    std::to_string(bundle.mc.width));
        require(s.frames_count >= cfg.unroll_len, "train: sample shorter than the unroll length");
    }

    ParamSetF params = build_params(cfg);
    OptStateF opt = OptStateF::init_like(params);
    uint64_t start_step = 0;
    if (!cfg.init_checkpoint.empty()) {
        Checkpoint ckpt = load_checkpoint(cfg.init_checkpoint);
        if (cfg.init_mode == "resume") {
            load_into(ckpt, params, &opt, true);
            start_step = ckpt.step;
            require(start_step < static_cast<uint64_t>(cfg.steps),
                    "train: checkpoint step " + std::to_string(start_step) + " is past steps=" +
                        std::to_string(cfg.steps));
        } else {
            load_into(ckpt, params, nullptr, false);
        }
    }

    RngState root = RngState::from_seed(cfg.seed);
    int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, cfg.batch_size));

    TrainResult result;
    if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);
    auto t_begin = std::chrono::steady_clock::now();

    for (int64_t step = static_cast<int64_t>(start_step); step < cfg.steps; ++step) {
        std::vector<ParamSetF> grads(static_cast<size_t>(cfg.batch_size));
        std::vector<std::map<std::string, double>> terms(static_cast<size_t>(cfg.batch_size));
        std::vector<std::exception_ptr> errors(static_cast<size_t>(cfg.batch_size));

        auto worker = [&](int tid) {
            for (int b = tid; b < cfg.batch_size; b += threads) {
                try {
                    RngState r = root.child("data").child_index(static_cast<uint64_t>(step)).child_index(
                        static_cast<uint64_t>(b));
                    const VideoSample* s = &data[r.next_below(data.size())];
                    VideoSample cropped;
                    if (cfg.aug_random_crop) {
                        RngState cr = r.child("crop");
                        cropped = random_crop(*s, cr, bundle.mc.height, bundle.mc.width);
                        s = &cropped;
                    }
                    int t0 = static_cast<int>(r.next_below(static_cast<uint64_t>(s->frames_count - cfg.unroll_len + 1)));
                    Tape<float> tape;
                    Ctx<float> ctx(tape, params, true);
                    SampleLoss sl = sample_loss(ctx, bundle, Window{s, t0, cfg.unroll_len}, r.child("fwd"));
                    double total = tape.val(sl.total)[0];
                    if (!std::isfinite(total))
                        fail("training diverged at step " + std::to_string(step) + ": " + terms_to_string(sl.terms));
                    tape.backward(sl.total);
                    grads[static_cast<size_t>(b)] = ctx.collect_grads(params);
                    terms[static_cast<size_t>(b)] = sl.terms;
                } catch (...) {
                    errors[static_cast<size_t>(b)] = std::current_exception();
                }
            }
        };
        if (threads == 1) {
            worker(0);
        } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
            for (auto& th : pool) th.join();
        }
        for (auto& err : errors)
            if (err) std::rethrow_exception(err);

        // average gradients and loss terms over the batch, in batch order
        ParamSetF grad = std::move(grads[0]);
        for (int b = 1; b < cfg.batch_size; ++b)
            for (auto& e : grad) {
                const TensorF& g = grads[static_cast<size_t>(b)].at(e.name);
                for (int64_t i = 0; i < e.tensor.size(); ++i) e.tensor[i] += g[i];
            }
        float inv_batch = 1.0f / static_cast<float>(cfg.batch_size);
        for (auto& e : grad)
            for (auto& v : e.tensor.data) v *= inv_batch;
        std::map<std::string, double> mean_terms;
        for (int b = 0; b < cfg.batch_size; ++b)
            for (auto& [k, v] : terms[static_cast<size_t>(b)]) mean_terms[k] += v / cfg.batch_size;
        double total = 0;
        for (auto& [k, v] : mean_terms) total += v;

        double grad_norm = global_norm(grad);
        clip_global_norm(grad, cfg.opt.clip_norm);
        double lr = cosine_schedule(step + 1, cfg.opt.warmup_steps, cfg.opt.peak_lr, cfg.opt.end_lr, cfg.steps);
        adam_nesterov_update(params, grad, opt, lr, cfg.opt.beta1, cfg.opt.beta2, cfg.opt.eps);

        bool last = step + 1 == cfg.steps;
        if (step == static_cast<int64_t>(start_step) || last || (step + 1) % std::max(1, cfg.log_every) == 0) {
            nlohmann::ordered_json line;
            line["step"] = step + 1;
            line["lr"] = lr;
            line["loss"] = total;
            line["grad_norm"] = grad_norm;
            for (auto& [k, v] : mean_terms) line["loss_" + k] = v;
            result.log_lines.push_back(line.dump());
            if (log_sink) log_sink(result.log_lines.back());
            if (result.first_terms.empty()) result.first_terms = mean_terms;
            result.final_terms = mean_terms;
        }
        if (cfg.eval_every > 0 && !eval_set.empty() && ((step + 1) % cfg.eval_every == 0 || last)) {
            MetricReport rep = evaluate(cfg, params, eval_set);
            nlohmann::ordered_json line;
            line["step"] = step + 1;
            for (auto& [k, v] : rep.metrics) line[k] = v.value;
            result.log_lines.push_back(line.dump());
            if (log_sink) log_sink(result.log_lines.back());
        }
        if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && !last)
            save_checkpoint(cfg.out_dir + "/ckpt_" + std::to_string(step + 1) + ".moogckpt",
                            make_checkpoint(cfg, params, opt, static_cast<uint64_t>(step + 1)));
    }

    auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
    result.steps_per_sec = dt > 0 ? static_cast<double>(cfg.steps - static_cast<int64_t>(start_step)) / dt : 0;
    result.checkpoint = make_checkpoint(cfg, params, opt, static_cast<uint64_t>(cfg.steps));
    if (!cfg.out_dir.empty()) {
        save_checkpoint(cfg.out_dir + "/final.moogckpt", result.checkpoint);
        std::string log;
        for (const auto& l : result.log_lines) log += l + "\n";
        write_file_bytes(cfg.out_dir + "/log.jsonl", std::vector<uint8_t>(log.begin(), log.end()));
    }
    return result;
}

// ---- inference ----

namespace {

// carries latent state across frames with one fresh tape per frame
struct InferCore {
    const Bundle& b;
    const ParamSetF& params;
    TensorF moog_z_c;
    TensorF rec_state;
    bool first = true;

    struct FrameOut {
        TensorF tokens;      // readout keys/values
        TensorF pred;        // [N,3] decoded pixels (when requested)
        std::vector<TensorF> attn;
        TensorF state_primary;    // moog z_p / baseline encoder tokens
        TensorF state_corrected;  // moog z_c / grid-rec corrected state
    };

    FrameOut step(const TensorF& frame, const TensorF* decode_coords, bool want_attn, bool decode_state) {
        Tape<float> tape;
        Ctx<float> ctx(tape, params, false);
        FrameOut out;
        if (b.variant == Variant::moog) {
            Var z_c_prev = tape.constant(moog_z_c);
            Var z_p = predictor_step(ctx, b.mc, z_c_prev);
            if (decode_coords) {
                auto dec = decode_pixels(ctx, b.mc, z_p, *decode_coords, want_attn);
                out.pred = tape.val(dec.pixels);
                out.attn = std::move(dec.attn);
            }
            Var feat = encode_frame(ctx, b.mc, frame);
            Var z_c = corrector_step(ctx, b.mc, z_p, feat);
            out.state_primary = tape.val(z_p);
            out.state_corrected = tape.val(z_c);
            moog_z_c = out.state_corrected;
            Var tokens = tape.concat_rows({z_c, z_p});
            out.tokens = tape.val(tokens);
            return out;
        }
        Var enc = grid_encode(ctx, b.bc, frame);
        Var decode_src = enc;
        if (b.variant == Variant::grid_recurrent) {
            Var prev = first ? enc : tape.constant(rec_state);
            Var state = grid_rec_step(ctx, b.bc, prev, enc);
            rec_state = tape.val(state);
            out.state_corrected = rec_state;
            if (decode_state) decode_src = state;
            Var tokens = tape.concat_rows({state, enc});
            out.tokens = tape.val(tokens);
        } else {
            out.tokens = tape.val(enc);
        }
        if (decode_coords) {
            auto dec = decode_tokens(ctx, b.mc, decode_src, *decode_coords, want_attn);
            out.pred = tape.val(dec.pixels);
            out.attn = std::move(dec.attn);
        }
        out.state_primary = tape.val(enc);
        first = false;
        return out;
    }
};

TensorF reshape_image(const TensorF& flat, int H, int W) { return TensorF({H, W, 3}, flat.data); }

}  // namespace

RolloutResult rollout(const RunConfig& cfg, const ParamSetF& params, const VideoSample& sample,
                      const RolloutOptions& opts) {
    Bundle b = make_bundle(cfg);
    require(opts.t_out >= 1, "rollout: need at least one frame");
    require(sample.frames_count >= opts.t_out,
            "rollout: sequence has " + std::to_string(sample.frames_count) + " frames, requested " +
                std::to_string(opts.t_out));
    require(sample.height == b.mc.height && sample.width == b.mc.width, "rollout: frame size mismatch");

    InferCore core{b, params};
    if (b.variant == Variant::moog) {
        int K = opts.k_override > 0 ? opts.k_override : b.mc.tokens;
        core.moog_z_c = opts.initial_state
                            ? *opts.initial_state
                            : init_state<float>(b.mc, K, RngState::from_seed(cfg.seed ^ opts.state_seed).child("state")).z_c;
    } else {
        require(opts.k_override == 0, "rollout: token count is fixed by the grid for baseline variants");
        if (opts.initial_state) {
            core.rec_state = *opts.initial_state;
            core.first = false;
        }
    }

    TensorF coords = full_grid_coords<float>(b.mc.height, b.mc.width);
    RolloutResult out;
    for (int t = 0; t < opts.t_out; ++t) {
        TensorF frame = frame_at(sample, t);
        auto fo = core.step(frame, &coords, opts.want_attention, opts.decode_state_tokens);
        out.predictions.push_back(reshape_image(fo.pred, b.mc.height, b.mc.width));
        if (opts.want_attention) out.attention.push_back(std::move(fo.attn));
        out.state_primary.push_back(std::move(fo.state_primary));
        out.state_corrected.push_back(std::move(fo.state_corrected));
        if (t >= 1) out.psnr_db.push_back(psnr(out.predictions.back(), frame));
    }
    return out;
}

MetricReport evaluate(const RunConfig& cfg, const ParamSetF& params, const std::vector<VideoSample>& eval_set) {
    Bundle b = make_bundle(cfg);
    require(!eval_set.empty(), "evaluate: empty eval set");

    MetricReport rep;
    rep.config_echo["profile"] = cfg.profile;
    rep.config_echo["variant"] = cfg.variant;
    rep.config_echo["aj_thresholds_px_at_256"] = "1,2,4,8,16";

    double psnr_sum = 0, copy_sum = 0;
    int64_t psnr_count = 0;
    double absrel_sum = 0, absrel_base_sum = 0;
    int64_t absrel_count = 0;
    double aj_sum = 0, aj_static_sum = 0;
    int64_t aj_count = 0;
    double iou_sum = 0, iou_copy_sum = 0;
    int64_t iou_count = 0;

    // median of all valid gt depths, for the constant-prediction reference
    std::vector<float> depth_pool;
    if (b.depth) {
        for (const auto& s : eval_set)
            for (int64_t i = 0; i < s.depth.size(); ++i)
                if (s.depth_mask[static_cast<size_t>(i)]) depth_pool.push_back(s.depth[i]);
        std::sort(depth_pool.begin(), depth_pool.end());
    }
    double depth_median = depth_pool.empty() ? 0.0 : depth_pool[depth_pool.size() / 2];

    TensorF coords = full_grid_coords<float>(b.mc.height, b.mc.width);

    for (size_t si = 0; si < eval_set.size(); ++si) {
        const VideoSample& s = eval_set[si];
        require(s.height == b.mc.height && s.width == b.mc.width, "evaluate: frame size mismatch");
        const int T = s.frames_count;

        InferCore core{b, params};
        if (b.variant == Variant::moog)
            core.moog_z_c =
                init_state<float>(b.mc, b.mc.tokens, RngState::from_seed(cfg.seed).child("eval").child_index(si)).z_c;

        std::vector<int> pq = b.points ? valid_queries(s, 0) : std::vector<int>{};
        std::vector<int> bq;
        if (b.boxes)
            for (int m = 0; m < s.num_boxes; ++m)
                if (s.box_present[static_cast<size_t>(s.box_idx(m, 0))]) bq.push_back(m);

        PointPrediction ppred;
        PointGroundTruth pgt;
        if (b.points && !pq.empty()) {
            ppred.num_points = s.num_points;
            ppred.num_frames = T;
            ppred.x.assign(static_cast<size_t>(s.num_points) * T, 0);
            ppred.y.assign(static_cast<size_t>(s.num_points) * T, 0);
            ppred.vis_logit.assign(static_cast<size_t>(s.num_points) * T, -1);
            ppred.cert_logit.assign(static_cast<size_t>(s.num_points) * T, -1);
            pgt.num_points = s.num_points;
            pgt.num_frames = T;
            pgt.query_mask.assign(static_cast<size_t>(s.num_points), 0);
            for (int n : pq) pgt.query_mask[static_cast<size_t>(n)] = 1;
            for (int n = 0; n < s.num_points; ++n)
                for (int t = 0; t < T; ++t) {
                    int64_t i = s.track_idx(n, t);
                    pgt.x.push_back(s.tracks[i * 2]);
                    pgt.y.push_back(s.tracks[i * 2 + 1]);
                    pgt.visible.push_back(s.visibility[static_cast<size_t>(i)] && s.in_scene[static_cast<size_t>(i)]);
                }
        }
        BoxSequence bpred, bgt;
        if (b.boxes && !bq.empty()) {
            bpred.num_boxes = bgt.num_boxes = s.num_boxes;
            bpred.num_frames = bgt.num_frames = T;
            bpred.ymin.assign(static_cast<size_t>(s.num_boxes) * T, 0);
            bpred.xmin.assign(static_cast<size_t>(s.num_boxes) * T, 0);
            bpred.ymax.assign(static_cast<size_t>(s.num_boxes) * T, 0);
            bpred.xmax.assign(static_cast<size_t>(s.num_boxes) * T, 0);
            bpred.present.assign(static_cast<size_t>(s.num_boxes) * T, 1);
            for (int m = 0; m < s.num_boxes; ++m)
                for (int t = 0; t < T; ++t) {
                    int64_t i = s.box_idx(m, t);
                    bgt.ymin.push_back(s.boxes[i * 4 + 0]);
                    bgt.xmin.push_back(s.boxes[i * 4 + 1]);
                    bgt.ymax.push_back(s.boxes[i * 4 + 2]);
                    bgt.xmax.push_back(s.boxes[i * 4 + 3]);
                    // only boxes queried at frame 0 are evaluated
                    bool evaluable = std::find(bq.begin(), bq.end(), m) != bq.end();
                    bgt.present.push_back(evaluable && s.box_present[static_cast<size_t>(i)] ? 1 : 0);
                }
        }

        // track latents carried between frames as plain tensors
        TensorF point_latents, box_latents;
        if (b.points && !pq.empty()) {
            Tape<float> tape;
            Ctx<float> ctx(tape, params, false);
            TensorF queries({static_cast<int>(pq.size()), 2});
            for (size_t i = 0; i < pq.size(); ++i) {
                int64_t gi = s.track_idx(pq[i], 0);
                queries[static_cast<int64_t>(i) * 2] = s.tracks[gi * 2];
                queries[static_cast<int64_t>(i) * 2 + 1] = s.tracks[gi * 2 + 1];
            }
            point_latents = tape.val(init_track_latents(ctx, b.rc, "readout.points", queries));
        }
        if (b.boxes && !bq.empty()) {
            Tape<float> tape;
            Ctx<float> ctx(tape, params, false);
            TensorF queries({static_cast<int>(bq.size()), 4});
            for (size_t i = 0; i < bq.size(); ++i) {
                int64_t gi = s.box_idx(bq[i], 0);
                for (int c = 0; c < 4; ++c) queries[static_cast<int64_t>(i) * 4 + c] = s.boxes[gi * 4 + c];
            }
            box_latents = tape.val(init_track_latents(ctx, b.rc, "readout.boxes", queries));
        }

        for (int t = 0; t < T; ++t) {
            TensorF frame = frame_at(s, t);
            bool want_pred = b.rgb && t >= 1;
            auto fo = core.step(frame, want_pred ? &coords : nullptr, false, false);

            if (want_pred) {
                TensorF pred = reshape_image(fo.pred, b.mc.height, b.mc.width);
                psnr_sum += psnr(pred, frame);
                copy_sum += psnr(frame_at(s, t - 1), frame);
                ++psnr_count;
            }

            if (b.depth && t >= 1) {
                Tape<float> tape;
                Ctx<float> ctx(tape, params, false);
                Var pred = grid_readout(ctx, b.rc, "readout.depth", tape.constant(fo.tokens), coords);
                const TensorF& pv = tape.val(pred);
                int64_t base = static_cast<int64_t>(t) * s.height * s.width;
                for (int64_t i = 0; i < static_cast<int64_t>(s.height) * s.width; ++i) {
                    if (!s.depth_mask[static_cast<size_t>(base + i)]) continue;
                    double g = s.depth[base + i];
                    absrel_sum += std::abs(static_cast<double>(pv[i]) - g) / g;
                    absrel_base_sum += std::abs(depth_median - g) / g;
                    ++absrel_count;
                }
            }

            if (b.points && !pq.empty()) {
                Tape<float> tape;
                Ctx<float> ctx(tape, params, false);
                auto ts = track_step(ctx, b.rc, "readout.points", tape.constant(point_latents),
                                     tape.constant(fo.tokens));
                point_latents = tape.val(ts.next);
                auto heads = point_head(ctx, "readout.points.head", ts.corrected);
                const TensorF& pc = tape.val(heads.coords);
                const TensorF& pv = tape.val(heads.vis);
                const TensorF& pcert = tape.val(heads.cert);
                for (size_t i = 0; i < pq.size(); ++i) {
                    auto gi = static_cast<size_t>(s.track_idx(pq[i], t));
                    ppred.x[gi] = pc[static_cast<int64_t>(i) * 2];
                    ppred.y[gi] = pc[static_cast<int64_t>(i) * 2 + 1];
                    ppred.vis_logit[gi] = pv[static_cast<int64_t>(i)];
                    ppred.cert_logit[gi] = pcert[static_cast<int64_t>(i)];
                }
            }

            if (b.boxes && !bq.empty()) {
                Tape<float> tape;
                Ctx<float> ctx(tape, params, false);
                auto ts = track_step(ctx, b.rc, "readout.boxes", tape.constant(box_latents),
                                     tape.constant(fo.tokens));
                box_latents = tape.val(ts.next);
                const TensorF& pb = tape.val(box_head(ctx, "readout.boxes.head", ts.corrected));
                for (size_t i = 0; i < bq.size(); ++i) {
                    auto gi = static_cast<size_t>(s.box_idx(bq[i], t));
                    double y0 = pb[static_cast<int64_t>(i) * 4 + 0], x0 = pb[static_cast<int64_t>(i) * 4 + 1];
                    double y1 = pb[static_cast<int64_t>(i) * 4 + 2], x1 = pb[static_cast<int64_t>(i) * 4 + 3];
                    bpred.ymin[gi] = std::min(y0, y1);
                    bpred.ymax[gi] = std::max(y0, y1);
                    bpred.xmin[gi] = std::min(x0, x1);
                    bpred.xmax[gi] = std::max(x0, x1);
                }
            }
        }

        if (b.points && !pq.empty()) {
            if (auto aj = average_jaccard(ppred, pgt)) {
                aj_sum += *aj;
                ++aj_count;
                // static reference: the query position, confidently visible, forever
                PointPrediction stat = ppred;
                for (int n : pq)
                    for (int t = 0; t < T; ++t) {
                        auto gi = static_cast<size_t>(s.track_idx(n, t));
                        auto q0 = static_cast<size_t>(s.track_idx(n, 0));
                        stat.x[gi] = s.tracks[static_cast<int64_t>(q0) * 2];
                        stat.y[gi] = s.tracks[static_cast<int64_t>(q0) * 2 + 1];
                        stat.vis_logit[gi] = 1;
                        stat.cert_logit[gi] = 1;
                    }
                aj_static_sum += average_jaccard(stat, pgt).value_or(0.0);
            }
        }
        if (b.boxes && !bq.empty()) {
            if (auto iou = mean_iou(bpred, bgt)) {
                iou_sum += *iou;
                ++iou_count;
                BoxSequence copy = bpred;
                for (int m : bq)
                    for (int t = 0; t < T; ++t) {
                        auto gi = static_cast<size_t>(s.box_idx(m, t));
                        auto g0 = static_cast<size_t>(s.box_idx(m, 0));
                        copy.ymin[gi] = bgt.ymin[g0];
                        copy.xmin[gi] = bgt.xmin[g0];
                        copy.ymax[gi] = bgt.ymax[g0];
                        copy.xmax[gi] = bgt.xmax[g0];
                    }
                iou_copy_sum += mean_iou(copy, bgt).value_or(0.0);
            }
        }
    }

    if (psnr_count > 0) {
        rep.set("psnr_db", psnr_sum / static_cast<double>(psnr_count), psnr_count);
        rep.set("baseline_copy_psnr_db", copy_sum / static_cast<double>(psnr_count), psnr_count);
    }
    if (absrel_count > 0) {
        rep.set("absrel", absrel_sum / static_cast<double>(absrel_count), absrel_count);
        rep.set("baseline_median_absrel", absrel_base_sum / static_cast<double>(absrel_count), absrel_count);
    }
    if (aj_count > 0) {
        rep.set("aj", aj_sum / static_cast<double>(aj_count), aj_count);
        rep.set("baseline_static_aj", aj_static_sum / static_cast<double>(aj_count), aj_count);
    }
    if (iou_count > 0) {
        rep.set("miou", iou_sum / static_cast<double>(iou_count), iou_count);
        rep.set("baseline_copy_miou", iou_copy_sum / static_cast<double>(iou_count), iou_count);
    }
    return rep;
}

}  // namespace moog
