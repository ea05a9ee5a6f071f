// moog: train, evaluate and poke at off-the-grid video models on synthetic
// sprite data. Every subcommand shares one flat config key space; see
// `moog train --help` and the README for the key list.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "moog/analysis.hpp"
#include "moog/harness.hpp"
#include "moog/serial.hpp"

namespace {

using namespace moog;

struct GlobalArgs {
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_set = false;
    std::vector<std::string> sets;

    RunConfig make_config() const {
        RunConfig cfg = RunConfig::load(config_path, sets);
        if (seed_set) cfg.seed = seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        return cfg;
    }
};

std::pair<ParamSetF, Checkpoint> load_model(const RunConfig& cfg) {
    require(!cfg.eval_checkpoint.empty(), "set eval.checkpoint to the checkpoint to load");
    Checkpoint ckpt = load_checkpoint(cfg.eval_checkpoint);
    check_checkpoint_compat(ckpt, cfg);
    ParamSetF params = build_params(cfg);
    load_into(ckpt, params, nullptr, true);
    return {std::move(params), std::move(ckpt)};
}

std::vector<VideoSample> load_eval_data(const RunConfig& cfg) {
    const std::string& path = cfg.eval_path.empty() ? cfg.data_path : cfg.eval_path;
    require(!path.empty(), "set data.eval_path (or data.path) to a dataset file");
    auto data = read_dataset(path);
    require(!data.empty(), "dataset is empty: " + path);
    if (cfg.eval_samples > 0 && static_cast<int>(data.size()) > cfg.eval_samples)
        data.resize(static_cast<size_t>(cfg.eval_samples));
    return data;
}

int cmd_gen_data(const GlobalArgs& g) {
    RunConfig cfg = g.make_config();
    cfg.scene.validate();
    std::filesystem::create_directories(cfg.out_dir);
    RngState root = RngState::from_seed(cfg.seed).child("gen");
    std::vector<VideoSample> samples;
    samples.reserve(static_cast<size_t>(cfg.gen_samples));
    for (int i = 0; i < cfg.gen_samples; ++i)
        samples.push_back(gen_scene(cfg.scene, root.child_index(static_cast<uint64_t>(i)).seed));
    std::string path = cfg.out_dir + "/dataset.moogds";
    write_dataset(samples, path);
    std::cout << "wrote " << samples.size() << " samples (" << cfg.scene.frames << "x" << cfg.scene.height << "x"
              << cfg.scene.width << ", " << cfg.scene.points << " points) to " << path << "\n";
    return 0;
}

int cmd_train(const GlobalArgs& g) {
    RunConfig cfg = g.make_config();
    TrainResult result = train(cfg, [](const std::string& line) { std::cout << line << std::endl; });
    std::cout << "done: " << result.steps_per_sec << " steps/s, final checkpoint at " << cfg.out_dir
              << "/final.moogckpt\n";
    return 0;
}

int cmd_eval(const GlobalArgs& g) {
    RunConfig cfg = g.make_config();
    auto [params, ckpt] = load_model(cfg);
    auto data = load_eval_data(cfg);
    MetricReport rep = evaluate(cfg, params, data);
    std::string json = rep.to_json();
    std::cout << json << "\n";
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        write_file_bytes(cfg.out_dir + "/report.json", std::vector<uint8_t>(json.begin(), json.end()));
    }
    return 0;
}

int cmd_rollout(const GlobalArgs& g) {
    RunConfig cfg = g.make_config();
    auto [params, ckpt] = load_model(cfg);
    auto data = load_eval_data(cfg);
    require(cfg.rollout_sample >= 0 && cfg.rollout_sample < static_cast<int>(data.size()),
            "rollout.sample out of range");
    const VideoSample& sample = data[static_cast<size_t>(cfg.rollout_sample)];

    RolloutOptions opts;
    opts.t_out = std::min(cfg.rollout_frames, sample.frames_count);
    opts.k_override = cfg.rollout_tokens;
    opts.want_attention = false;
    RolloutResult roll = rollout(cfg, params, sample, opts);

    std::filesystem::create_directories(cfg.out_dir);
    write_sequence(roll.predictions, cfg.out_dir + "/pred");
    std::vector<TensorF> gt;
    for (int t = 0; t < opts.t_out; ++t) {
        TensorF f({sample.height, sample.width, 3});
        int64_t n = f.size();
        std::copy_n(sample.frames.data.begin() + static_cast<int64_t>(t) * n, n, f.data.begin());
        gt.push_back(std::move(f));
    }
    write_sequence(gt, cfg.out_dir + "/gt");

    // latent states, reusable by the pca/viz tooling
    Checkpoint states;
    states.step = ckpt.step;
    states.config_blob = ckpt.config_blob;
    for (size_t t = 0; t < roll.state_primary.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "state.t%04zu.", t);
        states.tensors.emplace(std::string(name) + "primary", roll.state_primary[t]);
        if (roll.state_corrected.size() > t && roll.state_corrected[t].size() > 0)
            states.tensors.emplace(std::string(name) + "corrected", roll.state_corrected[t]);
    }
    save_checkpoint(cfg.out_dir + "/states.moogckpt", states);

    nlohmann::ordered_json rep;
    rep["frames"] = opts.t_out;
    rep["tokens"] = opts.k_override > 0 ? opts.k_override : cfg.model().tokens;
    rep["psnr_per_frame"] = roll.psnr_db;
    double mean = 0;
    for (double p : roll.psnr_db) mean += p;
    if (!roll.psnr_db.empty()) rep["psnr_db"] = mean / static_cast<double>(roll.psnr_db.size());
    std::string json = rep.dump(2);
    std::cout << json << "\n";
    write_file_bytes(cfg.out_dir + "/report.json", std::vector<uint8_t>(json.begin(), json.end()));
    return 0;
}

int cmd_viz_attn(const GlobalArgs& g) {
    RunConfig cfg = g.make_config();
    auto [params, ckpt] = load_model(cfg);
    auto data = load_eval_data(cfg);
    require(cfg.rollout_sample >= 0 && cfg.rollout_sample < static_cast<int>(data.size()),
            "rollout.sample out of range");
    const VideoSample& sample = data[static_cast<size_t>(cfg.rollout_sample)];

    RolloutOptions opts;
    opts.t_out = std::min(cfg.rollout_frames, sample.frames_count);
    opts.k_override = cfg.rollout_tokens;
    opts.want_attention = true;
    opts.decode_state_tokens = cfg.variant_enum() == Variant::grid_recurrent;
    RolloutResult roll = rollout(cfg, params, sample, opts);

    std::filesystem::create_directories(cfg.out_dir);
    std::vector<TensorF> maps;
    for (int t = 0; t < opts.t_out; ++t) {
        AttentionMap att = token_attention(roll.attention[static_cast<size_t>(t)], cfg.model().height,
                                           cfg.model().width);
        maps.push_back(argmax_token_map(att, cfg.seed));
    }
    write_sequence(maps, cfg.out_dir + "/attn");
    write_sequence(roll.predictions, cfg.out_dir + "/pred");
    std::cout << "wrote " << maps.size() << " argmax token maps to " << cfg.out_dir << "/attn\n";
    return 0;
}

std::vector<int> parse_components(const std::string& text) {
    std::vector<int> out;
    size_t start = 0;
    while (start <= text.size()) {
        size_t comma = text.find(',', start);
        if (comma == std::string::npos) comma = text.size();
        if (comma > start) out.push_back(std::stoi(text.substr(start, comma - start)));
        start = comma + 1;
    }
    require(out.size() == 3, "pca.components must name exactly three components, e.g. 0,1,2");
    return out;
}

int cmd_pca(const GlobalArgs& g) {
    RunConfig cfg = g.make_config();
    auto [params, ckpt] = load_model(cfg);
    auto data = load_eval_data(cfg);

    // gather predicted-state tokens across a batch of rollouts
    int sequences = std::min<int>(cfg.pca_sequences, static_cast<int>(data.size()));
    require(sequences > 0, "pca needs at least one sequence");
    std::vector<TensorF> per_frame_tokens;
    std::vector<std::vector<TensorF>> attn_per_frame;
    size_t viz_token_base = 0;  // index of the viz sample's first frame in per_frame_tokens
    int K = 0, D = cfg.model().dim;
    int64_t rows = 0;
    for (int s = 0; s < sequences; ++s) {
        RolloutOptions opts;
        opts.t_out = std::min(cfg.pca_frames, data[static_cast<size_t>(s)].frames_count);
        opts.want_attention = s == cfg.rollout_sample;
        opts.state_seed = static_cast<uint64_t>(s) + 1;
        if (opts.want_attention) viz_token_base = per_frame_tokens.size();
        RolloutResult roll = rollout(cfg, params, data[static_cast<size_t>(s)], opts);
        for (auto& st : roll.state_primary) {
            K = st.dim(0);
            rows += K;
            per_frame_tokens.push_back(st);
        }
        if (opts.want_attention) attn_per_frame = std::move(roll.attention);
    }
    TensorF all({static_cast<int>(rows), D});
    int64_t off = 0;
    for (const auto& st : per_frame_tokens) {
        std::copy(st.data.begin(), st.data.end(), all.data.begin() + off);
        off += st.size();
    }

    int n = std::min(64, D);
    PcaModel model = fit_pca(all, n);
    std::filesystem::create_directories(cfg.out_dir);
    Checkpoint out;
    out.step = ckpt.step;
    out.config_blob = ckpt.config_blob;
    out.tensors.emplace("pca.mean", model.mean);
    out.tensors.emplace("pca.components", model.components);
    out.tensors.emplace("pca.variance_share", model.variance_share);
    save_checkpoint(cfg.out_dir + "/pca.moogckpt", out);

    // component images for the chosen sample, normalized over the whole batch
    auto comps = parse_components(cfg.pca_components);
    int comp3[3] = {comps[0], comps[1], comps[2]};
    TensorF all_proj = pca_project(model, all);
    ComponentRange range = projection_range(all_proj, comp3);
    std::vector<TensorF> images;
    for (size_t t = 0; t < attn_per_frame.size(); ++t) {
        AttentionMap att = token_attention(attn_per_frame[t], cfg.model().height, cfg.model().width);
        const TensorF& tokens = per_frame_tokens[viz_token_base + t];
        images.push_back(pca_component_image(att, pca_project(model, tokens), comp3, range));
    }
    if (!images.empty()) write_sequence(images, cfg.out_dir + "/pca");
    std::cout << "pca model (" << n << " components, top share " << model.variance_share[0] << ") at " << cfg.out_dir
              << "/pca.moogckpt; " << images.size() << " component images\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"off-the-grid recurrent video representation models on synthetic sprite videos"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "JSON config file with dotted keys")->check(CLI::ExistingFile);
    app.add_option("--out", g.out_dir, "output directory (overrides out.dir)");
    auto* seed_opt = app.add_option("--seed", g.seed, "RNG seed (overrides the config)");
    app.add_option("--set", g.sets, "override any config key, e.g. --set steps=2000")->take_all();
    app.fallthrough();

    app.add_subcommand("gen-data", "generate a synthetic sprite dataset");
    app.add_subcommand("train", "train a model per the config");
    app.add_subcommand("eval", "score a checkpoint on a dataset");
    app.add_subcommand("rollout", "unroll a checkpoint and dump frames + states");
    app.add_subcommand("viz-attn", "write argmax token-attention maps");
    app.add_subcommand("pca", "fit token PCA and render component images");

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;

    try {
        if (app.got_subcommand("gen-data")) return cmd_gen_data(g);
        if (app.got_subcommand("train")) return cmd_train(g);
        if (app.got_subcommand("eval")) return cmd_eval(g);
        if (app.got_subcommand("rollout")) return cmd_rollout(g);
        if (app.got_subcommand("viz-attn")) return cmd_viz_attn(g);
        if (app.got_subcommand("pca")) return cmd_pca(g);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
