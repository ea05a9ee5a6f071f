#include "moog/config.hpp"

#include <json.hpp>

#include "moog/serial.hpp"

namespace moog {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// flatten/expand between RunConfig and the dotted key space
ordered_json to_flat(const RunConfig& c) {
    ordered_json j;
    j["profile"] = c.profile;
    j["model.variant"] = c.variant;
    std::string r;
    for (const auto& s : c.readouts) r += (r.empty() ? "" : ",") + s;
    j["readouts"] = r;
    j["frozen_backbone"] = c.frozen_backbone;
    j["seed"] = c.seed;
    j["steps"] = c.steps;
    j["batch_size"] = c.batch_size;
    j["unroll_len"] = c.unroll_len;
    j["decode_stride"] = c.decode_stride;
    j["model.tokens"] = c.model_tokens;
    j["opt.peak_lr"] = c.opt.peak_lr;
    j["opt.end_lr"] = c.opt.end_lr;
    j["opt.warmup_steps"] = c.opt.warmup_steps;
    j["opt.beta1"] = c.opt.beta1;
    j["opt.beta2"] = c.opt.beta2;
    j["opt.eps"] = c.opt.eps;
    j["opt.clip_norm"] = c.opt.clip_norm;
    j["data.path"] = c.data_path;
    j["data.eval_path"] = c.eval_path;
    j["init.checkpoint"] = c.init_checkpoint;
    j["init.mode"] = c.init_mode;
    j["eval.checkpoint"] = c.eval_checkpoint;
    j["out.dir"] = c.out_dir;
    j["checkpoint.every"] = c.checkpoint_every;
    j["eval.every"] = c.eval_every;
    j["eval.samples"] = c.eval_samples;
    j["train.log_every"] = c.log_every;
    j["train.threads"] = c.threads;
    j["aug.random_crop"] = c.aug_random_crop;
    j["scene.height"] = c.scene.height;
    j["scene.width"] = c.scene.width;
    j["scene.sprites_min"] = c.scene.sprites_min;
    j["scene.sprites_max"] = c.scene.sprites_max;
    std::string shapes;
    if (c.scene.allow_disc) shapes += "disc";
    if (c.scene.allow_rect) shapes += std::string(shapes.empty() ? "" : ",") + "rect";
    j["scene.shapes"] = shapes;
    j["scene.speed_min"] = c.scene.speed_min;
    j["scene.speed_max"] = c.scene.speed_max;
    j["scene.camera_speed"] = c.scene.camera_speed;
    j["scene.bounce"] = c.scene.bounce;
    j["scene.background"] = c.scene.background == SceneConfig::Background::gradient ? "gradient" : "constant";
    j["scene.points"] = c.scene.points;
    j["scene.frames"] = c.scene.frames;
    j["gen.samples"] = c.gen_samples;
    j["rollout.frames"] = c.rollout_frames;
    j["rollout.tokens"] = c.rollout_tokens;
    j["rollout.sample"] = c.rollout_sample;
    j["pca.components"] = c.pca_components;
    j["pca.sequences"] = c.pca_sequences;
    j["pca.frames"] = c.pca_frames;
    return j;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= s.size()) {
        size_t comma = s.find(',', start);
        if (comma == std::string::npos) comma = s.size();
        std::string item = s.substr(start, comma - start);
        if (!item.empty()) out.push_back(item);
        start = comma + 1;
    }
    return out;
}

void apply_flat(RunConfig& c, const ordered_json& j) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const json& v = it.value();
        auto as_int = [&] {
            require(v.is_number_integer(), "config key " + k + " expects an integer");
            return v.get<int>();
        };
        auto as_dbl = [&] {
            require(v.is_number(), "config key " + k + " expects a number");
            return v.get<double>();
        };
        auto as_bool = [&] {
            require(v.is_boolean(), "config key " + k + " expects a boolean");
            return v.get<bool>();
        };
        auto as_str = [&] {
            require(v.is_string(), "config key " + k + " expects a string");
            return v.get<std::string>();
        };
        if (k == "profile") c.profile = as_str();
        else if (k == "model.variant") c.variant = as_str();
        else if (k == "readouts") c.readouts = split_list(as_str());
        else if (k == "frozen_backbone") c.frozen_backbone = as_bool();
        else if (k == "seed") {
            require(v.is_number_unsigned() || v.is_number_integer(), "config key seed expects an unsigned integer");
            c.seed = v.get<uint64_t>();
        }
        else if (k == "steps") c.steps = as_int();
        else if (k == "batch_size") c.batch_size = as_int();
        else if (k == "unroll_len") c.unroll_len = as_int();
        else if (k == "decode_stride") c.decode_stride = as_int();
        else if (k == "model.tokens") c.model_tokens = as_int();
        else if (k == "opt.peak_lr") c.opt.peak_lr = as_dbl();
        else if (k == "opt.end_lr") c.opt.end_lr = as_dbl();
        else if (k == "opt.warmup_steps") c.opt.warmup_steps = as_int();
        else if (k == "opt.beta1") c.opt.beta1 = as_dbl();
        else if (k == "opt.beta2") c.opt.beta2 = as_dbl();
        else if (k == "opt.eps") c.opt.eps = as_dbl();
        else if (k == "opt.clip_norm") c.opt.clip_norm = as_dbl();
        else if (k == "data.path") c.data_path = as_str();
        else if (k == "data.eval_path") c.eval_path = as_str();
        else if (k == "init.checkpoint") c.init_checkpoint = as_str();
        else if (k == "init.mode") c.init_mode = as_str();
        else if (k == "eval.checkpoint") c.eval_checkpoint = as_str();
        else if (k == "out.dir") c.out_dir = as_str();
        else if (k == "checkpoint.every") c.checkpoint_every = as_int();
        else if (k == "eval.every") c.eval_every = as_int();
        else if (k == "eval.samples") c.eval_samples = as_int();
        else if (k == "train.log_every") c.log_every = as_int();
        else if (k == "train.threads") c.threads = as_int();
        else if (k == "aug.random_crop") c.aug_random_crop = as_bool();
        else if (k == "scene.height") c.scene.height = as_int();
        else if (k == "scene.width") c.scene.width = as_int();
        else if (k == "scene.sprites_min") c.scene.sprites_min = as_int();
        else if (k == "scene.sprites_max") c.scene.sprites_max = as_int();
        else if (k == "scene.shapes") {
            auto shapes = split_list(as_str());
            c.scene.allow_disc = c.scene.allow_rect = false;
            for (const auto& s : shapes) {
                if (s == "disc") c.scene.allow_disc = true;
                else if (s == "rect") c.scene.allow_rect = true;
                else fail("config: unknown sprite shape '" + s + "' (expected disc|rect)");
            }
        }
        else if (k == "scene.speed_min") c.scene.speed_min = as_dbl();
        else if (k == "scene.speed_max") c.scene.speed_max = as_dbl();
        else if (k == "scene.camera_speed") c.scene.camera_speed = as_dbl();
        else if (k == "scene.bounce") c.scene.bounce = as_bool();
        else if (k == "scene.background") {
            std::string b = as_str();
            if (b == "gradient") c.scene.background = SceneConfig::Background::gradient;
            else if (b == "constant") c.scene.background = SceneConfig::Background::constant;
            else fail("config: unknown background '" + b + "' (expected constant|gradient)");
        }
        else if (k == "scene.points") c.scene.points = as_int();
        else if (k == "scene.frames") c.scene.frames = as_int();
        else if (k == "gen.samples") c.gen_samples = as_int();
        else if (k == "rollout.frames") c.rollout_frames = as_int();
        else if (k == "rollout.tokens") c.rollout_tokens = as_int();
        else if (k == "rollout.sample") c.rollout_sample = as_int();
        else if (k == "pca.components") c.pca_components = as_str();
        else if (k == "pca.sequences") c.pca_sequences = as_int();
        else if (k == "pca.frames") c.pca_frames = as_int();
        else fail("unknown config key: " + k);
    }
}

json parse_override_value(const std::string& key, const std::string& text, const ordered_json& defaults) {
    auto it = defaults.find(key);
    require(it != defaults.end(), "unknown config key: " + key);
    const json& d = *it;
    try {
        if (d.is_boolean()) {
            if (text == "true" || text == "1") return true;
            if (text == "false" || text == "0") return false;
            fail("boolean expected");
        }
        if (d.is_number_unsigned() && key == "seed") return json(static_cast<uint64_t>(std::stoull(text)));
        if (d.is_number_integer()) return json(std::stoi(text));
        if (d.is_number_float()) return json(std::stod(text));
        return json(text);
    } catch (const std::exception&) {
        fail("config override " + key + "=" + text + ": cannot parse value");
    }
}

}  // namespace

ModelConfig RunConfig::model() const {
    ModelConfig m;
    if (profile == "paper") m = ModelConfig::paper();
    else if (profile == "desk") m = ModelConfig::desk();
    else fail("unknown profile: " + profile + " (expected desk|paper)");
    if (model_tokens > 0) m.tokens = model_tokens;
    if (decode_stride > 0) m.decode_stride = decode_stride;
    m.unroll_len = unroll_len;
    m.validate();
    return m;
}

ReadoutCfg RunConfig::readout_cfg() const {
    return profile == "paper" ? ReadoutCfg::paper() : ReadoutCfg::desk();
}

BaselineConfig RunConfig::baseline() const {
    BaselineConfig b;
    b.variant = variant_enum();
    b.base = model();
    b.encoder_sa = profile == "paper" ? BlockCfg{3, 8, 64, 2048} : BlockCfg{3, 4, 16, 256};
    return b;
}

void RunConfig::validate() const {
    require(batch_size >= 1, "config: batch_size must be at least 1");
    require(steps >= 1, "config: steps must be at least 1");
    for (const auto& r : readouts)
        require(r == "rgb" || r == "depth" || r == "points" || r == "boxes", "config: unknown readout '" + r + "'");
    if (has_readout("points") || has_readout("boxes"))
        require(unroll_len >= 2, "config: tracking readouts need unroll_len >= 2");
    if (variant == "moog")
        require(has_readout("rgb"), "config: the rgb readout is always enabled for variant moog");
    require(init_mode == "weights" || init_mode == "resume",
            "config: init.mode must be weights or resume");
    model();  // profile + overrides must produce a valid architecture
    scene.validate();
}

std::string RunConfig::to_json() const { return to_flat(*this).dump(2); }

RunConfig RunConfig::from_json(const std::string& json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const json::parse_error& e) {
        fail(std::string("config: invalid json: ") + e.what());
    }
    require(j.is_object(), "config: top level must be an object of dotted keys");
    RunConfig c;
    apply_flat(c, j);
    return c;
}

RunConfig RunConfig::load(const std::string& config_path, const std::vector<std::string>& overrides) {
    RunConfig c;
    if (!config_path.empty()) {
        auto bytes = read_file_bytes(config_path);
        c = from_json(std::string(bytes.begin(), bytes.end()));
    }
    if (!overrides.empty()) {
        ordered_json defaults = to_flat(RunConfig{});
        ordered_json patch;
        for (const std::string& kv : overrides) {
            size_t eq = kv.find('=');
            require(eq != std::string::npos, "override must look like key=value, got: " + kv);
            std::string key = kv.substr(0, eq);
            patch[key] = parse_override_value(key, kv.substr(eq + 1), defaults);
        }
        apply_flat(c, patch);
    }
    return c;
}

}  // namespace moog
