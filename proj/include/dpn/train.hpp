#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "dpn/adam.hpp"
#include "dpn/checkpoint.hpp"
#include "dpn/config.hpp"
#include "dpn/data.hpp"
#include "dpn/eval.hpp"
#include "dpn/model.hpp"

namespace dpn {

/// Scene specs for a synthetic dataset: seeds `seed + i`, coverage jittered
/// deterministically around `coverage`.
inline std::vector<SynthSpec> synth_dataset_specs(std::size_t count, std::uint64_t seed, std::size_t size,
                                                  double coverage, double jitter, Terrain terrain) {
    std::vector<SynthSpec> out;
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t s = seed + i;
        const double u = hash01(s, 17, 29) * 2.0 - 1.0;
        out.push_back({s, size, size, std::clamp(coverage + jitter * u, 0.0, 1.0), terrain});
    }
    return out;
}

inline std::string scene_stem(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04zu", i);
    return buf;
}

inline std::vector<Scene> synth_scenes(const std::vector<SynthSpec>& specs, const NormalizationSpec& norm) {
    std::vector<Scene> out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        auto s = synth_scene(specs[i]);
        out.push_back(make_scene(scene_stem(i), s.image, s.mask, norm));
    }
    return out;
}

/// Writes `images/`, `masks/` and a `manifest.txt` (stem seed coverage terrain).
inline void write_synth_dataset(const std::filesystem::path& root, const std::vector<SynthSpec>& specs) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(root / "images", ec);
    fs::create_directories(root / "masks", ec);
    if (ec) throw IoError(root.string() + ": cannot create dataset directories: " + ec.message());
    std::ofstream manifest(root / "manifest.txt", std::ios::trunc);
    if (!manifest) throw IoError((root / "manifest.txt").string() + ": cannot write");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto scene = synth_scene(specs[i]);
        const std::string stem = scene_stem(i);
        write_png(root / "images" / (stem + ".png"), image_from_tensor(scene.image));
        write_png(root / "masks" / (stem + ".png"), image_from_tensor(scene.mask));
        manifest << stem << ' ' << specs[i].seed << ' ' << detail::fmt_double(specs[i].coverage) << ' '
                 << to_string(specs[i].terrain) << '\n';
    }
}

/// Scenes named by the config: a dataset directory if `data` is set,
/// otherwise `synth_scenes` generated in memory.
inline std::vector<Scene> training_scenes(const RunConfig& cfg) {
    if (!cfg.data.empty()) {
        auto scenes = load_dataset(index_dataset(cfg.data, Split::train), cfg.norm);
        if (scenes.empty()) throw IoError(cfg.data + ": dataset contains no image/mask pairs");
        return scenes;
    }
    if (cfg.synth_scenes == 0) throw ConfigError("no training data: set data=<root> or synth_scenes=<count>");
    return synth_scenes(synth_dataset_specs(cfg.synth_scenes, cfg.synth_seed, cfg.synth_size, cfg.synth_coverage,
                                            cfg.synth_jitter, cfg.synth_terrain),
                        cfg.norm);
}

inline ParamStore<float> encoder_entries(const ParamStore<float>& all) {
    ParamStore<float> out;
    for (const auto& [name, e] : all.entries())
        if (name.rfind("encoder/", 0) == 0) out.put(name, e.value, e.trainable);
    return out;
}

/// Fresh model for training; the pretrained variant pulls its encoder from
/// `cfg.pretrained`.
inline DpnModel<float> make_model(const RunConfig& cfg) {
    ParamStore<float> init;
    if (cfg.encoder == EncoderVariant::pretrained_frozen) {
        if (cfg.pretrained.empty())
            throw ConfigError("encoder=pretrained_frozen needs pretrained=<weights.dpnw>");
        init = encoder_entries(load_checkpoint<float>(cfg.pretrained).params);
    }
    return DpnModel<float>(cfg.model_config(), cfg.seed, std::move(init));
}

/// Model with every parameter taken from a trained checkpoint.
inline DpnModel<float> load_model(const RunConfig& cfg, const std::filesystem::path& checkpoint) {
    auto loaded = load_checkpoint<float>(checkpoint);
    ParamStore<float> init;
    if (cfg.encoder == EncoderVariant::pretrained_frozen) init = encoder_entries(loaded.params);
    DpnModel<float> model(cfg.model_config(), cfg.seed, std::move(init));
    assign_params(model.params(), loaded.params);
    return model;
}

inline std::string format_loss_line(std::uint64_t it, double loss) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%llu %.9f\n", static_cast<unsigned long long>(it), loss);
    return buf;
}

struct TrainResult {
    DpnModel<float> model;
    std::vector<double> losses;
    std::filesystem::path final_checkpoint;
};

/// sample -> forward -> loss -> backward -> Adam, for cfg.iters iterations.
/// Writes config.txt, loss.log, periodic checkpoints and final.dpnw into
/// cfg.run_dir. Deterministic for a fixed config.
inline TrainResult train(const RunConfig& cfg, std::ostream* progress = nullptr) {
    namespace fs = std::filesystem;
    if (cfg.batch == 0 || cfg.patch == 0 || cfg.patch % pyramid_stride)
        throw ConfigError("batch must be positive and patch a positive multiple of 16");
    // Everything that can fail at startup happens before the first step.
    const auto scenes = training_scenes(cfg);
    DpnModel<float> model = make_model(cfg);
    AdamState<float> optim = adam_init(model.params(), cfg.adam_config());
    if (!cfg.resume.empty()) {
        auto loaded = load_checkpoint<float>(cfg.resume);
        assign_params(model.params(), loaded.params);
        if (!loaded.optim) throw ConfigError(cfg.resume + ": checkpoint has no optimizer state to resume from");
        optim.step = loaded.optim->step;
        for (auto& [name, m] : optim.m) {
            if (!loaded.optim->m.count(name) || !loaded.optim->v.count(name))
                throw MismatchError(cfg.resume + ": optimizer state lacks moments for " + name);
            m = loaded.optim->m.at(name);
            optim.v.at(name) = loaded.optim->v.at(name);
        }
    }

    const fs::path run(cfg.run_dir);
    std::error_code ec;
    fs::create_directories(run, ec);
    if (ec) throw IoError(run.string() + ": cannot create run directory: " + ec.message());
    save_config(run / "config.txt", cfg);
    std::ofstream log(run / "loss.log", cfg.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError((run / "loss.log").string() + ": cannot write");

    Rng rng(mix64(cfg.seed ^ 0x5eed5eedULL));
    // Replay the sampler so a resumed run draws the same batches.
    for (std::uint64_t it = 0; it < optim.step; ++it) sample_batch(scenes, cfg.batch, cfg.patch, cfg.patch, rng);

    std::vector<double> losses;
    for (std::uint64_t it = optim.step + 1; it <= cfg.iters; ++it) {
        const auto batch = sample_batch(scenes, cfg.batch, cfg.patch, cfg.patch, rng);
        const auto probs = model.forward(batch.images, Mode::training);
        const double loss = loss_eval(probs, batch.targets);
        model.backward(batch.targets);
        adam_step(model.params(), optim);
        losses.push_back(loss);
        log << format_loss_line(it, loss);
        if (progress && (it % 50 == 0 || it == cfg.iters)) *progress << "iter " << it << " loss " << loss << '\n';
        if (cfg.checkpoint_every && it % cfg.checkpoint_every == 0 && it != cfg.iters)
            save_checkpoint(run / ("checkpoint_" + std::to_string(it) + ".dpnw"), model.params(), &optim);
    }
    log.flush();
    const fs::path final_ckpt = run / "final.dpnw";
    save_checkpoint(final_ckpt, model.params(), &optim);
    return {std::move(model), std::move(losses), final_ckpt};
}

/// Prediction that only tiles when the scene exceeds `tile` in either extent.
inline BinaryMask predict_scene(const DpnModel<float>& model, const Tensor<float>& image, std::size_t tile,
                                std::size_t halo) {
    if (image.shape().h() <= tile && image.shape().w() <= tile) return predict_mask(model, image);
    return predict_tiled(model, image, make_tile_plan(image.shape().h(), image.shape().w(), tile, halo));
}

struct SceneScore {
    std::string stem;
    ConfusionCounts counts;
};

struct EvalReport {
    std::vector<SceneScore> scenes;
    ConfusionCounts total; // micro-average pool
};

inline EvalReport evaluate(const DpnModel<float>& model, const std::vector<Scene>& scenes, std::size_t tile,
                           std::size_t halo) {
    if (scenes.empty()) throw ValueError("evaluation set is empty");
    EvalReport rep;
    for (const auto& s : scenes) {
        const auto pred = predict_scene(model, s.image, tile, halo);
        const auto gt = argmax_mask(s.target);
        const auto c = confusion(pred, gt);
        rep.scenes.push_back({s.stem, c});
        rep.total += c;
    }
    return rep;
}

} // namespace dpn
