// Command-line front end: train, infer, eval, synth.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "dpn/dpn.hpp"

namespace fs = std::filesystem;

namespace {

constexpr std::size_t default_tile = 512;

struct ConfigFlags {
    std::string config_file;
    std::string profile;
    std::map<std::string, std::string> overrides;

    void attach(CLI::App* app) {
        app->add_option("--config", config_file, "key=value run configuration file");
        app->add_option("--profile", profile, "base profile: paper or desk");
        for (const auto& key : dpn::config_keys()) {
            if (key == "profile") continue;
            app->add_option("--" + key, overrides[key], "override config key '" + key + "'");
        }
    }

    dpn::RunConfig resolve() const {
        std::string text = profile.empty() ? "" : "profile=" + profile + "\n";
        if (!config_file.empty()) text += read(config_file);
        dpn::RunConfig cfg = dpn::parse_config(text);
        for (const auto& [k, v] : overrides)
            if (!v.empty()) dpn::set_config_value(cfg, k, v);
        return cfg;
    }

    static std::string read(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw dpn::IoError(path + ": cannot read config");
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

int cmd_train(const ConfigFlags& flags) {
    const auto cfg = flags.resolve();
    std::cout << "run_dir=" << cfg.run_dir << '\n';
    auto result = dpn::train(cfg, &std::cout);
    if (!result.losses.empty()) std::cout << "final_loss=" << fmt(result.losses.back()) << '\n';
    std::cout << "checkpoint=" << result.final_checkpoint.string() << '\n';
    return 0;
}

int cmd_infer(const ConfigFlags& flags, const std::string& checkpoint, const std::string& image,
              const std::string& out, std::optional<std::size_t> tile, std::optional<std::size_t> halo) {
    const auto cfg = flags.resolve();
    const auto model = dpn::load_model(cfg, checkpoint);
    const auto raw = dpn::load_image(image);
    const auto input = dpn::normalize(raw, cfg.norm);
    const std::size_t h = halo.value_or(dpn::required_halo(model));
    const auto t0 = std::chrono::steady_clock::now();
    dpn::BinaryMask mask;
    if (tile) {
        mask = dpn::predict_tiled(model, input, dpn::make_tile_plan(input.shape().h(), input.shape().w(), *tile, h));
    } else {
        mask = dpn::predict_scene(model, input, default_tile, h);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    dpn::write_mask(out, mask);
    std::size_t cloud = 0;
    for (auto v : mask.cloud) cloud += v;
    std::cout << "mask=" << out << '\n'
              << "pixels=" << mask.size() << '\n'
              << "cloud_fraction=" << fmt(static_cast<double>(cloud) / static_cast<double>(mask.size())) << '\n'
              << "latency_s=" << fmt(secs) << '\n';
    return 0;
}

nlohmann::json counts_json(const dpn::ConfusionCounts& c) {
    nlohmann::json j{{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}, {"pixels", c.total()}};
    j["accuracy"] = dpn::accuracy(c);
    const auto p = dpn::precision(c);
    j["precision"] = p ? nlohmann::json(*p) : nlohmann::json(nullptr);
    return j;
}

std::string precision_text(const dpn::ConfusionCounts& c) {
    const auto p = dpn::precision(c);
    return p ? fmt(*p) : "n/a";
}

int cmd_eval(const ConfigFlags& flags, const std::string& checkpoint, const std::string& report,
             std::optional<std::size_t> tile) {
    const auto cfg = flags.resolve();
    if (cfg.data.empty()) throw dpn::ConfigError("eval needs --data <dataset root>");
    const auto model = dpn::load_model(cfg, checkpoint);
    const auto scenes = dpn::load_dataset(dpn::index_dataset(cfg.data, dpn::Split::test), cfg.norm);
    if (scenes.empty()) throw dpn::ValueError(cfg.data + ": test set is empty");
    const auto rep = dpn::evaluate(model, scenes, tile.value_or(default_tile), dpn::required_halo(model));

    nlohmann::json j;
    j["checkpoint"] = checkpoint;
    j["dataset"] = cfg.data;
    j["averaging"] = "micro";
    j["total"] = counts_json(rep.total);
    for (const auto& s : rep.scenes) {
        std::cout << "scene=" << s.stem << " pixels=" << s.counts.total() << " accuracy=" << fmt(dpn::accuracy(s.counts))
                  << " precision=" << precision_text(s.counts) << '\n';
        auto sj = counts_json(s.counts);
        sj["stem"] = s.stem;
        j["scenes"].push_back(sj);
    }
    const auto& t = rep.total;
    std::cout << "scenes=" << rep.scenes.size() << '\n'
              << "pixels=" << t.total() << '\n'
              << "tp=" << t.tp << '\n'
              << "fp=" << t.fp << '\n'
              << "tn=" << t.tn << '\n'
              << "fn=" << t.fn << '\n'
              << "accuracy=" << fmt(dpn::accuracy(t)) << '\n'
              << "precision=" << precision_text(t) << '\n';
    if (!report.empty()) {
        std::ofstream out(report, std::ios::trunc);
        if (!out) throw dpn::IoError(report + ": cannot write report");
        out << j.dump(2) << '\n';
    }
    return 0;
}

int cmd_synth(const std::string& out, std::size_t count, std::uint64_t seed, std::size_t size, double coverage,
              double jitter, const std::string& terrain) {
    const auto specs = dpn::synth_dataset_specs(count, seed, size, coverage, jitter, dpn::parse_terrain(terrain));
    dpn::write_synth_dataset(out, specs);
    std::cout << "dataset=" << out << '\n' << "scenes=" << count << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep pyramid network cloud segmentation"};
    app.require_subcommand(1);

    ConfigFlags train_flags, infer_flags, eval_flags;
    auto* train = app.add_subcommand("train", "train a model");
    train_flags.attach(train);

    auto* infer = app.add_subcommand("infer", "predict a cloud mask for one RGB PNG");
    infer_flags.attach(infer);
    std::string infer_ckpt, infer_image, infer_out;
    std::optional<std::size_t> infer_tile, infer_halo;
    infer->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
    infer->add_option("--image", infer_image, "input RGB PNG")->required();
    infer->add_option("--out", infer_out, "output mask PNG")->required();
    infer->add_option("--tile", infer_tile, "tile extent (multiple of 16); forces tiled inference");
    infer->add_option("--halo", infer_halo, "tile halo in pixels (default: required halo of the model)");

    auto* eval = app.add_subcommand("eval", "accuracy and precision over a dataset");
    eval_flags.attach(eval);
    std::string eval_ckpt, eval_report;
    std::optional<std::size_t> eval_tile;
    eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
    eval->add_option("--report", eval_report, "write a JSON report here");
    eval->add_option("--tile", eval_tile, "tile extent for scenes larger than it");

    auto* synth = app.add_subcommand("synth", "write a synthetic cloud dataset");
    std::string synth_out;
    std::size_t synth_count = 8, synth_size = 64;
    std::uint64_t synth_seed = 1000;
    double synth_coverage = 0.35, synth_jitter = 0.15;
    std::string synth_terrain = "textured";
    synth->add_option("--out", synth_out, "dataset root")->required();
    synth->add_option("--count", synth_count, "number of scenes");
    synth->add_option("--seed", synth_seed, "seed of the first scene");
    synth->add_option("--size", synth_size, "scene extent (multiple of 16)");
    synth->add_option("--coverage", synth_coverage, "target cloud fraction");
    synth->add_option("--jitter", synth_jitter, "per-scene coverage jitter");
    synth->add_option("--terrain", synth_terrain, "flat, textured or snowy");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cmd_train(train_flags);
        if (*infer) return cmd_infer(infer_flags, infer_ckpt, infer_image, infer_out, infer_tile, infer_halo);
        if (*eval) return cmd_eval(eval_flags, eval_ckpt, eval_report, eval_tile);
        if (*synth)
            return cmd_synth(synth_out, synth_count, synth_seed, synth_size, synth_coverage, synth_jitter, synth_terrain);
    } catch (const dpn::Error& e) {
        std::cerr << "error category=" << e.category() << " message=" << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error category=internal message=" << e.what() << '\n';
        return 1;
    }
    return 0;
}
