#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "bdcd/train.hpp"

using namespace bdcd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitUsage = 64;

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path.string());
    out << text;
}

struct Options {
    std::string config;
    std::string out = ".";
    std::string checkpoint;
    std::string dataset;
    std::string device = "cpu";
    long long seed = -1;  // -1: no override
    std::string pre_image, post_image;
};

json load_config(const Options& opt) {
    if (opt.config.empty()) return json::object();
    return json::parse(read_text(opt.config));
}

void check_device(const Options& opt) {
    if (opt.device != "cpu")
        throw std::invalid_argument("unknown device '" + opt.device + "' (only cpu is built)");
}

fs::path ensure_out(const Options& opt) {
    fs::path dir(opt.out);
    fs::create_directories(dir);
    return dir;
}

// ------------------------------------------------------------ config parsing

ModelConfig parse_model(const json& cfg) {
    if (!cfg.contains("model")) return ModelConfig{};
    return model_config_from_json(cfg["model"].dump());
}

LossConfig parse_loss(const json& cfg, int num_classes) {
    LossConfig lc;
    if (cfg.contains("loss")) {
        const json& j = cfg["loss"];
        if (j.contains("variant")) lc.variant = loss_variant_from_string(j["variant"]);
        lc.gamma = j.value("gamma", lc.gamma);
        lc.alpha = j.value("alpha", lc.alpha);
        lc.ordinal_weight = j.value("ordinal_weight", lc.ordinal_weight);
        if (j.contains("class_weights"))
            lc.class_weights = j["class_weights"].get<std::vector<double>>();
    }
    if (static_cast<int>(lc.class_weights.size()) != num_classes)
        lc.class_weights.assign(num_classes, 1.0);  // replaced later when derivable
    return lc;
}

TrainConfig parse_train(const json& cfg, long long seed_override) {
    TrainConfig tc;
    if (cfg.contains("train")) {
        const json& j = cfg["train"];
        tc.learning_rate = j.value("learning_rate", tc.learning_rate);
        if (j.contains("milestones"))
            tc.scheduler_milestones = j["milestones"].get<std::vector<int>>();
        tc.scheduler_factor = j.value("factor", tc.scheduler_factor);
        tc.batch_size = j.value("batch_size", tc.batch_size);
        tc.epochs = j.value("epochs", tc.epochs);
        tc.val_fraction = j.value("val_fraction", tc.val_fraction);
        tc.seed = j.value("seed", tc.seed);
        if (j.contains("augment")) {
            const json& a = j["augment"];
            tc.augment.hflip = a.value("hflip", false);
            tc.augment.vflip = a.value("vflip", false);
            tc.augment.rot90 = a.value("rot90", false);
            tc.augment.scale_jitter = a.value("scale_jitter", false);
            tc.augment.photometric = a.value("photometric", false);
        }
    }
    if (seed_override >= 0) tc.seed = static_cast<uint64_t>(seed_override);
    return tc;
}

FineTuneConfig parse_finetune(const json& cfg, long long seed_override) {
    FineTuneConfig fc;
    if (cfg.contains("finetune")) {
        const json& j = cfg["finetune"];
        fc.epochs = j.value("epochs", fc.epochs);
        fc.learning_rate = j.value("learning_rate", fc.learning_rate);
        fc.batch_size = j.value("batch_size", fc.batch_size);
        fc.seed = j.value("seed", fc.seed);
        if (j.contains("class_weights"))
            fc.class_weights = j["class_weights"].get<std::vector<double>>();
        if (j.contains("merge")) {
            const json& m = j["merge"];
            if (m.is_string() && m == "damage4")
                fc.class_merge_map = default_damage_merge();
            else if (m.is_object())
                for (auto it = m.begin(); it != m.end(); ++it)
                    fc.class_merge_map[std::stoi(it.key())] = it.value().get<int>();
            else
                throw std::invalid_argument("finetune.merge: expected \"damage4\" or a map");
        }
    }
    if (seed_override >= 0) fc.seed = static_cast<uint64_t>(seed_override);
    return fc;
}

// ------------------------------------------------------------------ datasets

std::string synth_manifest_from_config(const json& data, long long seed_override) {
    if (!data.contains("synth"))
        throw std::invalid_argument("config lacks a data.synth or data.manifest entry");
    const json& s = data["synth"];
    uint64_t seed = s.value("seed", 0ull);
    if (seed_override >= 0) seed = static_cast<uint64_t>(seed_override);
    SynthOptions opt;
    opt.sensor_noise = s.value("sensor_noise", false);
    opt.post_gain_jitter = s.value("post_gain_jitter", 0.0);
    return synth_manifest(seed, s.value("n_tiles", 8), s.value("size", 128L),
                          s.value("num_classes", 5),
                          s.at("class_mix").get<std::vector<double>>(), opt);
}

/// Manifest text for the requested dataset, in precedence order:
/// --dataset DIR (reads DIR/manifest.json), data.manifest PATH, data.synth.
std::string resolve_manifest(const json& cfg, const Options& opt, long long seed_override) {
    if (!opt.dataset.empty()) return read_text((fs::path(opt.dataset) / "manifest.json").string());
    json data = cfg.value("data", json::object());
    if (data.contains("manifest")) return read_text(data["manifest"].get<std::string>());
    return synth_manifest_from_config(data, seed_override);
}

std::vector<TileRecord> load_tiles(const json& cfg, const Options& opt, long long seed_override) {
    return synth_from_manifest(resolve_manifest(cfg, opt, seed_override));
}

LossConfig resolve_loss(const json& cfg, int num_classes, const std::vector<TileRecord>& tiles) {
    LossConfig lc = parse_loss(cfg, num_classes);
    bool given = cfg.contains("loss") && cfg["loss"].contains("class_weights");
    if (!given) {
        if (num_classes == 5)
            lc.class_weights = LossConfig{}.class_weights;
        else
            lc.class_weights = derive_class_weights(class_pixel_distribution(tiles, num_classes));
    }
    return lc;
}

// ------------------------------------------------------------------ commands

int cmd_synth(const Options& opt) {
    check_device(opt);
    json cfg = load_config(opt);
    std::string manifest = resolve_manifest(cfg, opt, opt.seed);
    auto tiles = synth_from_manifest(manifest);
    fs::path out = ensure_out(opt);
    for (const auto& t : tiles) {
        write_image((out / (t.tile_id + "_pre.png")).string(), t.pre_image);
        write_image((out / (t.tile_id + "_post.png")).string(), t.post_image);
        write_mask_png((out / (t.tile_id + "_mask.png")).string(), t.label_mask);
    }
    write_text(out / "manifest.json", manifest);
    std::cout << "wrote " << tiles.size() << " tiles to " << out.string() << "\n";
    return kExitOk;
}

int cmd_train(const Options& opt) {
    check_device(opt);
    json cfg = load_config(opt);
    ModelConfig mc = parse_model(cfg);
    TrainConfig tc = parse_train(cfg, opt.seed);
    auto tiles = load_tiles(cfg, opt, -1);
    LossConfig lc = resolve_loss(cfg, mc.num_classes, tiles);

    ChangeNet net(mc, tc.seed);
    TrainResult r = train(net, tiles, tc, lc);

    fs::path out = ensure_out(opt);
    save_checkpoint((out / "model.ckpt").string(), r.best);
    save_checkpoint((out / "final.ckpt").string(), r.final_);
    write_text(out / "history.csv", r.history.to_csv());
    if (!r.history.val_reports.empty()) {
        const EvalReport& rep = r.history.val_reports.back();
        write_text(out / "report.csv", rep.to_csv());
        write_text(out / "report.txt", rep.to_text());
    }
    std::cout << "trained " << tc.epochs << " epochs; best val score "
              << (r.history.epochs.empty() ? 0.0 : r.history.epochs.back().val_score) << "\n";
    return kExitOk;
}

int cmd_finetune(const Options& opt) {
    check_device(opt);
    json cfg = load_config(opt);
    Checkpoint src = load_checkpoint(opt.checkpoint);
    FineTuneConfig fc = parse_finetune(cfg, opt.seed);
    auto tiles = load_tiles(cfg, opt, -1);

    double vf = cfg.contains("finetune") ? cfg["finetune"].value("val_fraction", 0.2) : 0.2;
    auto split = stratified_split(tiles, {1.0 - vf, vf, 0.0}, fc.seed);
    LossConfig lc = parse_loss(cfg, src.model.num_classes);
    if (!(cfg.contains("loss") && cfg["loss"].contains("class_weights")))
        lc.class_weights.clear();  // let fine_tune derive from the merged target

    auto [ck, hist] = fine_tune(src, split[0], split[1], fc, lc);

    fs::path out = ensure_out(opt);
    save_checkpoint((out / "model.ckpt").string(), ck);
    write_text(out / "history.csv", hist.to_csv());
    if (!hist.val_reports.empty()) {
        write_text(out / "report.csv", hist.val_reports.back().to_csv());
        write_text(out / "report.txt", hist.val_reports.back().to_text());
    }
    std::cout << "fine-tuned " << fc.epochs << " epochs\n";
    return kExitOk;
}

int cmd_eval(const Options& opt) {
    check_device(opt);
    json cfg = load_config(opt);
    Checkpoint ck = load_checkpoint(opt.checkpoint);
    auto tiles = load_tiles(cfg, opt, -1);
    if (tiles.empty()) throw std::invalid_argument("eval: dataset is empty");

    ChangeNet net = model_from_checkpoint(ck);
    EvalReport rep = evaluate_model(net, tiles);
    fs::path out = ensure_out(opt);
    write_text(out / "report.csv", rep.to_csv());
    write_text(out / "report.txt", rep.to_text());
    std::cout << rep.to_text();
    return kExitOk;
}

int cmd_predict(const Options& opt) {
    check_device(opt);
    Checkpoint ck = load_checkpoint(opt.checkpoint);
    ChangeNet net = model_from_checkpoint(ck);
    ImageU8 pre = read_image(opt.pre_image);
    ImageU8 post = read_image(opt.post_image);
    if (pre.c != 3 || post.c != 3) throw std::invalid_argument("predict: images must be RGB");
    if (pre.h != post.h || pre.w != post.w)
        throw std::invalid_argument("predict: pre/post sizes differ");

    Tensor logits = net.forward_logits(normalize_image(pre.v, pre.h, pre.w),
                                       normalize_image(post.v, post.h, post.w));
    auto [damage, loc] = predict_masks(logits);

    static const uint8_t palette[5][3] = {
        {0, 0, 0}, {0, 255, 0}, {255, 255, 0}, {255, 128, 0}, {255, 0, 0}};
    ImageU8 overlay(damage.h, damage.w, 3);
    for (long i = 0; i < damage.numel(); ++i) {
        uint8_t cls = damage.v[i];
        if (cls > 4) throw std::invalid_argument("predict: no palette entry for class > 4");
        for (long c = 0; c < 3; ++c) overlay.v[i * 3 + c] = palette[cls][c];
    }

    fs::path out = ensure_out(opt);
    write_mask_png((out / "mask.png").string(), damage);
    write_image((out / "overlay.png").string(), overlay);
    std::cout << "wrote mask.png and overlay.png to " << out.string() << "\n";
    return kExitOk;
}

int cmd_ablate(const Options& opt) {
    check_device(opt);
    json cfg = load_config(opt);
    if (!cfg.contains("ablation")) throw std::invalid_argument("config lacks an ablation section");
    std::string axis = cfg["ablation"].value("axis", "");
    std::vector<std::string> values;
    for (const auto& v : cfg["ablation"].value("values", json::array()))
        values.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    if (axis.empty() || values.empty())
        throw std::invalid_argument("ablation requires an axis and a non-empty value grid");

    ModelConfig mc = parse_model(cfg);
    TrainConfig tc = parse_train(cfg, opt.seed);
    auto tiles = load_tiles(cfg, opt, -1);
    LossConfig lc = resolve_loss(cfg, mc.num_classes, tiles);
    auto split = stratified_split(tiles, {1.0 - tc.val_fraction, tc.val_fraction, 0.0}, tc.seed);

    auto rows = ablation_run(mc, lc, tc, axis, values, split[0], split[1]);
    fs::path out = ensure_out(opt);
    write_text(out / "ablation.csv", ablation_csv(axis, rows));
    std::cout << ablation_csv(axis, rows);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bi-temporal change detection and building damage classification"};
    app.require_subcommand(1);

    Options opt;
    auto add_common = [&](CLI::App* sub, bool needs_ckpt = false) {
        sub->add_option("--config", opt.config, "JSON config (sections model/loss/train/data)");
        sub->add_option("--out", opt.out, "output directory");
        sub->add_option("--seed", opt.seed, "seed override");
        sub->add_option("--dataset", opt.dataset, "dataset directory holding manifest.json");
        sub->add_option("--device", opt.device, "compute device (cpu)");
        auto* c = sub->add_option("--checkpoint", opt.checkpoint, "checkpoint path");
        if (needs_ckpt) c->required();
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth);
    CLI::App* trainc = app.add_subcommand("train", "train a model");
    add_common(trainc);
    CLI::App* finetune = app.add_subcommand("finetune", "fine-tune a checkpoint");
    add_common(finetune, true);
    CLI::App* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(evalc, true);
    CLI::App* predict = app.add_subcommand("predict", "predict masks for one image pair");
    add_common(predict, true);
    predict->add_option("--pre", opt.pre_image, "pre-event image")->required();
    predict->add_option("--post", opt.post_image, "post-event image")->required();
    CLI::App* ablate = app.add_subcommand("ablate", "sweep one config axis");
    add_common(ablate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(opt);
        if (trainc->parsed()) return cmd_train(opt);
        if (finetune->parsed()) return cmd_finetune(opt);
        if (evalc->parsed()) return cmd_eval(opt);
        if (predict->parsed()) return cmd_predict(opt);
        if (ablate->parsed()) return cmd_ablate(opt);
        return kExitUsage;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
}
