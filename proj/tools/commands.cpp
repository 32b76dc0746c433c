#include "commands.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "cpga/checkpoint.hpp"
#include "cpga/dataset.hpp"
#include "cpga/gradcheck.hpp"
#include "cpga/losses.hpp"
#include "cpga/model.hpp"
#include "cpga/png_io.hpp"
#include "cpga/trainer.hpp"

namespace cpga::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kReferenceGflops = 9.356;
constexpr double kReferenceTrio[3] = {0.030, 0.050, 0.060};
constexpr std::size_t kCacheLimit = 128;

template <typename F>
int guarded(F&& body) {
    try {
        return body();
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << '\n';
        return kNumericAbort;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const PngError& e) {
        std::cerr << "image error: " << e.what() << '\n';
        return kDataError;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::out_of_range& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsageError;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kPartialFailure;
    }
}

ModelConfig resolve_config(const ModelFlags& f) {
    ModelConfig c;
    if (!f.config.empty()) {
        std::ifstream is(f.config);
        if (!is) throw ConfigError("cannot read config " + f.config);
        c = model_config_from_json(nlohmann::json::parse(is));
    }
    if (!f.ablation.empty()) {
        if (f.ablation.size() != 1) throw ConfigError("--ablation expects a, b or c");
        const auto row = ModelConfig::ablation(f.ablation[0]);
        c.enable_global_branch = row.enable_global_branch;
        c.enable_cpga_blocks = row.enable_cpga_blocks;
    }
    if (f.blocks) c.n_cp_blocks = *f.blocks;
    if (f.seed) c.seed = *f.seed;
    c.validate();
    return c;
}

std::string describe(const ModelConfig& c) {
    std::string s = "local";
    if (c.enable_global_branch) s += "+global";
    if (c.enable_cpga_blocks) s += "+cpga";
    return s + ", " + std::to_string(c.n_cp_blocks) + " blocks, width " + std::to_string(c.base_width);
}

// Edge-replicates to even sides of at least 16, runs the model, crops back.
Tensor<float> enhance_image(const CPGANet<float>& model, const Tensor<float>& image) {
    const std::size_t h = image.dim(2), w = image.dim(3);
    auto fit = [](std::size_t n) { return std::max<std::size_t>(16, n + (n % 2)); };
    const std::size_t ph = fit(h), pw = fit(w);
    NoGradGuard guard;
    if (ph == h && pw == w) return model.forward(image);
    std::vector<float> padded(3 * ph * pw);
    const auto src = image.data();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t x = 0; x < pw; ++x)
                padded[(c * ph + y) * pw + x] = src[(c * h + std::min(y, h - 1)) * w + std::min(x, w - 1)];
    const auto full = model.forward(Tensor<float>({1, 3, ph, pw}, std::move(padded)));
    const auto out = full.data();
    std::vector<float> cropped(3 * h * w);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) cropped[(c * h + y) * w + x] = out[(c * ph + y) * pw + x];
    return Tensor<float>({1, 3, h, w}, std::move(cropped));
}

std::pair<std::size_t, std::size_t> parse_res(const std::string& res) {
    unsigned long w = 0, h = 0;
    char tail = 0;
    if (std::sscanf(res.c_str(), "%lux%lu%c", &w, &h, &tail) != 2 || w == 0 || h == 0)
        throw ConfigError("--res expects WIDTHxHEIGHT, got '" + res + "'");
    return {w, h};
}

}  // namespace

int cmd_train(const TrainFlags& f) {
    return guarded([&] {
        TrainOptions o;
        o.model = resolve_config(f.model);
        o.loss = LossSpec::parse(f.loss);
        o.schedule.base_lr = f.lr;
        o.schedule.total_epochs = std::max<std::size_t>(o.schedule.total_epochs, f.epochs);
        o.batch.batch_size = f.batch;
        o.batch.crop = f.crop;
        o.batch.seed = f.model.seed.value_or(0);
        o.epochs = f.epochs;
        o.max_steps = f.max_steps;
        o.checkpoint_every = f.checkpoint_every;
        o.validate_every = f.validate_every;
        o.out_dir = f.out;
        o.quiet = f.quiet;

        const auto index = index_dataset(f.data, f.split, f.low, f.high);
        for (const auto& w : index.warnings) std::cerr << "warning: " << w << '\n';
        FolderSource<float> train(index, index.size() <= kCacheLimit);
        std::optional<FolderSource<float>> val;
        if (!f.val_split.empty()) {
            auto vi = index_dataset(f.data, f.val_split, f.low, f.high);
            const bool cache = vi.size() <= kCacheLimit;
            val.emplace(std::move(vi), cache);
        }
        Trainer trainer(o, train, val ? &*val : nullptr);
        if (!f.model.checkpoint.empty()) trainer.restore(fs::path(f.model.checkpoint));
        if (!f.quiet)
            std::cerr << "training " << describe(trainer.options().model) << ", " << index.size() << " images, "
                      << count_parameters(trainer.model()) << " parameters\n";
        const auto result = trainer.run();
        std::cout << "steps\t" << result.steps << '\n';
        if (!result.records.empty()) std::cout << "final_loss\t" << result.records.back().total << '\n';
        if (result.best) std::cout << "best_psnr\t" << result.best->psnr << '\n';
        std::cout << "checkpoint\t" << (fs::path(f.out) / "final.ckpt").string() << '\n';
        return int(kOk);
    });
}

int cmd_enhance(const EnhanceFlags& f) {
    return guarded([&] {
        const auto model = load_checkpoint<float>(f.checkpoint);
        const auto inputs = list_pngs(f.data);
        if (inputs.empty()) throw DataError("no PNG files in " + f.data);
        const bool single_file = fs::is_regular_file(f.data) && fs::path(f.out).extension() == ".png";
        if (!single_file) fs::create_directories(f.out);
        int failures = 0;
        for (const auto& in : inputs) {
            const fs::path dst = single_file ? fs::path(f.out) : fs::path(f.out) / in.filename();
            try {
                const auto t0 = std::chrono::steady_clock::now();
                const auto image = load_png<float>(in);
                const auto out = enhance_image(model, image);
                save_png(out, dst);
                const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
                std::cout << in.filename().string() << '\t' << ms << " ms\n";
            } catch (const std::exception& e) {
                ++failures;
                std::cerr << "failed: " << in.string() << ": " << e.what() << '\n';
            }
        }
        return failures ? int(kPartialFailure) : int(kOk);
    });
}

int cmd_eval(const EvalFlags& f) {
    return guarded([&] {
        std::optional<CPGANet<float>> model;
        if (!f.checkpoint.empty()) model.emplace(load_checkpoint<float>(f.checkpoint));
        const auto index = index_dataset(f.data, f.split, f.low, f.high);
        for (const auto& w : index.warnings) std::cerr << "warning: " << w << '\n';
        FolderSource<float> source(index);
        std::ofstream file;
        if (!f.out.empty()) {
            file.open(f.out);
            if (!file) throw DataError("cannot write " + f.out);
        }
        auto emit = [&](const std::string& id, double p, double s) {
            char line[256];
            std::snprintf(line, sizeof line, "%s\t%.10g\t%.10g\n", id.c_str(), p, s);
            std::cout << line;
            if (file.is_open()) file << line;
        };
        double sum_p = 0, sum_s = 0;
        for (std::size_t i = 0; i < source.size(); ++i) {
            const auto sample = source.get(i);
            // without a checkpoint the low images are scored as-is
            const auto y = model ? enhance_image(*model, sample.low) : sample.low;
            const double p = psnr(y, sample.gt), s = ssim(y, sample.gt);
            sum_p += p;
            sum_s += s;
            emit(sample.id, p, s);
        }
        const double n = static_cast<double>(source.size());
        emit("mean", sum_p / n, sum_s / n);
        return int(kOk);
    });
}

int cmd_gradcheck(const GradcheckFlags& f) {
    return guarded([&] {
        GradcheckOptions o;
        o.seed = f.seed;
        o.instances = f.instances;
        if (o.instances < 20) throw ConfigError("gradcheck needs at least 20 instances per op");
        const auto results = run_gradcheck(f.ops, o);
        std::vector<std::string> failed;
        for (const auto& r : results) {
            char line[256];
            std::snprintf(line, sizeof line, "%-24s\t%.3e\t%.0e\t%zu\t%s\n", r.op.c_str(), r.max_rel_error,
                          r.threshold, r.instances, r.passed ? "PASS" : "FAIL");
            std::cout << line;
            if (!r.passed) failed.push_back(r.op);
        }
        if (!failed.empty()) {
            std::cerr << "gradcheck failed:";
            for (const auto& op : failed) std::cerr << ' ' << op;
            std::cerr << '\n';
            return int(kGradcheckFailure);
        }
        if (!f.quiet) std::cerr << "all " << results.size() << " checks passed\n";
        return int(kOk);
    });
}

int cmd_inspect(const InspectFlags& f) {
    return guarded([&] {
        const auto [w, h] = parse_res(f.res);
        std::optional<CPGANet<float>> model;
        if (!f.model.checkpoint.empty())
            model.emplace(load_checkpoint<float>(f.model.checkpoint));
        else
            model.emplace(resolve_config(f.model));
        const auto& config = model->config();
        const std::size_t params = count_parameters(*model);
        const auto flops = count_flops(*model, h, w);
        char line[256];
        std::cout << "model\t" << describe(config) << '\n';
        std::snprintf(line, sizeof line, "parameters\t%zu\t(%.4f M)\n", params, params / 1e6);
        std::cout << line;
        std::snprintf(line, sizeof line, "flops@%zux%zu\t%.3f G\t(reference line %.3f G)\n", w, h, flops.total / 1e9,
                      kReferenceGflops);
        std::cout << line;
        std::cout << "module\tparameters\tGFLOPs\n";
        std::map<std::string, std::size_t> param_groups;
        for (const auto& [name, n] : parameter_breakdown(*model)) param_groups[name] = n;
        std::set<std::string> modules;
        for (const auto& [name, n] : param_groups) modules.insert(name);
        for (const auto& [name, n] : flops.by_module) modules.insert(name);
        for (const auto& name : modules) {
            const auto fl = flops.by_module.contains(name) ? flops.by_module.at(name) : 0;
            std::snprintf(line, sizeof line, "  %s\t%zu\t%.3f\n", name.c_str(),
                          param_groups.contains(name) ? param_groups.at(name) : 0, fl / 1e9);
            std::cout << line;
        }
        if (!f.model.ablation.empty()) {
            ModelConfig base = config;
            std::cout << "ablation\tconfiguration\tparameters\tM\treference M\n";
            const char* labels[3] = {"local branch", "local + global gamma branch", "local + global + CPGA blocks"};
            for (int i = 0; i < 3; ++i) {
                const char row = static_cast<char>('a' + i);
                const auto ab = ModelConfig::ablation(row);
                base.enable_global_branch = ab.enable_global_branch;
                base.enable_cpga_blocks = ab.enable_cpga_blocks;
                const std::size_t n = count_parameters(CPGANet<float>(base));
                std::snprintf(line, sizeof line, "%s(%c)\t%s\t%zu\t%.4f\t%.3f\n", row == f.model.ablation[0] ? "*" : " ",
                              row, labels[i], n, n / 1e6, kReferenceTrio[i]);
                std::cout << line;
            }
        }
        return int(kOk);
    });
}

int run(int argc, char** argv) {
    CLI::App app{"Low-light image enhancement: train, enhance, eval, gradcheck, inspect"};
    app.require_subcommand(1);

    auto add_model_flags = [](CLI::App* sub, ModelFlags& m) {
        sub->add_option("--config", m.config, "model config JSON file");
        sub->add_option("--checkpoint", m.checkpoint, "checkpoint file");
        sub->add_option("--ablation", m.ablation, "model ablation row")->check(CLI::IsMember({"a", "b", "c"}));
        sub->add_option("--blocks", m.blocks, "number of CP/CPGA blocks");
        sub->add_option("--seed", m.seed, "random seed");
    };

    TrainFlags tf;
    auto* train = app.add_subcommand("train", "train a model on a paired dataset");
    add_model_flags(train, tf.model);
    train->add_option("--data", tf.data, "dataset root with low/ and high/")->required();
    train->add_option("--out", tf.out, "output directory for checkpoints and log")->required();
    train->add_option("--split", tf.split, "subdirectory of --data holding the training pairs");
    train->add_option("--val-split", tf.val_split, "subdirectory used for validation");
    train->add_option("--low", tf.low, "low-light directory name");
    train->add_option("--high", tf.high, "normal-light directory name");
    train->add_option("--epochs", tf.epochs, "epochs to run")->check(CLI::PositiveNumber);
    train->add_option("--max-steps", tf.max_steps, "stop after this many optimizer steps");
    train->add_option("--batch", tf.batch, "batch size")->check(CLI::PositiveNumber);
    train->add_option("--crop", tf.crop, "random crop size (0 = full images)");
    train->add_option("--lr", tf.lr, "base learning rate")->check(CLI::PositiveNumber);
    train->add_option("--loss", tf.loss, "loss terms, e.g. l1:1,ssim:1");
    train->add_option("--checkpoint-every", tf.checkpoint_every, "epochs between checkpoints");
    train->add_option("--validate-every", tf.validate_every, "epochs between validations");
    train->add_flag("--quiet", tf.quiet, "suppress progress output");

    EnhanceFlags ef;
    auto* enhance = app.add_subcommand("enhance", "enhance PNG images with a trained model");
    enhance->add_option("--checkpoint", ef.checkpoint, "checkpoint file")->required();
    enhance->add_option("--data", ef.data, "input PNG or directory")->required();
    enhance->add_option("--out", ef.out, "output directory (or .png file for a single input)")->required();
    enhance->add_flag("--quiet", ef.quiet, "suppress progress output");

    EvalFlags vf;
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM over a paired dataset");
    eval->add_option("--checkpoint", vf.checkpoint, "checkpoint file (omit to score the low images directly)");
    eval->add_option("--data", vf.data, "dataset root with low/ and high/")->required();
    eval->add_option("--out", vf.out, "also write the rows to this file");
    eval->add_option("--split", vf.split, "subdirectory of --data holding the pairs");
    eval->add_option("--low", vf.low, "low-light directory name");
    eval->add_option("--high", vf.high, "normal-light directory name");
    eval->add_flag("--quiet", vf.quiet, "suppress progress output");

    GradcheckFlags gf;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
    grad->add_option("--op", gf.ops, "restrict to these ops (repeatable)");
    grad->add_option("--seed", gf.seed, "random seed");
    grad->add_option("--instances", gf.instances, "random instances per op (>= 20)");
    grad->add_flag("--quiet", gf.quiet, "suppress the summary line");

    InspectFlags inf;
    auto* inspect = app.add_subcommand("inspect", "parameter and FLOP accounting");
    add_model_flags(inspect, inf.model);
    inspect->add_option("--res", inf.res, "resolution WIDTHxHEIGHT for FLOP counting");
    inspect->add_flag("--quiet", inf.quiet, "no effect; accepted for symmetry");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        for (const auto* sub : app.get_subcommands()) std::cerr << '\n' << sub->help();
        if (app.get_subcommands().empty()) std::cerr << '\n' << app.help();
        return kUsageError;
    }

    if (train->parsed()) return cmd_train(tf);
    if (enhance->parsed()) return cmd_enhance(ef);
    if (eval->parsed()) return cmd_eval(vf);
    if (grad->parsed()) return cmd_gradcheck(gf);
    if (inspect->parsed()) return cmd_inspect(inf);
    return kUsageError;
}

}  // namespace cpga::cli
