#include "cpga/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

namespace cpga {

namespace fs = std::filesystem;

template <typename T>
void adam_step(const ParameterList<T>& params, AdamState<T>& state, double lr, const AdamConfig& config) {
    if (!(lr > 0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be positive");
    if (state.m.empty() && state.step == 0) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor.numel(), T(0));
            state.v.emplace_back(p.tensor.numel(), T(0));
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ShapeError("optimizer state holds " + std::to_string(state.m.size()) + " tensors, model has " +
                         std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i)
        if (state.m[i].size() != params[i].tensor.numel() || state.v[i].size() != params[i].tensor.numel())
            throw ShapeError("optimizer state size mismatch for '" + params[i].name + "'");

    ++state.step;
    const T b1 = static_cast<T>(config.beta1);
    const T b2 = static_cast<T>(config.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(config.beta1, static_cast<double>(state.step)));
    const T c2 = static_cast<T>(1.0 - std::pow(config.beta2, static_cast<double>(state.step)));
    const T eta = static_cast<T>(lr);
    const T eps = static_cast<T>(config.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T> p = params[i].tensor;
        auto w = p.mutable_data();
        const auto g = p.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const bool has = !g.empty();
        for (std::size_t k = 0; k < w.size(); ++k) {
            const T gk = has ? g[k] : T(0);
            m[k] = b1 * m[k] + (T(1) - b1) * gk;
            v[k] = b2 * v[k] + (T(1) - b2) * gk * gk;
            const T mhat = m[k] / c1;
            const T vhat = v[k] / c2;
            w[k] -= eta * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template void adam_step(const ParameterList<float>&, AdamState<float>&, double, const AdamConfig&);
template void adam_step(const ParameterList<double>&, AdamState<double>&, double, const AdamConfig&);

void Schedule::validate() const {
    if (!(base_lr > 0) || !std::isfinite(base_lr)) throw std::invalid_argument("base learning rate must be positive");
    if (!(min_lr >= 0) || min_lr > base_lr) throw std::invalid_argument("min learning rate must lie in [0, base]");
    if (total_epochs == 0) throw std::invalid_argument("total epochs must be positive");
}

double Schedule::lr_at(std::size_t epoch) const {
    if (epoch >= total_epochs)
        throw std::out_of_range("epoch " + std::to_string(epoch) + " outside schedule of " +
                                std::to_string(total_epochs) + " epochs");
    if (cycle == 0) return base_lr;
    const double phase = static_cast<double>(epoch % cycle) / static_cast<double>(cycle);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * phase));
}

std::string format_log_line(const LogRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu\t%llu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g", r.epoch,
                  static_cast<unsigned long long>(r.step), r.l1, r.perceptual, r.hdr_l1, r.ssim, r.total, r.lr);
    return buf;
}

nlohmann::json to_json(const LossSpec& s) {
    return {{"l1", s.l1}, {"perceptual", s.perceptual}, {"hdr_l1", s.hdr_l1}, {"ssim", s.ssim}, {"mu", s.mu}};
}

LossSpec loss_spec_from_json(const nlohmann::json& j) {
    LossSpec s;
    s.l1 = j.at("l1").get<double>();
    s.perceptual = j.at("perceptual").get<double>();
    s.hdr_l1 = j.at("hdr_l1").get<double>();
    s.ssim = j.at("ssim").get<double>();
    s.mu = j.at("mu").get<double>();
    s.validate();
    return s;
}

nlohmann::json to_json(const Schedule& s) {
    return {{"base_lr", s.base_lr}, {"min_lr", s.min_lr}, {"total_epochs", s.total_epochs}, {"cycle", s.cycle}};
}

Schedule schedule_from_json(const nlohmann::json& j) {
    Schedule s;
    s.base_lr = j.at("base_lr").get<double>();
    s.min_lr = j.at("min_lr").get<double>();
    s.total_epochs = j.at("total_epochs").get<std::size_t>();
    s.cycle = j.at("cycle").get<std::size_t>();
    s.validate();
    return s;
}

template <typename T>
ValidationResult evaluate(const CPGANet<T>& model, const PairedSource<T>& data) {
    NoGradGuard guard;
    ValidationResult r;
    if (data.size() == 0) return r;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto s = data.get(i);
        const auto y = model.forward(s.low);
        r.psnr += psnr(y, s.gt);
        r.ssim += ssim(y, s.gt);
    }
    r.psnr /= static_cast<double>(data.size());
    r.ssim /= static_cast<double>(data.size());
    return r;
}

template ValidationResult evaluate(const CPGANet<float>&, const PairedSource<float>&);
template ValidationResult evaluate(const CPGANet<double>&, const PairedSource<double>&);

Trainer::Trainer(TrainOptions options, const PairedSource<float>& train, const PairedSource<float>* val)
    : options_(std::move(options)), train_(train), val_(val) {
    options_.model.validate();
    options_.loss.validate();
    options_.schedule.validate();
    options_.batch.validate();
    if (train_.size() == 0) throw DataError("training set is empty");
    model_ = std::make_unique<CPGANet<float>>(options_.model);
    if (options_.extractor_weights.empty())
        extractor_ = std::make_unique<ConvPyramidExtractor<float>>(ConvPyramidExtractor<float>::random());
    else
        extractor_ = std::make_unique<ConvPyramidExtractor<float>>(
            ConvPyramidExtractor<float>::from_file(options_.extractor_weights));
}

CheckpointFile Trainer::make_checkpoint() const {
    CheckpointFile file = make_model_checkpoint(*model_);
    nlohmann::json train;
    train["epoch"] = epoch_;
    train["batch"] = batch_;
    train["step"] = step_;
    train["loss"] = to_json(options_.loss);
    train["schedule"] = to_json(options_.schedule);
    train["batch_size"] = options_.batch.batch_size;
    train["crop"] = options_.batch.crop;
    train["seed"] = options_.batch.seed;
    train["adam"] = {{"beta1", options_.adam.beta1},
                     {"beta2", options_.adam.beta2},
                     {"eps", options_.adam.eps},
                     {"step", adam_.step}};
    if (best_) train["best"] = {{"psnr", best_->psnr}, {"ssim", best_->ssim}};
    file.meta["train"] = train;
    if (!adam_.m.empty()) {
        const auto params = model_->parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& shape = params[i].tensor.shape();
            file.tensors.push_back({"optim.m." + params[i].name, shape, adam_.m[i]});
            file.tensors.push_back({"optim.v." + params[i].name, shape, adam_.v[i]});
        }
    }
    return file;
}

void Trainer::restore(const CheckpointFile& file) {
    if (!file.meta.contains("train")) throw CheckpointFormatError("checkpoint holds no training state");
    const auto& t = file.meta["train"];
    try {
        options_.model = model_config_from_json(file.meta.at("model"));
        options_.loss = loss_spec_from_json(t.at("loss"));
        options_.schedule = schedule_from_json(t.at("schedule"));
        options_.batch.batch_size = t.at("batch_size").get<std::size_t>();
        options_.batch.crop = t.at("crop").get<std::size_t>();
        options_.batch.seed = t.at("seed").get<std::uint64_t>();
        const auto& a = t.at("adam");
        options_.adam = {a.at("beta1").get<double>(), a.at("beta2").get<double>(), a.at("eps").get<double>()};
        epoch_ = t.at("epoch").get<std::size_t>();
        batch_ = t.at("batch").get<std::size_t>();
        step_ = t.at("step").get<std::uint64_t>();
        adam_ = {};
        adam_.step = a.at("step").get<std::uint64_t>();
        best_.reset();
        if (t.contains("best")) best_ = ValidationResult{t["best"].at("psnr"), t["best"].at("ssim")};
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointFormatError(std::string("malformed training metadata: ") + e.what());
    }
    model_ = std::make_unique<CPGANet<float>>(options_.model);
    load_weights(*model_, file);
    if (adam_.step > 0) {
        for (const auto& p : model_->parameters()) {
            for (const char* kind : {"optim.m.", "optim.v."}) {
                const StoredTensor* s = file.find(kind + p.name);
                if (!s) throw MissingTensorError(std::string("checkpoint lacks '") + kind + p.name + "'");
                if (s->shape != p.tensor.shape())
                    throw TensorShapeMismatchError("optimizer state shape mismatch for '" + p.name + "'");
                (kind[6] == 'm' ? adam_.m : adam_.v).push_back(s->values);
            }
        }
    }
}

void Trainer::save(const std::string& name) const {
    if (options_.out_dir.empty()) return;
    write_checkpoint(options_.out_dir / name, make_checkpoint());
}

void Trainer::append_log(const LogRecord& r) const {
    if (options_.out_dir.empty()) return;
    const fs::path path = options_.out_dir / "train.log";
    const bool fresh = !fs::exists(path);
    std::ofstream os(path, std::ios::app);
    if (!os) throw std::runtime_error("cannot append to " + path.string());
    if (fresh) os << kLogHeader << '\n';
    os << format_log_line(r) << '\n';
}

TrainResult Trainer::run() {
    if (!options_.out_dir.empty()) fs::create_directories(options_.out_dir);
    TrainResult result;
    const std::size_t per_epoch = batches_per_epoch(train_.size(), options_.batch.batch_size);
    if (options_.epochs > options_.schedule.total_epochs)
        throw std::invalid_argument("requested " + std::to_string(options_.epochs) + " epochs but the schedule covers " +
                                    std::to_string(options_.schedule.total_epochs));
    const auto params = model_->parameters();
    bool stop = false;

    while (epoch_ < options_.epochs && !stop) {
        const double lr = options_.schedule.lr_at(epoch_);
        BatchStream<float> stream(train_, options_.batch, epoch_, batch_);
        while (true) {
            if (options_.max_steps && step_ >= options_.max_steps) {
                stop = true;
                break;
            }
            auto batch = stream.next();
            if (!batch) break;
            zero_grads(params);
            const auto y = model_->forward_detailed(batch->low).unclamped;
            auto loss = total_loss(y, batch->gt, options_.loss, *extractor_);
            LogRecord rec{epoch_, step_ + 1, loss.l1, loss.perceptual, loss.hdr_l1, loss.ssim,
                          static_cast<double>(loss.total.item()), lr};
            if (!std::isfinite(rec.total)) {
                append_log(rec);
                throw NumericError("non-finite loss at step " + std::to_string(rec.step) + " (epoch " +
                                       std::to_string(epoch_) + ", batch " + std::to_string(batch->index) + ")",
                                   rec.step);
            }
            loss.total.backward();
            adam_step(params, adam_, lr, options_.adam);
            ++step_;
            batch_ = batch->index + 1;
            append_log(rec);
            result.records.push_back(rec);
            if (on_step) on_step(rec);
        }
        if (stop) break;
        if (batch_ >= per_epoch) {
            const std::size_t finished = epoch_;
            ++epoch_;
            batch_ = 0;
            if (val_ && options_.validate_every && (finished + 1) % options_.validate_every == 0) {
                const auto v = evaluate(*model_, *val_);
                if (!options_.quiet)
                    std::cerr << "epoch " << finished << " validation psnr " << v.psnr << " ssim " << v.ssim << '\n';
                if (!best_ || v.psnr > best_->psnr) {
                    best_ = v;
                    save("best.ckpt");
                }
            }
            if (options_.checkpoint_every && (finished + 1) % options_.checkpoint_every == 0) save("last.ckpt");
            if (!options_.quiet && !result.records.empty())
                std::cerr << "epoch " << finished << " step " << step_ << " loss " << result.records.back().total
                          << " lr " << lr << '\n';
        }
    }
    save("last.ckpt");
    save("final.ckpt");
    result.steps = step_;
    result.epoch = epoch_;
    result.batch = batch_;
    result.best = best_;
    return result;
}

}  // namespace cpga
