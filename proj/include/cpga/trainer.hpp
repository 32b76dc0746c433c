#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpga/checkpoint.hpp"
#include "cpga/dataset.hpp"
#include "cpga/losses.hpp"
#include "cpga/model.hpp"

namespace cpga {

class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, std::uint64_t step) : std::runtime_error(what), step_(step) {}
    std::uint64_t step() const { return step_; }

private:
    std::uint64_t step_;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update over all parameters. Parameters without an
/// accumulated gradient are treated as having zero gradient. Moments are
/// allocated on the first call.
template <typename T>
void adam_step(const ParameterList<T>& params, AdamState<T>& state, double lr, const AdamConfig& config = {});

/// Per-epoch cosine annealing with warm restarts every `cycle` epochs.
/// cycle == 0 keeps the rate constant at base_lr.
struct Schedule {
    double base_lr = 1e-3;
    double min_lr = 0.0;
    std::size_t total_epochs = 600;
    std::size_t cycle = 67;

    double lr_at(std::size_t epoch) const;
    void validate() const;
};

struct LogRecord {
    std::size_t epoch = 0;
    std::uint64_t step = 0;
    double l1 = 0, perceptual = 0, hdr_l1 = 0, ssim = 0, total = 0;
    double lr = 0;
};

std::string format_log_line(const LogRecord& r);
inline constexpr const char* kLogHeader = "# epoch\tstep\tl1\tperceptual\thdr_l1\tssim\ttotal\tlr";

struct TrainOptions {
    ModelConfig model;
    LossSpec loss;
    Schedule schedule;
    BatchPlan batch;
    AdamConfig adam;
    std::size_t epochs = 600;      // stop before this epoch
    std::uint64_t max_steps = 0;   // 0 = no step limit
    std::size_t checkpoint_every = 1;
    std::size_t validate_every = 10;
    std::filesystem::path out_dir;  // empty = keep everything in memory
    std::filesystem::path extractor_weights;  // empty = default random pyramid
    bool quiet = true;
};

struct ValidationResult {
    double psnr = 0;
    double ssim = 0;
};

struct TrainResult {
    std::uint64_t steps = 0;
    std::size_t epoch = 0;
    std::size_t batch = 0;
    std::vector<LogRecord> records;  // records produced by this run() call
    std::optional<ValidationResult> best;
};

template <typename T>
ValidationResult evaluate(const CPGANet<T>& model, const PairedSource<T>& data);

/// Training driver for single-precision models. The position (epoch, next
/// batch, step), the Adam moments, and the full configuration are written
/// with every checkpoint so a resumed run replays the uninterrupted one.
class Trainer {
public:
    Trainer(TrainOptions options, const PairedSource<float>& train, const PairedSource<float>* val = nullptr);

    /// Restores model, optimizer, position, and the model/loss/schedule/batch
    /// configuration from a training checkpoint. epochs, max_steps, cadence,
    /// and out_dir stay as given.
    void restore(const CheckpointFile& file);
    void restore(const std::filesystem::path& path) { restore(read_checkpoint(path)); }

    TrainResult run();

    /// Model tensors plus optimizer state and training metadata.
    CheckpointFile make_checkpoint() const;

    CPGANet<float>& model() { return *model_; }
    const CPGANet<float>& model() const { return *model_; }
    const AdamState<float>& optimizer() const { return adam_; }
    const TrainOptions& options() const { return options_; }
    std::uint64_t step() const { return step_; }

    std::function<void(const LogRecord&)> on_step;

private:
    void save(const std::string& name) const;
    void append_log(const LogRecord& r) const;

    TrainOptions options_;
    const PairedSource<float>& train_;
    const PairedSource<float>* val_;
    std::unique_ptr<CPGANet<float>> model_;
    std::unique_ptr<FeatureExtractor<float>> extractor_;
    AdamState<float> adam_;
    std::size_t epoch_ = 0;
    std::size_t batch_ = 0;
    std::uint64_t step_ = 0;
    std::optional<ValidationResult> best_;
};

nlohmann::json to_json(const LossSpec& spec);
LossSpec loss_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Schedule& schedule);
Schedule schedule_from_json(const nlohmann::json& j);

}  // namespace cpga
