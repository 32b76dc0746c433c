#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cpga::cli {

enum ExitCode : int {
    kOk = 0,
    kPartialFailure = 1,
    kUsageError = 2,
    kDataError = 3,
    kNumericAbort = 4,
    kGradcheckFailure = 5,
};

struct ModelFlags {
    std::string config;      // JSON model config
    std::string checkpoint;
    std::string ablation;    // a | b | c
    std::optional<std::size_t> blocks;
    std::optional<std::uint64_t> seed;
};

struct TrainFlags {
    ModelFlags model;
    std::string data, out, split, val_split, low = "low", high = "high";
    std::size_t epochs = 600;
    std::uint64_t max_steps = 0;
    std::size_t batch = 8;
    std::size_t crop = 256;
    double lr = 1e-3;
    std::string loss = "l1,perceptual,hdr,ssim";
    std::size_t checkpoint_every = 1;
    std::size_t validate_every = 10;
    bool quiet = false;
};

struct EnhanceFlags {
    std::string checkpoint, data, out;
    bool quiet = false;
};

struct EvalFlags {
    std::string checkpoint, data, out, split, low = "low", high = "high";
    bool quiet = false;
};

struct GradcheckFlags {
    std::vector<std::string> ops;
    std::uint64_t seed = 0;
    std::size_t instances = 20;
    bool quiet = false;
};

struct InspectFlags {
    ModelFlags model;
    std::string res = "600x400";
    bool quiet = false;
};

int cmd_train(const TrainFlags& flags);
int cmd_enhance(const EnhanceFlags& flags);
int cmd_eval(const EvalFlags& flags);
int cmd_gradcheck(const GradcheckFlags& flags);
int cmd_inspect(const InspectFlags& flags);

/// Parses argv and dispatches to a subcommand; returns the process exit code.
int run(int argc, char** argv);

}  // namespace cpga::cli
