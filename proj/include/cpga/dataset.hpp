#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpga/rng.hpp"
#include "cpga/tensor.hpp"

namespace cpga {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DatasetIndex {
    std::filesystem::path low_dir;
    std::filesystem::path high_dir;
    std::string split;
    std::vector<std::string> stems;     // sorted, present in both dirs
    std::vector<std::string> warnings;  // unmatched files etc.

    std::size_t size() const { return stems.size(); }
    std::filesystem::path low_path(std::size_t i) const { return low_dir / (stems.at(i) + ".png"); }
    std::filesystem::path high_path(std::size_t i) const { return high_dir / (stems.at(i) + ".png"); }
};

/// Pairs root/<split>/<low>/*.png with root/<split>/<high>/*.png by stem.
/// An empty split reads root/<low> and root/<high> directly.
DatasetIndex index_dataset(const std::filesystem::path& root, const std::string& split = "",
                           const std::string& low = "low", const std::string& high = "high");

/// Sorted list of .png files in a directory (or the file itself).
std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& path);

template <typename T>
struct PairedSample {
    Tensor<T> low;  // [1,3,H,W]
    Tensor<T> gt;   // [1,3,H,W]
    std::string id;
};

template <typename T>
class PairedSource {
public:
    virtual ~PairedSource() = default;
    virtual std::size_t size() const = 0;
    virtual PairedSample<T> get(std::size_t i) const = 0;
};

template <typename T>
class FolderSource final : public PairedSource<T> {
public:
    explicit FolderSource(DatasetIndex index, bool cache = false);
    std::size_t size() const override { return index_.size(); }
    PairedSample<T> get(std::size_t i) const override;
    const DatasetIndex& index() const { return index_; }

private:
    DatasetIndex index_;
    bool cache_;
    mutable std::vector<std::optional<PairedSample<T>>> cached_;
};

template <typename T>
class MemorySource final : public PairedSource<T> {
public:
    explicit MemorySource(std::vector<PairedSample<T>> samples);
    std::size_t size() const override { return samples_.size(); }
    PairedSample<T> get(std::size_t i) const override { return samples_.at(i); }

private:
    std::vector<PairedSample<T>> samples_;
};

struct CropWindow {
    std::size_t y = 0;
    std::size_t x = 0;
    std::size_t size = 0;
    bool operator==(const CropWindow&) const = default;
};

/// Uniform offset over all valid positions of a size x size window.
CropWindow crop_window(std::size_t h, std::size_t w, std::size_t size, Rng& rng);

template <typename T> Tensor<T> crop(const Tensor<T>& image, const CropWindow& window);

template <typename T>
PairedSample<T> random_crop_pair(const PairedSample<T>& sample, std::size_t size, Rng& rng,
                                 CropWindow* window = nullptr);

struct BatchPlan {
    std::size_t batch_size = 8;
    std::size_t crop = 256;  // 0 keeps full images (they must share a size)
    std::uint64_t seed = 0;

    void validate() const;
};

std::size_t batches_per_epoch(std::size_t samples, std::size_t batch_size);

/// Seeded permutation of [0, n) for an epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

template <typename T>
struct Batch {
    Tensor<T> low;  // [B,3,S,S]
    Tensor<T> gt;
    std::vector<std::string> ids;
    std::size_t epoch = 0;
    std::size_t index = 0;
};

/// Batch `index` of `epoch`. Crop offsets come from a generator seeded by
/// (seed, epoch, index), so any batch can be rebuilt without replay.
template <typename T>
Batch<T> make_batch(const PairedSource<T>& source, const BatchPlan& plan, std::size_t epoch, std::size_t index);

template <typename T>
class BatchStream {
public:
    BatchStream(const PairedSource<T>& source, BatchPlan plan, std::size_t epoch, std::size_t start_batch = 0);
    std::optional<Batch<T>> next();
    std::size_t size() const { return count_; }

private:
    const PairedSource<T>& source_;
    BatchPlan plan_;
    std::size_t epoch_;
    std::size_t next_;
    std::size_t count_;
};

extern template class FolderSource<float>;
extern template class FolderSource<double>;
extern template class MemorySource<float>;
extern template class MemorySource<double>;
extern template class BatchStream<float>;
extern template class BatchStream<double>;

}  // namespace cpga
