#include "cpga/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <numeric>
#include <random>

#include "cpga/png_io.hpp"

namespace cpga {

namespace fs = std::filesystem;

namespace {

std::map<std::string, fs::path> png_stems(const fs::path& dir) {
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto& p = entry.path();
        if (p.extension() == ".png") out.emplace(p.stem().string(), p);
    }
    return out;
}

}  // namespace

DatasetIndex index_dataset(const fs::path& root, const std::string& split, const std::string& low,
                           const std::string& high) {
    const fs::path base = split.empty() ? root : root / split;
    DatasetIndex index;
    index.split = split;
    index.low_dir = base / low;
    index.high_dir = base / high;
    for (const auto& dir : {index.low_dir, index.high_dir})
        if (!fs::is_directory(dir)) throw DataError("missing directory " + dir.string());

    const auto lows = png_stems(index.low_dir);
    const auto highs = png_stems(index.high_dir);
    for (const auto& [stem, path] : lows) {
        if (highs.contains(stem))
            index.stems.push_back(stem);
        else
            index.warnings.push_back("unmatched low image " + path.string());
    }
    for (const auto& [stem, path] : highs)
        if (!lows.contains(stem)) index.warnings.push_back("unmatched high image " + path.string());
    if (index.stems.empty())
        throw DataError("no paired images under " + index.low_dir.string() + " and " + index.high_dir.string());
    // std::map iteration is already lexicographic
    return index;
}

std::vector<fs::path> list_pngs(const fs::path& path) {
    if (fs::is_regular_file(path)) return {path};
    if (!fs::is_directory(path)) throw DataError("no such file or directory: " + path.string());
    std::vector<fs::path> out;
    for (const auto& [stem, p] : png_stems(path)) out.push_back(p);
    return out;
}

template <typename T>
FolderSource<T>::FolderSource(DatasetIndex index, bool cache)
    : index_(std::move(index)), cache_(cache), cached_(cache ? index_.size() : 0) {}

template <typename T>
PairedSample<T> FolderSource<T>::get(std::size_t i) const {
    if (cache_ && cached_.at(i)) return *cached_[i];
    PairedSample<T> s;
    s.id = index_.stems.at(i);
    try {
        s.low = load_png<T>(index_.low_path(i));
        s.gt = load_png<T>(index_.high_path(i));
    } catch (const std::exception& e) {
        throw DataError("sample '" + s.id + "': " + e.what());
    }
    if (s.low.shape() != s.gt.shape())
        throw DataError("sample '" + s.id + "': low " + to_string(s.low.shape()) + " and high " +
                        to_string(s.gt.shape()) + " differ in size");
    if (cache_) cached_[i] = s;
    return s;
}

template <typename T>
MemorySource<T>::MemorySource(std::vector<PairedSample<T>> samples) : samples_(std::move(samples)) {
    for (const auto& s : samples_) {
        if (s.low.shape() != s.gt.shape() || s.low.ndim() != 4 || s.low.shape()[0] != 1 || s.low.shape()[1] != 3)
            throw DataError("sample '" + s.id + "': expected matching [1,3,H,W] pair");
    }
}

CropWindow crop_window(std::size_t h, std::size_t w, std::size_t size, Rng& rng) {
    if (size == 0 || size > h || size > w)
        throw DataError("image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than crop " +
                        std::to_string(size));
    CropWindow win;
    win.size = size;
    win.y = rng.uniform_index(0, h - size);
    win.x = rng.uniform_index(0, w - size);
    return win;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& image, const CropWindow& win) {
    const Shape& s = image.shape();
    if (s.size() != 4) throw ShapeError("crop expects [N,C,H,W], got " + to_string(s));
    if (win.y + win.size > s[2] || win.x + win.size > s[3]) throw DataError("crop window outside image");
    const std::size_t planes = s[0] * s[1];
    std::vector<T> out(planes * win.size * win.size);
    const auto src = image.data();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < win.size; ++y)
            std::memcpy(out.data() + (p * win.size + y) * win.size,
                        src.data() + (p * s[2] + win.y + y) * s[3] + win.x, win.size * sizeof(T));
    return Tensor<T>({s[0], s[1], win.size, win.size}, std::move(out));
}

template <typename T>
PairedSample<T> random_crop_pair(const PairedSample<T>& sample, std::size_t size, Rng& rng, CropWindow* window) {
    const Shape& s = sample.low.shape();
    if (s != sample.gt.shape()) throw DataError("sample '" + sample.id + "': low/high size mismatch");
    CropWindow win;
    try {
        win = crop_window(s[2], s[3], size, rng);
    } catch (const DataError& e) {
        throw DataError("sample '" + sample.id + "': " + e.what());
    }
    if (window) *window = win;
    return {crop(sample.low, win), crop(sample.gt, win), sample.id};
}

void BatchPlan::validate() const {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    if (crop % 2 != 0) throw std::invalid_argument("crop size must be even, got " + std::to_string(crop));
}

std::size_t batches_per_epoch(std::size_t samples, std::size_t batch_size) {
    return (samples + batch_size - 1) / batch_size;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 gen(mix_seed(seed, epoch, 0x5348554646ull));
    std::shuffle(order.begin(), order.end(), gen);
    return order;
}

template <typename T>
Batch<T> make_batch(const PairedSource<T>& source, const BatchPlan& plan, std::size_t epoch, std::size_t index) {
    plan.validate();
    const std::size_t n = source.size();
    if (n == 0) throw DataError("dataset is empty");
    if (index >= batches_per_epoch(n, plan.batch_size)) throw std::out_of_range("batch index out of range");
    const auto order = epoch_order(n, plan.seed, epoch);
    const std::size_t begin = index * plan.batch_size;
    const std::size_t end = std::min(n, begin + plan.batch_size);

    Rng rng(mix_seed(plan.seed, epoch, index + 1));
    Batch<T> batch;
    batch.epoch = epoch;
    batch.index = index;
    std::vector<T> low, gt;
    Shape item_shape;
    for (std::size_t k = begin; k < end; ++k) {
        PairedSample<T> s = source.get(order[k]);
        if (plan.crop > 0) s = random_crop_pair(s, plan.crop, rng);
        if (item_shape.empty())
            item_shape = s.low.shape();
        else if (s.low.shape() != item_shape)
            throw DataError("sample '" + s.id + "': size " + to_string(s.low.shape()) + " differs from batch size " +
                            to_string(item_shape));
        low.insert(low.end(), s.low.data().begin(), s.low.data().end());
        gt.insert(gt.end(), s.gt.data().begin(), s.gt.data().end());
        batch.ids.push_back(s.id);
    }
    Shape shape = item_shape;
    shape[0] = end - begin;
    batch.low = Tensor<T>(shape, std::move(low));
    batch.gt = Tensor<T>(shape, std::move(gt));
    return batch;
}

template <typename T>
BatchStream<T>::BatchStream(const PairedSource<T>& source, BatchPlan plan, std::size_t epoch, std::size_t start_batch)
    : source_(source),
      plan_(plan),
      epoch_(epoch),
      next_(start_batch),
      count_(batches_per_epoch(source.size(), plan.batch_size)) {
    plan_.validate();
}

template <typename T>
std::optional<Batch<T>> BatchStream<T>::next() {
    if (next_ >= count_) return std::nullopt;
    return make_batch(source_, plan_, epoch_, next_++);
}

template class FolderSource<float>;
template class FolderSource<double>;
template class MemorySource<float>;
template class MemorySource<double>;
template class BatchStream<float>;
template class BatchStream<double>;

#define CPGA_INSTANTIATE_DATA(T)                                                                           \
    template Tensor<T> crop(const Tensor<T>&, const CropWindow&);                                          \
    template PairedSample<T> random_crop_pair(const PairedSample<T>&, std::size_t, Rng&, CropWindow*);     \
    template Batch<T> make_batch(const PairedSource<T>&, const BatchPlan&, std::size_t, std::size_t);

CPGA_INSTANTIATE_DATA(float)
CPGA_INSTANTIATE_DATA(double)

}  // namespace cpga
