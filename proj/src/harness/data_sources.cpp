#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "mimir/harness.hpp"

namespace mimir::harness {

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPlane = kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarPlane;

void append_cifar(Dataset& d, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open CIFAR-10 file '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.empty() || bytes.size() % kCifarRecord != 0)
        throw std::runtime_error("CIFAR-10 file '" + path + "' has length " + std::to_string(bytes.size()) +
                                 ", not a positive multiple of 3073");
    std::size_t records = bytes.size() / kCifarRecord;
    d.pixels.reserve(d.pixels.size() + records * 3 * kCifarPlane);
    for (std::size_t r = 0; r < records; ++r) {
        const unsigned char* rec = bytes.data() + r * kCifarRecord;
        if (rec[0] > 9)
            throw std::runtime_error("CIFAR-10 file '" + path + "': record " + std::to_string(r) + " has label " +
                                     std::to_string(rec[0]));
        d.labels.push_back(rec[0]);
        for (std::size_t i = 1; i < kCifarRecord; ++i) d.pixels.push_back(rec[i] / 255.0);
    }
}

Dataset empty_cifar(const std::string& split) {
    Dataset d;
    d.channels = 3;
    d.image_size = kCifarSide;
    d.num_classes = 10;
    d.split = split;
    return d;
}

}  // namespace

Dataset load_cifar10_file(const std::string& path) {
    Dataset d = empty_cifar("file");
    append_cifar(d, path);
    return d;
}

Dataset load_cifar10_binary(const std::string& dir, const std::string& split) {
    namespace fs = std::filesystem;
    std::vector<std::string> names;
    if (split == "train") {
        for (int i = 1; i <= 5; ++i) names.push_back("data_batch_" + std::to_string(i) + ".bin");
    } else if (split == "test") {
        names.push_back("test_batch.bin");
    } else {
        throw std::invalid_argument("load_cifar10_binary: unknown split '" + split + "'");
    }
    Dataset d = empty_cifar(split);
    std::size_t found = 0;
    for (const auto& n : names) {
        fs::path p = fs::path(dir) / n;
        if (!fs::exists(p)) continue;
        append_cifar(d, p.string());
        ++found;
    }
    if (found == 0) throw std::runtime_error("no CIFAR-10 " + split + " batch files in '" + dir + "'");
    return d;
}

std::vector<double> class_template(std::size_t label, std::size_t num_classes, std::size_t image_size,
                                   std::size_t channels, double contrast) {
    if (label >= num_classes) throw std::invalid_argument("class_template: label out of range");
    double theta = std::numbers::pi * static_cast<double>(label) / static_cast<double>(num_classes);
    double c = std::cos(theta), s = std::sin(theta);
    constexpr double kCycles = 2.0;
    double side = static_cast<double>(image_size);
    std::vector<double> out(channels * image_size * image_size);
    for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t y = 0; y < image_size; ++y)
            for (std::size_t x = 0; x < image_size; ++x) {
                double u = (static_cast<double>(x) * c + static_cast<double>(y) * s) / side;
                out[(ch * image_size + y) * image_size + x] =
                    0.5 + 0.5 * contrast * std::cos(2.0 * std::numbers::pi * kCycles * u);
            }
    return out;
}

Dataset synth_dataset(std::size_t num_classes, std::size_t samples_per_class, std::size_t image_size, double noise,
                      Rng& rng, std::size_t channels, double contrast) {
    if (num_classes < 2) throw std::invalid_argument("synth_dataset: need at least 2 classes");
    if (samples_per_class == 0 || image_size == 0 || channels == 0)
        throw std::invalid_argument("synth_dataset: sizes must be positive");
    if (!(noise >= 0.0)) throw std::invalid_argument("synth_dataset: noise must be non-negative");
    if (!(contrast > 0.0 && contrast <= 1.0)) throw std::invalid_argument("synth_dataset: contrast must lie in (0, 1]");

    std::vector<std::vector<double>> templates;
    for (std::size_t k = 0; k < num_classes; ++k)
        templates.push_back(class_template(k, num_classes, image_size, channels, contrast));

    Dataset d;
    d.channels = channels;
    d.image_size = image_size;
    d.num_classes = num_classes;
    d.split = "synthetic";
    // Classes interleave so that any prefix is close to balanced.
    for (std::size_t i = 0; i < samples_per_class * num_classes; ++i) {
        std::size_t k = i % num_classes;
        d.labels.push_back(static_cast<int>(k));
        for (double t : templates[k]) {
            double v = noise > 0.0 ? t + rng.uniform(-noise, noise) : t;
            d.pixels.push_back(std::clamp(v, 0.0, 1.0));
        }
    }
    return d;
}

}  // namespace mimir::harness
