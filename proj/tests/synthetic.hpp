#pragma once

// In-memory corpora of textured images with one or two labelled ellipses.

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "ifse/dataset.hpp"

namespace ifse::testing {

struct ObjectSpec {
    int class_id;
    cv::Point center;
    cv::Size axes;
};

/// Fixed colour per class so a small network can pick the class up quickly.
inline cv::Scalar class_colour(int class_id) {
    return cv::Scalar((class_id * 67) % 200 + 40, (class_id * 131) % 200 + 40, (class_id * 29) % 200 + 40);
}

inline data::Sample render(int h, int w, const std::vector<ObjectSpec>& objects, std::uint64_t seed) {
    cv::Mat image(h, w, CV_8UC3);
    cv::RNG cv_rng(seed);
    cv_rng.fill(image, cv::RNG::UNIFORM, cv::Scalar::all(0), cv::Scalar::all(90));
    cv::Mat labels = cv::Mat::zeros(h, w, CV_8UC1);
    for (const auto& o : objects) {
        cv::ellipse(image, o.center, o.axes, 0, 0, 360, class_colour(o.class_id), cv::FILLED);
        cv::ellipse(labels, o.center, o.axes, 0, 0, 360, cv::Scalar(o.class_id), cv::FILLED);
    }
    // Light noise on top so the objects are not flat.
    cv::Mat noise(h, w, CV_8UC3);
    cv_rng.fill(noise, cv::RNG::UNIFORM, cv::Scalar::all(0), cv::Scalar::all(20));
    image += noise;
    std::vector<std::uint8_t> v(labels.datastart, labels.dataend);
    return {image, LabelMap(h, w, std::move(v))};
}

struct SyntheticCorpus {
    data::Dataset dataset;
    std::vector<data::Sample> samples;  // in record order
};

/// n images of size h x w; image i holds one object of classes[i % classes.size()]
/// and, when `second_class` > 0, a smaller object of that class in every odd image.
inline SyntheticCorpus make_corpus(int n, const std::vector<int>& classes, int h, int w, std::uint64_t seed,
                                   int second_class = 0) {
    std::mt19937_64 rng(seed);
    std::vector<data::ImageRecord> records;
    std::vector<data::Sample> samples;
    auto store = std::make_shared<data::MemoryImageStore>();
    for (int i = 0; i < n; ++i) {
        std::uniform_int_distribution<int> ax(std::min(h, w) / 6, std::min(h, w) / 3);
        const cv::Size axes(ax(rng), ax(rng));
        std::uniform_int_distribution<int> cr(axes.height, h - 1 - axes.height), cc(axes.width, w - 1 - axes.width);
        std::vector<ObjectSpec> objects{{classes[static_cast<std::size_t>(i) % classes.size()], {cc(rng), cr(rng)}, axes}};
        if (second_class > 0 && i % 2 == 1) {
            objects.push_back({second_class, {w / 8 + 2, h / 8 + 2}, {w / 10 + 1, h / 10 + 1}});
        }
        auto sample = render(h, w, objects, seed * 1000 + static_cast<std::uint64_t>(i));
        data::ImageRecord rec;
        char id[32];
        std::snprintf(id, sizeof(id), "syn_%03d", i);
        rec.id = id;
        const auto present = sample.labels.classes_present();
        rec.classes_present = {present.begin(), present.end()};
        store->put(rec.id, sample);
        records.push_back(rec);
        samples.push_back(std::move(sample));
    }
    return {data::Dataset(std::move(records), store), std::move(samples)};
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("ifse_" + tag + "_" + std::to_string(std::random_device{}()) + std::to_string(std::rand()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

} // namespace ifse::testing
