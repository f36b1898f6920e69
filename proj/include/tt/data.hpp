// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tt {

struct Sample {
    std::string id;
    std::vector<float> image;  // image_size x image_size x 3, row-major, [0,1]
    int label = 0;
    std::string caption;
};

struct DatasetSpec {
    std::size_t n_samples = 6000;
    std::size_t image_size = 32;
    std::size_t n_colors = 4;
    std::size_t n_shapes = 3;
    double pixel_noise_std = 0.05;
    std::uint64_t seed = 1;

    std::size_t n_classes() const { return n_colors * n_shapes; }
    void validate() const;
};

struct Dataset {
    std::size_t image_size = 32;
    std::size_t channels = 3;
    std::vector<std::string> classes;
    std::vector<Sample> samples;

    std::size_t n_classes() const { return classes.size(); }
    std::size_t size() const { return samples.size(); }
    std::vector<int> labels() const;
    std::vector<std::string> ids() const;
    std::vector<std::string> captions() const;
};

// One colored shape per image on a noisy dark background, at a random
// position and size. Stratified by class (sample i gets class i mod C), so
// class counts differ by at most one. The caption names color, shape and the
// coarse 3x3 grid cell of the center: "red triangle at top left" -- the
// position is information the label does not carry. All randomness comes
// from one xoshiro256++ stream, so the dataset is identical across platforms
// for a fixed seed.
Dataset generate_shapes(const DatasetSpec& spec);

// Each label is independently replaced, with probability rho, by a uniform
// draw over the other C-1 classes. rho above 0.5 warns on stderr (outside
// the studied range) but proceeds.
std::vector<int> inject_label_noise(const std::vector<int>& labels, double rho,
                                    int n_classes, std::uint64_t seed);

// Stratified subsample without replacement; per-class counts are rounded to
// fraction * count. A class that would round to zero samples is an error.
Dataset subset(const Dataset& dataset, double fraction, std::uint64_t seed);

// On-disk layout: <dir>/manifest.json plus one raw little-endian f32 file of
// n * H * W * 3 pixels in sample order.
void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace tt
