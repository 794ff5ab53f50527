#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vapl/prompt.hpp"
#include "vapl/tensor.hpp"

namespace vapl {

// Two-class synthetic task: positives carry a disk-shaped lesion; every image
// carries a square artifact whose brightness correlates with the label at
// `spurious_train` in the train/val splits and `spurious_test` in the test split.
struct SyntheticSpec {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 1;
    std::size_t train = 200;
    std::size_t val = 100;
    std::size_t test = 200;
    double positive_fraction = 0.5;
    double background = 0.3;
    double noise = 0.12;
    std::size_t lesion_radius_min = 3;
    std::size_t lesion_radius_max = 5;
    double lesion_intensity = 0.7;
    std::size_t artifact_size = 6;
    double artifact_bright = 0.95;
    double artifact_dim = 0.6;
    double spurious_train = 0.7;
    double spurious_test = 0.5;
    double coverage = 0.6;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

struct Sample {
    Tensor image;  // [C,H,W], values are multiples of 1/255
    std::size_t label = 0;
    BinaryMask truth;
    AttentionPrompt prompt;

    friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// A generated sample together with the artifact region used to build its prompt.
struct SyntheticSample {
    Sample sample;
    BinaryMask artifact;
};

// `spurious` is P(bright artifact | positive) = P(dim artifact | negative).
SyntheticSample generate_sample(const SyntheticSpec& spec, bool positive, double spurious, std::uint64_t seed);

Dataset generate_dataset(const SyntheticSpec& spec);

// Marks round(coverage * |truth|) truth pixels +1 and round(coverage * |artifact|)
// artifact pixels 0; everything else -1. An empty truth mask yields no +1 pixels.
AttentionPrompt synthesize_prompt(const BinaryMask& truth, const BinaryMask& artifact, double coverage,
                                  std::uint64_t seed);

// Layout: {split}/{index}.img.ppm, {split}/{index}.prompt.pgm,
// {split}/{index}.truth.pgm and labels.csv (index,split,label).
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Stacks sample images into [B,C,H,W].
Tensor batch_images(const std::vector<const Sample*>& samples);

}  // namespace vapl
