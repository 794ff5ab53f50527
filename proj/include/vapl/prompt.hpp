#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vapl/netpbm.hpp"
#include "vapl/tensor.hpp"

namespace vapl {

// Per-pixel trinary prompt values.
enum class PromptLabel : std::int8_t { Undecided = -1, Precluded = 0, Indispensable = 1 };

class AttentionPrompt {
public:
    AttentionPrompt() = default;
    // Every pixel undecided.
    AttentionPrompt(std::size_t height, std::size_t width);
    // Throws DataError unless every value is -1, 0 or +1.
    AttentionPrompt(std::size_t height, std::size_t width, std::vector<int> values);

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t size() const { return values_.size(); }

    PromptLabel at(std::size_t i) const { return static_cast<PromptLabel>(values_[i]); }
    PromptLabel at(std::size_t y, std::size_t x) const { return at(y * width_ + x); }
    void set(std::size_t i, PromptLabel v) { values_[i] = static_cast<std::int8_t>(v); }
    int value(std::size_t i) const { return values_[i]; }

    std::size_t count(PromptLabel v) const;

    friend bool operator==(const AttentionPrompt&, const AttentionPrompt&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<std::int8_t> values_;
};

class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(std::size_t height, std::size_t width, std::uint8_t fill = 0)
        : height_(height), width_(width), values_(height * width, fill) {}

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t size() const { return values_.size(); }
    std::uint8_t operator[](std::size_t i) const { return values_[i]; }
    std::uint8_t& operator[](std::size_t i) { return values_[i]; }
    const std::vector<std::uint8_t>& values() const { return values_; }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<std::uint8_t> values_;
};

// Non-negative per-pixel importance.
class SaliencyMap {
public:
    SaliencyMap() = default;
    SaliencyMap(std::size_t height, std::size_t width, std::vector<double> values);
    static SaliencyMap from_mask(const BinaryMask& m);

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t size() const { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    const std::vector<double>& values() const { return values_; }
    double max() const;

    friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> values_;
};

struct PerturbationOptions {
    // >1 enables RISE-style coarse sampling: one draw per cell x cell block of
    // undecided pixels. 1 means independent per-pixel draws.
    std::size_t cell = 1;
};

// N masks from D: +1 -> 1, 0 -> 0, -1 -> 1 with probability p. Mask i is drawn
// from its own sub-seed derived from (seed, i).
std::vector<BinaryMask> sample_perturbations(const AttentionPrompt& prompt, std::size_t count, double p,
                                             std::uint64_t seed, const PerturbationOptions& options = {});

// out[c,h,w] = image[c,h,w] * mask[h,w]
Tensor apply_mask(const Tensor& image, const BinaryMask& mask);
Tensor apply_mask(const Tensor& image, const SaliencyMap& mask);

// +1 -> 1, 0 -> 0, -1 -> undecided_as
BinaryMask binarize_prompt(const AttentionPrompt& prompt, std::uint8_t undecided_as);

// Prompt PGM encoding: 0 precluded, 128 undecided, 255 indispensable.
netpbm::Raster prompt_to_raster(const AttentionPrompt& prompt);
AttentionPrompt prompt_from_raster(const netpbm::Raster& raster, const std::string& source);
AttentionPrompt read_prompt(const std::filesystem::path& path);
void write_prompt(const std::filesystem::path& path, const AttentionPrompt& prompt);

// Binary mask as an 8-bit PGM with values 0/255.
netpbm::Raster mask_to_raster(const BinaryMask& mask);
BinaryMask mask_from_raster(const netpbm::Raster& raster, const std::string& source);

// Saliency as 16-bit PGM, value round(65535*A); A must lie in [0,1].
netpbm::Raster saliency_to_raster(const SaliencyMap& map);
void write_saliency_pgm(const std::filesystem::path& path, const SaliencyMap& map);
// One row per image row, comma separated, full round-trip precision.
std::string saliency_to_csv(const SaliencyMap& map);
void write_saliency_csv(const std::filesystem::path& path, const SaliencyMap& map);

}  // namespace vapl
