#include "vapl/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "vapl/errors.hpp"
#include "vapl/random.hpp"

namespace vapl {

AttentionPrompt::AttentionPrompt(std::size_t height, std::size_t width)
    : height_(height), width_(width), values_(height * width, -1) {}

AttentionPrompt::AttentionPrompt(std::size_t height, std::size_t width, std::vector<int> values)
    : height_(height), width_(width) {
    if (values.size() != height * width)
        throw DataError("prompt has " + std::to_string(values.size()) + " values for " + std::to_string(height) + "x" +
                        std::to_string(width));
    values_.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] < -1 || values[i] > 1)
            throw DataError("prompt value " + std::to_string(values[i]) + " at pixel " + std::to_string(i) +
                            " is not in {-1,0,+1}");
        values_.push_back(static_cast<std::int8_t>(values[i]));
    }
}

std::size_t AttentionPrompt::count(PromptLabel v) const {
    return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), static_cast<std::int8_t>(v)));
}

SaliencyMap::SaliencyMap(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != height * width) throw ShapeError("saliency map size mismatch");
    for (double v : values_)
        if (!(v >= 0.0) || !std::isfinite(v)) throw NumericError("saliency values must be finite and >= 0");
}

SaliencyMap SaliencyMap::from_mask(const BinaryMask& m) {
    std::vector<double> v(m.values().begin(), m.values().end());
    return SaliencyMap(m.height(), m.width(), std::move(v));
}

double SaliencyMap::max() const { return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end()); }

std::vector<BinaryMask> sample_perturbations(const AttentionPrompt& prompt, std::size_t count, double p,
                                             std::uint64_t seed, const PerturbationOptions& options) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("perturbation probability must lie in (0,1)");
    if (count == 0) throw ConfigError("number of perturbation masks must be >= 1");
    if (options.cell == 0) throw ConfigError("perturbation cell size must be >= 1");
    const std::size_t H = prompt.height(), W = prompt.width();
    const std::size_t cell = options.cell;
    const std::size_t GH = (H + cell - 1) / cell, GW = (W + cell - 1) / cell;
    std::vector<BinaryMask> masks;
    masks.reserve(count);
    std::vector<std::uint8_t> grid;
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, i));
        BinaryMask m(H, W);
        if (cell > 1) {
            grid.assign(GH * GW, 0);
            for (auto& g : grid) g = uniform01(rng) < p ? 1 : 0;
        }
        for (std::size_t j = 0; j < prompt.size(); ++j) {
            switch (prompt.at(j)) {
                case PromptLabel::Indispensable: m[j] = 1; break;
                case PromptLabel::Precluded: m[j] = 0; break;
                case PromptLabel::Undecided:
                    m[j] = cell > 1 ? grid[(j / W / cell) * GW + (j % W) / cell] : (uniform01(rng) < p ? 1 : 0);
                    break;
            }
        }
        masks.push_back(std::move(m));
    }
    return masks;
}

namespace {

template <class Mask>
Tensor apply_mask_impl(const Tensor& image, const Mask& mask) {
    if (image.rank() != 3 || image.dim(1) != mask.height() || image.dim(2) != mask.width())
        throw ShapeError("mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                         " does not fit image " + shape_str(image.shape()));
    Tensor out = Tensor::like(image);
    const std::size_t hw = mask.size();
    for (std::size_t c = 0; c < image.dim(0); ++c)
        for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = image[c * hw + i] * static_cast<double>(mask[i]);
    return out;
}

}  // namespace

Tensor apply_mask(const Tensor& image, const BinaryMask& mask) { return apply_mask_impl(image, mask); }

Tensor apply_mask(const Tensor& image, const SaliencyMap& mask) {
    for (double v : mask.values())
        if (v > 1.0) throw DataError("saliency mask values must lie in [0,1] before masking");
    return apply_mask_impl(image, mask);
}

BinaryMask binarize_prompt(const AttentionPrompt& prompt, std::uint8_t undecided_as) {
    if (undecided_as > 1) throw ConfigError("undecided_as must be 0 or 1");
    BinaryMask m(prompt.height(), prompt.width());
    for (std::size_t j = 0; j < prompt.size(); ++j) {
        switch (prompt.at(j)) {
            case PromptLabel::Indispensable: m[j] = 1; break;
            case PromptLabel::Precluded: m[j] = 0; break;
            case PromptLabel::Undecided: m[j] = undecided_as; break;
        }
    }
    return m;
}

netpbm::Raster prompt_to_raster(const AttentionPrompt& prompt) {
    netpbm::Raster r{prompt.width(), prompt.height(), 1, 255, {}};
    r.samples.reserve(prompt.size());
    for (std::size_t j = 0; j < prompt.size(); ++j) {
        switch (prompt.at(j)) {
            case PromptLabel::Indispensable: r.samples.push_back(255); break;
            case PromptLabel::Precluded: r.samples.push_back(0); break;
            case PromptLabel::Undecided: r.samples.push_back(128); break;
        }
    }
    return r;
}

AttentionPrompt prompt_from_raster(const netpbm::Raster& r, const std::string& source) {
    if (r.channels != 1 || r.maxval != 255) throw DataError(source + ": prompt must be an 8-bit PGM");
    std::vector<int> v(r.samples.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        switch (r.samples[i]) {
            case 0: v[i] = 0; break;
            case 128: v[i] = -1; break;
            case 255: v[i] = 1; break;
            default:
                throw DataError(source + ": prompt pixel " + std::to_string(i) + " has value " +
                                std::to_string(r.samples[i]) + " (allowed: 0, 128, 255)");
        }
    }
    return AttentionPrompt(r.height, r.width, std::move(v));
}

AttentionPrompt read_prompt(const std::filesystem::path& path) {
    return prompt_from_raster(netpbm::read(path), path.string());
}

void write_prompt(const std::filesystem::path& path, const AttentionPrompt& prompt) {
    netpbm::write(path, prompt_to_raster(prompt));
}

netpbm::Raster mask_to_raster(const BinaryMask& mask) {
    netpbm::Raster r{mask.width(), mask.height(), 1, 255, {}};
    for (std::uint8_t v : mask.values()) r.samples.push_back(v ? 255 : 0);
    return r;
}

BinaryMask mask_from_raster(const netpbm::Raster& r, const std::string& source) {
    if (r.channels != 1) throw DataError(source + ": mask must be a PGM");
    BinaryMask m(r.height, r.width);
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
        if (r.samples[i] != 0 && r.samples[i] != r.maxval)
            throw DataError(source + ": mask pixel " + std::to_string(i) + " is neither 0 nor maxval");
        m[i] = r.samples[i] ? 1 : 0;
    }
    return m;
}

netpbm::Raster saliency_to_raster(const SaliencyMap& map) {
    netpbm::Raster r{map.width(), map.height(), 1, 65535, {}};
    r.samples.reserve(map.size());
    for (double v : map.values()) {
        if (v > 1.0) throw DataError("saliency value above 1 cannot be stored as PGM");
        r.samples.push_back(static_cast<std::uint16_t>(std::lround(65535.0 * v)));
    }
    return r;
}

void write_saliency_pgm(const std::filesystem::path& path, const SaliencyMap& map) {
    netpbm::write(path, saliency_to_raster(map));
}

std::string saliency_to_csv(const SaliencyMap& map) {
    std::string out;
    char buf[32];
    for (std::size_t y = 0; y < map.height(); ++y) {
        for (std::size_t x = 0; x < map.width(); ++x) {
            std::snprintf(buf, sizeof buf, "%.17g", map[y * map.width() + x]);
            if (x) out += ',';
            out += buf;
        }
        out += '\n';
    }
    return out;
}

void write_saliency_csv(const std::filesystem::path& path, const SaliencyMap& map) {
    netpbm::write_file(path, saliency_to_csv(map));
}

}  // namespace vapl
