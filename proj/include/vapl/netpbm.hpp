#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vapl/tensor.hpp"

namespace vapl::netpbm {

// Binary P5 (grey) or P6 (RGB) raster. Samples are interleaved, row-major.
struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::uint16_t maxval = 255;
    std::vector<std::uint16_t> samples;

    friend bool operator==(const Raster&, const Raster&) = default;
};

// `source` names the payload in error messages (a path or "request body").
Raster parse(std::string_view bytes, const std::string& source);
std::string encode(const Raster& raster);

Raster read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Raster& raster);

// Samples scaled by 1/maxval into a [C,H,W] tensor.
Tensor to_tensor(const Raster& raster);
// [C,H,W] tensor in [0,1] to an 8-bit raster, round(255*v).
Raster from_tensor(const Tensor& image);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace vapl::netpbm
