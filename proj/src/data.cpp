#include "vapl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "vapl/errors.hpp"
#include "vapl/random.hpp"

namespace vapl {

void SyntheticSpec::validate() const {
    if (height == 0 || width == 0 || channels == 0) throw ConfigError("data: image dimensions must be >= 1");
    if (channels != 1 && channels != 3) throw ConfigError("data: channels must be 1 or 3");
    if (train == 0 || val == 0 || test == 0) throw ConfigError("data: split counts must be >= 1");
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) throw ConfigError("data: positive_fraction in (0,1)");
    if (lesion_radius_min == 0 || lesion_radius_min > lesion_radius_max)
        throw ConfigError("data: need 1 <= lesion_radius_min <= lesion_radius_max");
    if (artifact_size == 0) throw ConfigError("data: artifact_size must be >= 1");
    if (!(coverage > 0.0 && coverage <= 1.0)) throw ConfigError("data: coverage must lie in (0,1]");
    for (double v : {spurious_train, spurious_test})
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("data: spurious rates must lie in [0,1]");
    if (noise < 0.0) throw ConfigError("data: noise must be >= 0");
    const std::size_t lesion_span = 2 * lesion_radius_max + 1;
    if (lesion_span + artifact_size + 1 > std::max(height, width) || lesion_span > std::min(height, width) ||
        artifact_size > std::min(height, width))
        throw ConfigError("data: lesion and artifact shapes do not fit in " + std::to_string(height) + "x" +
                          std::to_string(width));
}

namespace {

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

double gaussian(Rng& rng) {
    // Box-Muller on our own uniforms keeps generation identical across standard libraries.
    const double u1 = 1.0 - uniform01(rng), u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace

SyntheticSample generate_sample(const SyntheticSpec& spec, bool positive, double spurious, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t H = spec.height, W = spec.width;
    SyntheticSample out;
    out.sample.label = positive ? 1 : 0;
    out.sample.truth = BinaryMask(H, W);
    out.artifact = BinaryMask(H, W);

    const std::size_t radius =
        spec.lesion_radius_min + uniform_index(rng, spec.lesion_radius_max - spec.lesion_radius_min + 1);
    const std::size_t a = spec.artifact_size;
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        const std::size_t cy = radius + uniform_index(rng, H - 2 * radius);
        const std::size_t cx = radius + uniform_index(rng, W - 2 * radius);
        const std::size_t ay = uniform_index(rng, H - a + 1);
        const std::size_t ax = uniform_index(rng, W - a + 1);
        // bounding boxes separated by at least one pixel
        const bool apart = ay > cy + radius + 1 || ay + a + 1 < cy - radius || ax > cx + radius + 1 ||
                           ax + a + 1 < cx - radius;
        if (!apart) continue;
        placed = true;
        for (std::size_t y = ay; y < ay + a; ++y)
            for (std::size_t x = ax; x < ax + a; ++x) out.artifact[y * W + x] = 1;
        if (positive) {
            const double r2 = static_cast<double>(radius * radius);
            for (std::size_t y = cy - radius; y <= cy + radius; ++y)
                for (std::size_t x = cx - radius; x <= cx + radius; ++x) {
                    const double dy = static_cast<double>(y) - static_cast<double>(cy);
                    const double dx = static_cast<double>(x) - static_cast<double>(cx);
                    if (dy * dy + dx * dx <= r2) out.sample.truth[y * W + x] = 1;
                }
        }
    }
    if (!placed) throw DataError("could not place lesion and artifact without overlap");

    // bright artifact agrees with the label at rate `spurious`
    const bool agrees = uniform01(rng) < spurious;
    const bool bright = positive ? agrees : !agrees;
    const double artifact_level = bright ? spec.artifact_bright : spec.artifact_dim;

    Tensor image({spec.channels, H, W});
    for (std::size_t c = 0; c < spec.channels; ++c)
        for (std::size_t j = 0; j < H * W; ++j) {
            double v = spec.background;
            if (out.sample.truth[j]) v = spec.lesion_intensity;
            if (out.artifact[j]) v = artifact_level;
            if (spec.noise > 0.0) v += spec.noise * gaussian(rng);
            image[c * H * W + j] = quantize(v);
        }
    out.sample.image = std::move(image);
    out.sample.prompt = synthesize_prompt(out.sample.truth, out.artifact, spec.coverage, rng());
    return out;
}

AttentionPrompt synthesize_prompt(const BinaryMask& truth, const BinaryMask& artifact, double coverage,
                                  std::uint64_t seed) {
    if (!(coverage > 0.0 && coverage <= 1.0)) throw ConfigError("coverage must lie in (0,1]");
    if (truth.height() != artifact.height() || truth.width() != artifact.width())
        throw ShapeError("truth and artifact masks differ in size");
    AttentionPrompt prompt(truth.height(), truth.width());
    Rng rng(seed);
    auto mark = [&](const BinaryMask& region, PromptLabel label) {
        std::vector<std::size_t> idx;
        for (std::size_t j = 0; j < region.size(); ++j)
            if (region[j]) idx.push_back(j);
        const auto take = static_cast<std::size_t>(std::llround(coverage * static_cast<double>(idx.size())));
        // partial Fisher-Yates
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t r = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(idx.size() - i));
            std::swap(idx[i], idx[r]);
            prompt.set(idx[i], label);
        }
    };
    mark(truth, PromptLabel::Indispensable);
    mark(artifact, PromptLabel::Precluded);
    for (std::size_t j = 0; j < truth.size(); ++j)
        if (artifact[j] && prompt.at(j) == PromptLabel::Indispensable) prompt.set(j, PromptLabel::Precluded);
    return prompt;
}

namespace {

std::vector<Sample> generate_split(const SyntheticSpec& spec, std::size_t n, double spurious, std::uint64_t stream) {
    const auto npos = static_cast<std::size_t>(std::llround(spec.positive_fraction * static_cast<double>(n)));
    std::vector<std::size_t> labels(n, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(npos), 1);
    Rng order(derive_seed(spec.seed, stream));
    for (std::size_t i = n; i > 1; --i) std::swap(labels[i - 1], labels[uniform_index(order, i)]);
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(
            generate_sample(spec, labels[i] == 1, spurious, derive_seed(spec.seed, stream * 1'000'003 + i + 1)).sample);
    return out;
}

const char* kSplits[] = {"train", "val", "test"};

std::vector<Sample>& split_ref(Dataset& d, const std::string& s) {
    if (s == "train") return d.train;
    if (s == "val") return d.val;
    if (s == "test") return d.test;
    throw DataError("unknown split '" + s + "'");
}

}  // namespace

Dataset generate_dataset(const SyntheticSpec& spec) {
    spec.validate();
    Dataset d;
    d.train = generate_split(spec, spec.train, spec.spurious_train, 1);
    d.val = generate_split(spec, spec.val, spec.spurious_train, 2);
    d.test = generate_split(spec, spec.test, spec.spurious_test, 3);
    return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ostringstream labels;
    labels << "index,split,label\n";
    for (const char* split : kSplits) {
        const fs::path sub = dir / split;
        fs::create_directories(sub);
        const auto& samples = split_ref(const_cast<Dataset&>(data), split);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const Sample& s = samples[i];
            const std::string stem = std::to_string(i);
            netpbm::write(sub / (stem + ".img.ppm"), netpbm::from_tensor(s.image));
            write_prompt(sub / (stem + ".prompt.pgm"), s.prompt);
            netpbm::write(sub / (stem + ".truth.pgm"), mask_to_raster(s.truth));
            labels << i << "," << split << "," << s.label << "\n";
        }
    }
    netpbm::write_file(dir / "labels.csv", labels.str());
}

Dataset load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path labels_path = dir / "labels.csv";
    std::istringstream in(netpbm::read_file(labels_path));
    std::string line;
    if (!std::getline(in, line) || line != "index,split,label")
        throw DataError(labels_path.string() + ": missing header 'index,split,label'");
    Dataset d;
    std::map<std::string, std::size_t> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string idx, split, label;
        if (!std::getline(ls, idx, ',') || !std::getline(ls, split, ',') || !std::getline(ls, label))
            throw DataError(labels_path.string() + ":" + std::to_string(lineno) + ": expected index,split,label");
        auto& samples = split_ref(d, split);
        std::size_t i = 0, y = 0;
        try {
            i = std::stoul(idx);
            y = std::stoul(label);
        } catch (const std::exception&) {
            throw DataError(labels_path.string() + ":" + std::to_string(lineno) + ": non-numeric field");
        }
        if (i != samples.size())
            throw DataError(labels_path.string() + ":" + std::to_string(lineno) + ": indices must be consecutive");
        const fs::path sub = dir / split;
        const std::string stem = std::to_string(i);
        Sample s;
        s.label = y;
        s.image = netpbm::to_tensor(netpbm::read(sub / (stem + ".img.ppm")));
        s.prompt = read_prompt(sub / (stem + ".prompt.pgm"));
        const fs::path truth_path = sub / (stem + ".truth.pgm");
        s.truth = mask_from_raster(netpbm::read(truth_path), truth_path.string());
        if (s.prompt.height() != s.image.dim(1) || s.prompt.width() != s.image.dim(2) ||
            s.truth.height() != s.image.dim(1) || s.truth.width() != s.image.dim(2))
            throw DataError((sub / stem).string() + ": image, prompt and truth sizes disagree");
        samples.push_back(std::move(s));
        ++rows[split];
    }
    for (const char* split : kSplits) {
        std::size_t files = 0;
        if (fs::exists(dir / split))
            for (const auto& e : fs::directory_iterator(dir / split))
                if (e.path().string().ends_with(".img.ppm")) ++files;
        if (files != rows[split])
            throw DataError(labels_path.string() + ": " + std::to_string(rows[split]) + " rows for split '" + split +
                            "' but " + std::to_string(files) + " image files");
    }
    return d;
}

Tensor batch_images(const std::vector<const Sample*>& samples) {
    if (samples.empty()) throw DataError("empty batch");
    std::vector<Tensor> imgs;
    imgs.reserve(samples.size());
    for (const Sample* s : samples) imgs.push_back(s->image);
    return stack(imgs);
}

}  // namespace vapl
