#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "vapl/data.hpp"
#include "vapl/errors.hpp"

using namespace vapl;

namespace {

SyntheticSpec tiny() {
    SyntheticSpec s;
    s.height = s.width = 16;
    s.train = 6;
    s.val = 4;
    s.test = 4;
    s.lesion_radius_min = 2;
    s.lesion_radius_max = 3;
    s.artifact_size = 4;
    return s;
}

bool bright_artifact(const Sample& s, const SyntheticSpec& spec) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < s.prompt.size(); ++j)
        if (s.prompt.value(j) == 0) {
            sum += s.image[j];
            ++n;
        }
    return sum / double(n) > 0.5 * (spec.artifact_bright + spec.artifact_dim);
}

std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
    const SyntheticSpec spec = tiny();
    CHECK(generate_dataset(spec) == generate_dataset(spec));
    SyntheticSpec other = spec;
    other.seed = 1;
    CHECK_FALSE(generate_dataset(spec) == generate_dataset(other));
}

TEST_CASE("samples have the documented structure") {
    SyntheticSpec spec;
    spec.train = 60;
    const Dataset d = generate_dataset(spec);
    CHECK(d.train.size() == 60);
    CHECK(d.val.size() == spec.val);
    CHECK(d.test.size() == spec.test);
    std::size_t positives = 0;
    for (const Sample& s : d.train) {
        positives += s.label;
        CHECK(s.image.shape() == Shape{1, 32, 32});
        for (double v : s.image.vec()) CHECK(std::fabs(v * 255 - std::round(v * 255)) < 1e-9);
        std::size_t truth = 0;
        for (std::size_t j = 0; j < s.truth.size(); ++j) truth += s.truth[j];
        CHECK((truth > 0) == (s.label == 1));
        CHECK(s.prompt.count(PromptLabel::Indispensable) == std::size_t(std::llround(0.6 * double(truth))));
        for (std::size_t j = 0; j < s.truth.size(); ++j)
            if (s.prompt.value(j) == 1) CHECK(s.truth[j] == 1);
        CHECK(s.prompt.count(PromptLabel::Precluded) == std::size_t(std::llround(0.6 * 36)));
    }
    CHECK(positives == 30);
}

TEST_CASE("the artifact brightness tracks the label at the configured rates") {
    SyntheticSpec spec;
    spec.train = 2000;
    spec.val = 10;
    spec.test = 2000;
    const Dataset d = generate_dataset(spec);
    auto agreement = [&](const std::vector<Sample>& split) {
        std::size_t agree = 0;
        for (const Sample& s : split) agree += bright_artifact(s, spec) == (s.label == 1);
        return double(agree) / double(split.size());
    };
    CHECK(std::fabs(agreement(d.train) - 0.7) < 0.03);
    CHECK(std::fabs(agreement(d.test) - 0.5) < 0.03);
}

TEST_CASE("prompt synthesis marks a coverage fraction and never marks an empty truth") {
    BinaryMask truth(4, 4), artifact(4, 4);
    for (std::size_t j = 0; j < 4; ++j) artifact[j] = 1;
    const AttentionPrompt d = synthesize_prompt(truth, artifact, 0.5, 3);
    CHECK(d.count(PromptLabel::Indispensable) == 0);
    CHECK(d.count(PromptLabel::Precluded) == 2);
    for (std::size_t j = 4; j < 16; ++j) truth[j] = 1;
    CHECK(synthesize_prompt(truth, artifact, 1.0, 3).count(PromptLabel::Indispensable) == 12);
    CHECK_THROWS_AS(synthesize_prompt(truth, artifact, 0.0, 3), ConfigError);
    CHECK_THROWS_AS(synthesize_prompt(truth, BinaryMask(2, 2), 0.5, 3), ShapeError);
}

TEST_CASE("spec validation") {
    SyntheticSpec s = tiny();
    s.channels = 2;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = tiny();
    s.artifact_size = 20;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = tiny();
    s.spurious_train = 1.2;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    CHECK_NOTHROW(SyntheticSpec{}.validate());
}

TEST_CASE("datasets round-trip through a directory, including colour images") {
    SyntheticSpec spec = tiny();
    spec.channels = 3;
    const Dataset d = generate_dataset(spec);
    const auto dir = scratch_dir("vapl_data_roundtrip");
    save_dataset(d, dir);
    CHECK(std::filesystem::exists(dir / "train" / "0.img.ppm"));
    CHECK(std::filesystem::exists(dir / "test" / "3.prompt.pgm"));
    CHECK(load_dataset(dir) == d);
    std::filesystem::remove_all(dir);
}

TEST_CASE("damaged dataset directories are data errors") {
    const Dataset d = generate_dataset(tiny());
    const auto dir = scratch_dir("vapl_data_damaged");
    save_dataset(d, dir);
    std::filesystem::remove(dir / "val" / "1.truth.pgm");
    CHECK_THROWS_AS(load_dataset(dir), DataError);
    save_dataset(d, dir);
    std::ofstream(dir / "labels.csv", std::ios::app) << "9,train,x\n";
    CHECK_THROWS_AS(load_dataset(dir), DataError);
    std::ofstream(dir / "labels.csv") << "wrong\n";
    CHECK_THROWS_AS(load_dataset(dir), DataError);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_dataset(dir), DataError);
}

TEST_CASE("batch_images stacks samples") {
    const Dataset d = generate_dataset(tiny());
    const Tensor b = batch_images({&d.train[0], &d.train[1]});
    CHECK(b.shape() == Shape{2, 1, 16, 16});
    CHECK(b[256] == d.train[1].image[0]);
    CHECK_THROWS_AS(batch_images({}), DataError);
}
