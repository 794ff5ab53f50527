#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "support.hpp"
#include "train_support.hpp"
#include "vapl/errors.hpp"
#include "vapl/kernels.hpp"

using namespace vapl;
using vapl::testing::random_tensor;
using vapl::testing::tiny_config;

namespace {

Batch make_batch(const Dataset& d, std::size_t n) {
    Batch b;
    std::vector<const Sample*> s;
    std::vector<Tensor> maps;
    for (std::size_t i = 0; i < n; ++i) {
        s.push_back(&d.train[i]);
        b.labels.push_back(d.train[i].label);
        const BinaryMask m = binarize_prompt(d.train[i].prompt, 1);
        maps.emplace_back(Shape{m.height(), m.width()}, std::vector<double>(m.values().begin(), m.values().end()));
    }
    b.images = batch_images(s);
    b.maps = stack(maps);
    return b;
}

// Two distinct models over the same architecture.
CoTrainState perturbed_state(const Config& c) {
    CoTrainState s = CoTrainState::initial(c);
    s.f_o = ClassifierModel(c.model, 99);
    return s;
}

}  // namespace

TEST_CASE("combine is the weighted sum of the components") {
    const LossBreakdown parts{2.0, 0.5, 0.3, 0.04, 0.0};
    CHECK(combine(parts, Lambdas{0.1, 1.0, 10.0}) == doctest::Approx(2.75).epsilon(1e-15));
    CHECK(combine(parts, Lambdas{}) == 2.0);
}

TEST_CASE("loss terms match direct evaluation") {
    const Config c = tiny_config();
    const Dataset d = generate_dataset(c.data.synthetic);
    const CoTrainState s = perturbed_state(c);
    const Batch b = make_batch(d, 5);

    double param = 0;
    for (const std::string& name : ClassifierModel::conv_weight_names()) {
        const Tensor& wm = s.f_m.params().at(name);
        const Tensor& wo = s.f_o.params().at(name);
        for (std::size_t i = 0; i < wm.size(); ++i) param += (wo[i] - wm[i]) * (wo[i] - wm[i]);
    }
    CHECK(loss_param(s.f_m, s.f_o) == doctest::Approx(param).epsilon(1e-12));

    const Tensor masked = kernels::mask_channels(b.images, b.maps);
    const Tensor fm = s.f_m.features(masked), fo = s.f_o.features(b.images);
    double activ = 0;
    for (std::size_t i = 0; i < fm.size(); ++i) activ += (fo[i] - fm[i]) * (fo[i] - fm[i]);
    CHECK(loss_activ(s.f_m, s.f_o, b.images, b.maps) == doctest::Approx(activ).epsilon(1e-12));

    const Tensor lm = kernels::log_softmax_rows(s.f_m.forward(masked));
    const Tensor lo = kernels::log_softmax_rows(s.f_o.forward(b.images));
    double pred = 0;
    for (std::size_t i = 0; i < 5; ++i) pred -= lm[i * 2 + b.labels[i]] + lo[i * 2 + b.labels[i]];
    CHECK(loss_pred(s.f_m, s.f_o, b.images, b.maps, b.labels) == doctest::Approx(pred / 5).epsilon(1e-12));
    CHECK(cross_entropy(s.f_m.forward(masked), s.f_o.forward(b.images), one_hot(b.labels, 2)) ==
          doctest::Approx(pred).epsilon(1e-12));

    const Lambdas l{0.1, 1.0, 10.0};
    const LossBreakdown parts = total_objective(s, b, l);
    CHECK(parts.total == combine(parts, l));
    CHECK(parts.agg == l_agg(s.g));
    CHECK(parts.param == loss_param(s.f_m, s.f_o));
}

TEST_CASE("L_Param rejects models of different shape") {
    ModelSpec other;
    other.conv1 = 5;
    CHECK_THROWS_AS(loss_param(ClassifierModel(ModelSpec{}, 1), ClassifierModel(other, 1)), ShapeError);
}

TEST_CASE("the parameter regularizer pulls both models together") {
    const Config c = tiny_config();
    CoTrainState s = perturbed_state(c);
    double prev = loss_param(s.f_m, s.f_o);
    int steps = 0;
    while (prev >= 1e-6) {
        Tape tape;
        const BoundModel bm = s.f_m.bind(tape, "m.", true);
        const BoundModel bo = s.f_o.bind(tape, "o.", true);
        const Gradients g = tape.backward(loss_param(bm, bo));
        for (auto& [prefix, model] : {std::pair{"m.", &s.f_m}, std::pair{"o.", &s.f_o}})
            for (auto& [name, p] : model->params())
                for (std::size_t i = 0; i < p.size(); ++i) p[i] -= 0.1 * g.at(std::string(prefix) + name)[i];
        const double now = loss_param(s.f_m, s.f_o);
        REQUIRE(now < prev);
        prev = now;
        REQUIRE(++steps < 1000);
    }
}

TEST_CASE("one pass with no regularizers takes one Adam step per batch and leaves g alone") {
    Config c = tiny_config();
    c.apply_overrides({"--train.outer_iterations=1", "--train.g_iterations=0", "--train.lambda1=0",
                       "--train.lambda2=0", "--train.lambda3=0"});
    const Dataset d = generate_dataset(c.data.synthetic);
    const CoTrainState init = CoTrainState::initial(c);
    const CoTrainState s = train_alternating(d, c);
    CHECK(s.adam_m.steps() == 3);
    CHECK(s.adam_o.steps() == 3);
    CHECK(s.adam_g.steps() == 0);
    CHECK(s.g == init.g);
    CHECK_FALSE(s.f_m == init.f_m);
    CHECK_FALSE(s.f_o == init.f_o);
}

TEST_CASE("each phase leaves the frozen parameters bitwise unchanged") {
    Config c = tiny_config();
    c.apply_overrides({"--train.outer_iterations=3", "--train.f_iterations=2", "--train.g_iterations=2"});
    const Dataset d = generate_dataset(c.data.synthetic);
    std::optional<CoTrainState> begin;
    std::size_t f_phases = 0, g_phases = 0;
    TrainHooks hooks;
    hooks.phase = [&](const CoTrainState& s, Phase p, std::size_t, bool at_begin) {
        if (at_begin) {
            begin = s;
            return;
        }
        if (p == Phase::F) {
            ++f_phases;
            CHECK(s.g == begin->g);
            CHECK(s.adam_g == begin->adam_g);
            CHECK_FALSE(s.f_m == begin->f_m);
            CHECK_FALSE(s.f_o == begin->f_o);
        } else {
            ++g_phases;
            CHECK(s.f_m == begin->f_m);
            CHECK(s.f_o == begin->f_o);
            CHECK(s.adam_m == begin->adam_m);
            CHECK(s.adam_o == begin->adam_o);
            CHECK_FALSE(s.g == begin->g);
        }
    };
    train_alternating(d, c, hooks);
    CHECK(f_phases == 3);
    CHECK(g_phases == 3);
}

TEST_CASE("with every lambda at zero the loop is plain joint cross-entropy training") {
    for (const char* mode : {"learned", "binarize"}) {
        Config c = tiny_config();
        c.apply_overrides({"--train.outer_iterations=3", "--train.f_iterations=2", "--train.g_iterations=2",
                           "--train.lambda1=0", "--train.lambda2=0", "--train.lambda3=0",
                           std::string("--refine.mode=") + mode});
        const Dataset d = generate_dataset(c.data.synthetic);
        const CoTrainState s = train_alternating(d, c);
        const auto ref = vapl::testing::joint_ce_reference(d, c);
        const auto [f, g] = vapl::testing::recorded_pred(s.history);
        REQUIRE(f.size() == ref.f_pred.size());
        REQUIRE(g.size() == ref.g_pred.size());
        CHECK(g.size() == (std::string(mode) == "learned" ? 6u : 0u));
        for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::fabs(f[i] - ref.f_pred[i]) <= 1e-6);
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::fabs(g[i] - ref.g_pred[i]) <= 1e-6);
    }
}

TEST_CASE("training is deterministic and the history is complete") {
    const Config c = tiny_config();
    const Dataset d = generate_dataset(c.data.synthetic);
    const CoTrainState a = train_alternating(d, c);
    const CoTrainState b = train_alternating(d, c);
    CHECK(a == b);
    CHECK(a.history.size() == 6);
    CHECK(a.history.back().phase == Phase::Val);
    CHECK(a.history.back().val_accuracy >= 0.0);
    CHECK(history_csv(a.history).starts_with("iteration,phase,pass,L_Pred,L_Param,L_Activ,L_Agg,val_accuracy\n"));
}

TEST_CASE("a non-finite loss stops training with a numeric error") {
    const Config c = tiny_config();
    Dataset d = generate_dataset(c.data.synthetic);
    d.train[3].image[10] = NAN;
    CHECK_THROWS_AS(train_alternating(d, c), NumericError);
}

TEST_CASE("inference paths") {
    Config c = tiny_config();
    const Dataset d = generate_dataset(c.data.synthetic);
    const CoTrainState s = train_alternating(d, c);
    const Sample& x = d.test[0];
    const Prediction plain = predict(s, x.image, nullptr);
    CHECK_FALSE(plain.prompted);
    CHECK_FALSE(plain.saliency);
    Tensor batch = x.image.reshaped({1, 1, 16, 16});
    CHECK(plain.probabilities == kernels::softmax_rows(s.f_o.forward(batch)).vec());

    PredictOptions po;
    po.seed = 4;
    const Prediction prompted = predict(s, x.image, &x.prompt, po);
    CHECK(prompted.prompted);
    REQUIRE(prompted.saliency);
    CHECK(prompted.saliency->values() == refine_for(s, x.image, x.prompt, po).values());
    CHECK(prompted.probabilities == kernels::softmax_rows(s.f_m.forward(apply_mask(x.image, *prompted.saliency).reshaped({1, 1, 16, 16}))).vec());
    const AttentionPrompt small(8, 8);
    CHECK_THROWS_AS(predict(s, x.image, &small, po), ShapeError);
    CHECK_THROWS_AS(predict(s, Tensor({1, 8, 8}), nullptr), ShapeError);

    CoTrainState bin = s;
    bin.config.refine.mode = RefineMode::Binarize;
    const SaliencyMap m = refine_for(bin, x.image, x.prompt, po);
    const BinaryMask want = binarize_prompt(x.prompt, 1);
    for (std::size_t j = 0; j < want.size(); ++j) CHECK(m[j] == double(want[j]));
}

TEST_CASE("checkpoints round-trip exactly and reject damage") {
    const Config c = tiny_config();
    const Dataset d = generate_dataset(c.data.synthetic);
    const CoTrainState s = train_alternating(d, c);
    const auto path = std::filesystem::temp_directory_path() / "vapl_cotrain_test.vapl";
    save_checkpoint(path, s);
    CHECK(load_checkpoint(path) == s);
    CHECK(load_checkpoint(path, c.model) == s);
    ModelSpec other = c.model;
    other.conv2 = 7;
    CHECK_THROWS_AS(load_checkpoint(path, other), DataError);

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& b) { std::ofstream(path, std::ios::binary) << b; };
    write(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("offset"), DataError);
    write("NOTACKPT" + bytes.substr(8));
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    write(bytes + "x");
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
}
