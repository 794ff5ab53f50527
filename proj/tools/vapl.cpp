#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vapl/config.hpp"
#include "vapl/cotrain.hpp"
#include "vapl/data.hpp"
#include "vapl/errors.hpp"
#include "vapl/experiment.hpp"
#include "vapl/netpbm.hpp"
#include "vapl/parallel.hpp"
#include "vapl/serve.hpp"

namespace {

using namespace vapl;

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;

    Config load() const {
        Config c = config_path.empty() ? Config{} : Config::load(config_path);
        c.apply_overrides(overrides);
        c.validate();
        return c;
    }
};

void log_line(const std::string& s) { std::fprintf(stderr, "vapl: %s\n", s.c_str()); }

Tensor read_image(const std::string& path) { return netpbm::to_tensor(netpbm::read(path)); }

}  // namespace

int main(int argc, char** argv) {
    // "--section.key=value" flags are config overrides; everything else goes to the parser.
    Common common;
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        const auto eq = a.find('=');
        if (a.starts_with("--") && eq != std::string::npos && a.substr(2, eq - 2).find('.') != std::string::npos)
            common.overrides.push_back(a);
        else
            args.push_back(a);
    }

    CLI::App app{"Visual attention-prompted prediction and learning", "vapl"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "vapl 1.0");

    std::string out_dir, checkpoint, image, prompt, out, csv;
    std::uint64_t seed = 0;
    std::size_t n_masks = 0;
    int class_index = -1;
    bool return_saliency = false;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config_path, "config file of key=value lines");
    };

    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
    add_config(gen);
    gen->add_option("-o,--out", out_dir, "dataset directory")->required();

    auto* train = app.add_subcommand("train", "co-train and write checkpoint + report");
    add_config(train);
    train->add_option("-o,--out", out_dir, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split, or on one image");
    add_config(eval);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("-o,--out", out_dir, "report directory");
    eval->add_option("--image", image, "single PPM/PGM image");
    eval->add_option("--prompt", prompt, "prompt PGM for the single image");
    eval->add_option("--seed", seed, "refinement seed for the single image");
    eval->add_option("--n-masks", n_masks, "perturbation count for the single image");
    eval->add_flag("--return-saliency", return_saliency, "include the refined map in the JSON output");

    auto* refine = app.add_subcommand("refine", "refine one prompt and write the saliency map");
    add_config(refine);
    refine->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    refine->add_option("--image", image, "PPM/PGM image")->required();
    refine->add_option("--prompt", prompt, "prompt PGM")->required();
    refine->add_option("--seed", seed, "refinement seed");
    refine->add_option("--n-masks", n_masks, "perturbation count");
    refine->add_option("--class", class_index, "class to explain (default: predicted)");
    refine->add_option("-o,--out", out, "16-bit PGM output")->required();
    refine->add_option("--csv", csv, "CSV output");

    auto* ablate = app.add_subcommand("ablate", "VAPL, VAPL-1..4 and baseline over train.seeds seeds");
    add_config(ablate);
    ablate->add_option("-o,--out", out_dir, "output directory");

    auto* sweep = app.add_subcommand("sweep", "vary train.sweep_param over train.sweep_values");
    add_config(sweep);
    sweep->add_option("-o,--out", out_dir, "output directory");

    auto* serve = app.add_subcommand("serve", "HTTP inference service");
    add_config(serve);
    serve->add_option("--checkpoint", checkpoint, "checkpoint to load at startup");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        const Config config = common.load();
        if (*gen) {
            save_dataset(generate_dataset(config.data.synthetic), out_dir);
            log_line("wrote dataset to " + out_dir);
        } else if (*train || *ablate || *sweep) {
            ExperimentOptions opts;
            opts.mode = *train ? Mode::Train : *ablate ? Mode::Ablate : Mode::Sweep;
            opts.out_dir = out_dir;
            opts.log = log_line;
            const ExperimentReport r = run_experiment(config, opts);
            std::cout << (opts.mode == Mode::Sweep ? r.sweep_csv() : r.text());
        } else if (*eval && image.empty()) {
            ExperimentOptions opts;
            opts.mode = Mode::Eval;
            opts.out_dir = out_dir;
            opts.checkpoint = checkpoint;
            opts.log = log_line;
            std::cout << run_experiment(config, opts).text();
        } else if (*eval) {
            const CoTrainState state = load_checkpoint(checkpoint);
            const Tensor img = read_image(image);
            PredictOptions po;
            po.seed = seed;
            po.workers = worker_count();
            po.n_masks = n_masks ? n_masks : config.serve.default_masks;
            if (prompt.empty()) {
                std::cout << prediction_json(predict(state, img, nullptr, po), false).dump() << "\n";
            } else {
                const AttentionPrompt d = read_prompt(prompt);
                std::cout << prediction_json(predict(state, img, &d, po), return_saliency).dump() << "\n";
            }
        } else if (*refine) {
            const CoTrainState state = load_checkpoint(checkpoint);
            PredictOptions po;
            po.seed = seed;
            po.workers = worker_count();
            po.n_masks = n_masks ? n_masks : config.serve.default_masks;
            std::optional<std::size_t> k;
            if (class_index >= 0) k = static_cast<std::size_t>(class_index);
            const SaliencyMap map = refine_for(state, read_image(image), read_prompt(prompt), po, k);
            write_saliency_pgm(out, map);
            if (!csv.empty()) write_saliency_csv(csv, map);
        } else if (*serve) {
            InferenceService service(config.serve);
            if (!checkpoint.empty()) service.load(checkpoint);
            if (config.serve.expose_dataset)
                service.set_dataset(std::make_shared<const std::vector<Sample>>(dataset_for(config).test));
            HttpServer server(service);
            log_line("listening on " + config.serve.addr + ":" + std::to_string(config.serve.port));
            server.listen(config.serve.addr, config.serve.port);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "vapl: config error: %s\n", e.what());
        return kConfig;
    } catch (const DataError& e) {
        std::fprintf(stderr, "vapl: data error: %s\n", e.what());
        return kData;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "vapl: data error: %s\n", e.what());
        return kData;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "vapl: numeric failure: %s\n", e.what());
        return kNumeric;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "vapl: data error: %s\n", e.what());
        return kData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "vapl: error: %s\n", e.what());
        return kFailure;
    }
    return kOk;
}
