#include "vapl/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "vapl/errors.hpp"
#include "vapl/netpbm.hpp"
#include "vapl/parallel.hpp"
#include "vapl/random.hpp"

namespace vapl {

Metrics compute_metrics(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                        std::size_t positive_class) {
    if (predictions.size() != labels.size())
        throw DataError("metrics: " + std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
    if (labels.empty()) throw DataError("metrics: empty prediction list");
    Metrics m;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool pred = predictions[i] == positive_class, truth = labels[i] == positive_class;
        if (pred && truth) ++m.tp;
        else if (pred) ++m.fp;
        else if (truth) ++m.fn;
        else ++m.tn;
    }
    auto ratio = [](std::size_t num, std::size_t den, bool& undefined) {
        undefined = den == 0;
        return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
    };
    m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(labels.size());
    m.precision = ratio(m.tp, m.tp + m.fp, m.precision_undefined);
    m.recall = ratio(m.tp, m.tp + m.fn, m.recall_undefined);
    m.f1_undefined = m.precision + m.recall == 0.0;
    m.f1 = m.f1_undefined ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

PathMetrics evaluate_split(const CoTrainState& state, const std::vector<Sample>& split, std::uint64_t seed,
                           std::size_t workers) {
    if (split.empty()) throw DataError("cannot evaluate an empty split");
    std::vector<std::size_t> labels, pm, po;
    for (std::size_t i = 0; i < split.size(); ++i) {
        const Sample& s = split[i];
        labels.push_back(s.label);
        PredictOptions opts;
        opts.seed = derive_seed(seed, i);
        opts.workers = workers;
        po.push_back(predict(state, s.image, nullptr, opts).class_index);
        if (state.config.train.cotrain) pm.push_back(predict(state, s.image, &s.prompt, opts).class_index);
    }
    PathMetrics out;
    out.non_prompted = compute_metrics(po, labels);
    out.has_prompted = state.config.train.cotrain;
    if (out.has_prompted) out.prompted = compute_metrics(pm, labels);
    return out;
}

std::string to_string(Mode m) {
    switch (m) {
        case Mode::Train: return "train";
        case Mode::Eval: return "eval";
        case Mode::Ablate: return "ablate";
        case Mode::Sweep: return "sweep";
    }
    return "?";
}

Mode parse_mode(const std::string& s) {
    if (s == "train") return Mode::Train;
    if (s == "eval") return Mode::Eval;
    if (s == "ablate") return Mode::Ablate;
    if (s == "sweep") return Mode::Sweep;
    throw ConfigError("unknown mode '" + s + "' (train|eval|ablate|sweep)");
}

const std::vector<Variant>& ablation_variants() {
    static const std::vector<Variant> v = {
        {"VAPL", {}},
        {"VAPL-1", {{"refine.mode", "binarize"}}},
        {"VAPL-2", {{"train.lambda1", "0"}}},
        {"VAPL-3", {{"train.lambda2", "0"}}},
        {"VAPL-4", {{"refine.mode", "passthrough"}}},
        {"baseline", {{"train.cotrain", "false"}}},
    };
    return v;
}

std::vector<std::string> config_diff(const Config& base, const Config& changed) {
    std::vector<std::string> out;
    for (const std::string& k : Config::keys()) {
        const std::string a = base.get(k), b = changed.get(k);
        if (a != b) out.push_back(k + ": " + a + " -> " + b);
    }
    return out;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

Config trial_config(const Config& base, std::size_t k) {
    Config c = base;
    c.train.seed = base.train.seed + k;
    c.data.synthetic.seed = base.data.synthetic.seed + k;
    return c;
}

Dataset dataset_for(const Config& config) {
    if (!config.data.dir.empty()) return load_dataset(config.data.dir);
    return generate_dataset(config.data.synthetic);
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string metric_cells(const Metrics& m) {
    return fmt(m.accuracy) + "," + fmt(m.precision) + "," + fmt(m.recall) + "," + fmt(m.f1) + "," +
           std::to_string(m.tp) + "," + std::to_string(m.fp) + "," + std::to_string(m.tn) + "," +
           std::to_string(m.fn);
}

std::string flags(const Metrics& m) {
    std::string s;
    if (m.precision_undefined) s += " precision_undefined";
    if (m.recall_undefined) s += " recall_undefined";
    if (m.f1_undefined) s += " f1_undefined";
    return s;
}

// Distinct variant names in first-seen order.
std::vector<std::string> variant_order(const std::vector<Trial>& trials) {
    std::vector<std::string> out;
    for (const Trial& t : trials)
        if (std::find(out.begin(), out.end(), t.variant) == out.end()) out.push_back(t.variant);
    return out;
}

std::string mean_pm(const std::vector<double>& v) {
    const auto [m, s] = mean_std(v);
    return fmt(m) + " +- " + fmt(s);
}

}  // namespace

std::string ExperimentReport::text() const {
    std::ostringstream os;
    os << "vapl report\n";
    os << "mode: " << to_string(mode) << "\n";
    os << "seed: " << config.train.seed << "\n";
    os << "seeds: " << (mode == Mode::Ablate || mode == Mode::Sweep ? config.train.seeds : 1) << "\n";
    os << "config_hash: " << fnv1a_hex(config.to_text()) << "\n";
    os << "wall_clock_seconds: " << fmt(wall_clock_seconds) << "\n";
    os << "\n[config]\n" << config.to_text();

    const std::vector<std::string> variants = variant_order(trials);
    if (mode == Mode::Ablate || mode == Mode::Sweep) {
        os << "\n[summary] test split, mean +- stddev over seeds\n";
        os << "variant | prompted accuracy | precision | recall | f1 | non-prompted accuracy | precision | recall | f1\n";
        for (const std::string& v : variants) {
            std::vector<double> cols[8];
            bool prompted = true;
            for (const Trial& t : trials) {
                if (t.variant != v) continue;
                const PathMetrics& pm = t.splits.at("test");
                prompted = pm.has_prompted;
                const Metrics* ms[2] = {&pm.prompted, &pm.non_prompted};
                for (int p = 0; p < 2; ++p) {
                    cols[4 * p + 0].push_back(ms[p]->accuracy);
                    cols[4 * p + 1].push_back(ms[p]->precision);
                    cols[4 * p + 2].push_back(ms[p]->recall);
                    cols[4 * p + 3].push_back(ms[p]->f1);
                }
            }
            os << v;
            for (int c = 0; c < 8; ++c) os << " | " << (c < 4 && !prompted ? std::string("-") : mean_pm(cols[c]));
            os << "\n";
        }
        os << "\n[config_diff] relative to the first variant\n";
        const Trial* first = nullptr;
        for (const Trial& t : trials)
            if (t.variant == variants.front()) {
                first = &t;
                break;
            }
        for (const std::string& v : variants) {
            for (const Trial& t : trials) {
                if (t.variant != v || t.seed != first->seed) continue;
                const auto diff = config_diff(first->config, t.config);
                os << v << ":" << (diff.empty() ? " (none)" : "") << "\n";
                for (const std::string& d : diff) os << "  " << d << "\n";
            }
        }
    }

    os << "\n[metrics]\nvariant,seed,split,path,accuracy,precision,recall,f1,tp,fp,tn,fn,flags\n";
    for (const Trial& t : trials)
        for (const auto& [split, pm] : t.splits) {
            if (pm.has_prompted)
                os << t.variant << "," << t.seed << "," << split << ",prompted," << metric_cells(pm.prompted) << ","
                   << flags(pm.prompted) << "\n";
            os << t.variant << "," << t.seed << "," << split << ",non-prompted," << metric_cells(pm.non_prompted)
               << "," << flags(pm.non_prompted) << "\n";
        }

    for (const Trial& t : trials) {
        if (t.history.empty()) continue;
        os << "\n[loss " << t.variant << " seed " << t.seed << "]\n" << history_csv(t.history);
    }
    return os.str();
}

std::string ExperimentReport::csv() const {
    std::ostringstream os;
    os << "variant,seed,split,path,accuracy,precision,recall,f1,tp,fp,tn,fn\n";
    for (const Trial& t : trials)
        for (const auto& [split, pm] : t.splits) {
            if (pm.has_prompted)
                os << t.variant << "," << t.seed << "," << split << ",prompted," << metric_cells(pm.prompted) << "\n";
            os << t.variant << "," << t.seed << "," << split << ",non-prompted," << metric_cells(pm.non_prompted)
               << "\n";
        }
    return os.str();
}

std::string ExperimentReport::sweep_csv() const {
    std::ostringstream os;
    const std::string param = config.train.sweep_param;
    os << param
       << ",prompted_accuracy_mean,prompted_accuracy_std,non_prompted_accuracy_mean,non_prompted_accuracy_std,"
          "prompted_f1_mean,prompted_f1_std,non_prompted_f1_mean,non_prompted_f1_std\n";
    for (const std::string& v : variant_order(trials)) {
        std::vector<double> pa, oa, pf, of;
        for (const Trial& t : trials) {
            if (t.variant != v) continue;
            const PathMetrics& pm = t.splits.at("test");
            pa.push_back(pm.prompted.accuracy);
            oa.push_back(pm.non_prompted.accuracy);
            pf.push_back(pm.prompted.f1);
            of.push_back(pm.non_prompted.f1);
        }
        os << v.substr(v.find('=') + 1);
        for (const auto* col : {&pa, &oa, &pf, &of}) {
            const auto [m, s] = mean_std(*col);
            os << "," << fmt(m) << "," << fmt(s);
        }
        os << "\n";
    }
    return os.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    netpbm::write_file(path, text);
}

Trial run_trial(const std::string& variant, const Config& config, std::size_t workers,
                const std::function<void(const std::string&)>& log) {
    if (log) log("training " + variant + " seed " + std::to_string(config.train.seed));
    const Dataset data = dataset_for(config);
    Trial t;
    t.variant = variant;
    t.seed = config.train.seed;
    t.config = config;
    const CoTrainState state = train_alternating(data, config);
    t.history = state.history;
    if (!data.val.empty()) t.splits["val"] = evaluate_split(state, data.val, config.refine.seed, workers);
    t.splits["test"] = evaluate_split(state, data.test, config.refine.seed, workers);
    return t;
}

}  // namespace

ExperimentReport run_experiment(const Config& config, const ExperimentOptions& options) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    const std::size_t workers = worker_count();
    ExperimentReport report;
    report.mode = options.mode;
    report.config = config;
    const auto& out = options.out_dir;
    if (!out.empty()) std::filesystem::create_directories(out);

    switch (options.mode) {
        case Mode::Train: {
            if (options.log) options.log("training seed " + std::to_string(config.train.seed));
            const Dataset data = dataset_for(config);
            const CoTrainState state = train_alternating(data, config);
            Trial t;
            t.variant = config.train.cotrain ? "VAPL" : "baseline";
            t.seed = config.train.seed;
            t.config = config;
            t.history = state.history;
            if (!data.val.empty()) t.splits["val"] = evaluate_split(state, data.val, config.refine.seed, workers);
            t.splits["test"] = evaluate_split(state, data.test, config.refine.seed, workers);
            report.trials.push_back(std::move(t));
            if (!out.empty()) {
                save_checkpoint(out / "checkpoint.vapl", state);
                write_text(out / "loss.csv", history_csv(state.history));
            }
            break;
        }
        case Mode::Eval: {
            if (options.checkpoint.empty()) throw ConfigError("eval needs a checkpoint");
            if (!std::filesystem::exists(options.checkpoint))
                throw DataError("checkpoint " + options.checkpoint.string() + " does not exist");
            const CoTrainState state = load_checkpoint(options.checkpoint, config.model);
            const Dataset data = dataset_for(config);
            Trial t;
            t.variant = state.config.train.cotrain ? "VAPL" : "baseline";
            t.seed = state.config.train.seed;
            t.config = state.config;
            t.history = state.history;
            if (!data.val.empty()) t.splits["val"] = evaluate_split(state, data.val, config.refine.seed, workers);
            t.splits["test"] = evaluate_split(state, data.test, config.refine.seed, workers);
            report.trials.push_back(std::move(t));
            break;
        }
        case Mode::Ablate: {
            for (const Variant& v : ablation_variants()) {
                Config vc = config;
                for (const auto& [k, val] : v.overrides) vc.set(k, val);
                for (std::size_t k = 0; k < config.train.seeds; ++k)
                    report.trials.push_back(run_trial(v.name, trial_config(vc, k), workers, options.log));
            }
            break;
        }
        case Mode::Sweep: {
            const std::string key = "train." + config.train.sweep_param;
            if (config.train.sweep_values.empty()) throw ConfigError("train.sweep_values is empty");
            for (double value : config.train.sweep_values) {
                Config vc = config;
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.17g", value);
                vc.set(key, buf);
                for (std::size_t k = 0; k < config.train.seeds; ++k)
                    report.trials.push_back(run_trial(config.train.sweep_param + "=" + buf, trial_config(vc, k),
                                                      workers, options.log));
            }
            break;
        }
    }
    report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!out.empty()) {
        write_text(out / "report.txt", report.text());
        write_text(out / "report.csv", report.csv());
        if (options.mode == Mode::Sweep) write_text(out / "sweep.csv", report.sweep_csv());
    }
    return report;
}

ExperimentReport run_experiment(const std::filesystem::path& config_path, Mode mode,
                                const std::vector<std::string>& overrides, const std::filesystem::path& out_dir) {
    Config config = Config::load(config_path);
    config.apply_overrides(overrides);
    ExperimentOptions opts;
    opts.mode = mode;
    opts.out_dir = out_dir;
    if (mode == Mode::Eval) opts.checkpoint = out_dir / "checkpoint.vapl";
    return run_experiment(config, opts);
}

}  // namespace vapl
