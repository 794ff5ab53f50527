#include "vapl/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "vapl/errors.hpp"
#include "vapl/netpbm.hpp"

namespace vapl {

std::string to_string(RefineMode m) {
    switch (m) {
        case RefineMode::Learned: return "learned";
        case RefineMode::PassThrough: return "passthrough";
        case RefineMode::Binarize: return "binarize";
    }
    return "?";
}

RefineMode parse_refine_mode(const std::string& s) {
    if (s == "learned") return RefineMode::Learned;
    if (s == "passthrough") return RefineMode::PassThrough;
    if (s == "binarize") return RefineMode::Binarize;
    throw ConfigError("unknown refine.mode '" + s + "' (learned|passthrough|binarize)");
}

MonotoneSpec RefineConfig::weight_net() const {
    MonotoneSpec s;
    s.sizes = {1};
    s.sizes.insert(s.sizes.end(), hidden.begin(), hidden.end());
    s.sizes.push_back(1);
    s.phi = phi;
    s.activation = activation;
    return s;
}

RefineOptions RefineConfig::options(std::uint64_t sample_seed, std::size_t workers) const {
    RefineOptions o;
    o.n_masks = n_masks;
    o.p = p;
    o.seed = sample_seed;
    o.weighting = mode == RefineMode::PassThrough ? Weighting::PassThrough : Weighting::Learned;
    o.normalization = normalization;
    o.perturbation.cell = cell;
    o.workers = workers;
    return o;
}

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    // shortest representation that round-trips
    for (int prec = 1; prec <= 17; ++prec) {
        char tmp[32];
        std::snprintf(tmp, sizeof tmp, "%.*g", prec, v);
        if (std::strtod(tmp, nullptr) == v) return tmp;
    }
    return buf;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + want);
}

double to_double(const std::string& key, const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) bad_value(key, s, "a number");
    return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size()) bad_value(key, s, "a non-negative integer");
    return v;
}

bool to_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    bad_value(key, s, "a boolean");
}

template <class T>
std::vector<T> to_list(const std::string& key, const std::string& s, const std::function<T(const std::string&)>& one) {
    std::vector<T> out;
    if (s.empty()) return out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(one(item));
    (void)key;
    return out;
}

template <class T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& one) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + one(v[i]);
    return out;
}

struct KeyDef {
    std::function<void(Config&, const std::string&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

#define VAPL_SIZE(KEY, FIELD)                                                                                  \
    {KEY,                                                                                                      \
     {[](Config& c, const std::string& k, const std::string& v) { c.FIELD = static_cast<std::size_t>(to_u64(k, v)); }, \
      [](const Config& c) { return std::to_string(c.FIELD); }}}
#define VAPL_U64(KEY, FIELD)                                                                  \
    {KEY,                                                                                     \
     {[](Config& c, const std::string& k, const std::string& v) { c.FIELD = to_u64(k, v); }, \
      [](const Config& c) { return std::to_string(c.FIELD); }}}
#define VAPL_DOUBLE(KEY, FIELD)                                                                  \
    {KEY,                                                                                        \
     {[](Config& c, const std::string& k, const std::string& v) { c.FIELD = to_double(k, v); }, \
      [](const Config& c) { return fmt_double(c.FIELD); }}}
#define VAPL_BOOL(KEY, FIELD)                                                                  \
    {KEY,                                                                                      \
     {[](Config& c, const std::string& k, const std::string& v) { c.FIELD = to_bool(k, v); }, \
      [](const Config& c) { return std::string(c.FIELD ? "true" : "false"); }}}
#define VAPL_STRING(KEY, FIELD)                                                              \
    {KEY,                                                                                    \
     {[](Config& c, const std::string&, const std::string& v) { c.FIELD = v; }, \
      [](const Config& c) { return c.FIELD; }}}

const std::map<std::string, KeyDef>& registry() {
    static const std::map<std::string, KeyDef> keys = {
        VAPL_SIZE("model.channels", model.channels),
        VAPL_SIZE("model.height", model.height),
        VAPL_SIZE("model.width", model.width),
        VAPL_SIZE("model.conv1", model.conv1),
        VAPL_SIZE("model.conv2", model.conv2),
        VAPL_SIZE("model.classes", model.classes),

        VAPL_DOUBLE("train.lambda1", train.lambda1),
        VAPL_DOUBLE("train.lambda2", train.lambda2),
        VAPL_DOUBLE("train.lambda3", train.lambda3),
        VAPL_DOUBLE("train.lr", train.learning_rate),
        VAPL_SIZE("train.outer_iterations", train.outer_iterations),
        VAPL_SIZE("train.f_iterations", train.f_iterations),
        VAPL_SIZE("train.g_iterations", train.g_iterations),
        VAPL_SIZE("train.batch_size", train.batch_size),
        VAPL_SIZE("train.warmup_epochs", train.warmup_epochs),
        VAPL_SIZE("train.patience", train.patience),
        VAPL_U64("train.seed", train.seed),
        VAPL_BOOL("train.cotrain", train.cotrain),
        VAPL_SIZE("train.seeds", train.seeds),
        VAPL_STRING("train.sweep_param", train.sweep_param),
        {"train.sweep_values",
         {[](Config& c, const std::string& k, const std::string& v) {
              c.train.sweep_values = to_list<double>(k, v, [&](const std::string& s) { return to_double(k, s); });
          },
          [](const Config& c) {
              return join<double>(c.train.sweep_values, [](const double& d) { return fmt_double(d); });
          }}},

        VAPL_SIZE("refine.n_masks", refine.n_masks),
        VAPL_DOUBLE("refine.p", refine.p),
        VAPL_U64("refine.seed", refine.seed),
        VAPL_SIZE("refine.cell", refine.cell),
        {"refine.phi",
         {[](Config& c, const std::string&, const std::string& v) { c.refine.phi = parse_positivity(v); },
          [](const Config& c) { return to_string(c.refine.phi); }}},
        {"refine.activation",
         {[](Config& c, const std::string&, const std::string& v) { c.refine.activation = parse_activation(v); },
          [](const Config& c) { return to_string(c.refine.activation); }}},
        {"refine.hidden",
         {[](Config& c, const std::string& k, const std::string& v) {
              c.refine.hidden = to_list<std::size_t>(
                  k, v, [&](const std::string& s) { return static_cast<std::size_t>(to_u64(k, s)); });
          },
          [](const Config& c) {
              return join<std::size_t>(c.refine.hidden, [](const std::size_t& s) { return std::to_string(s); });
          }}},
        {"refine.mode",
         {[](Config& c, const std::string&, const std::string& v) { c.refine.mode = parse_refine_mode(v); },
          [](const Config& c) { return to_string(c.refine.mode); }}},
        {"refine.normalization",
         {[](Config& c, const std::string& k, const std::string& v) {
              if (v == "expected")
                  c.refine.normalization = Normalization::Expected;
              else if (v == "per_pixel")
                  c.refine.normalization = Normalization::PerPixel;
              else
                  bad_value(k, v, "expected|per_pixel");
          },
          [](const Config& c) {
              return std::string(c.refine.normalization == Normalization::Expected ? "expected" : "per_pixel");
          }}},

        VAPL_STRING("data.dir", data.dir),
        VAPL_SIZE("data.train", data.synthetic.train),
        VAPL_SIZE("data.val", data.synthetic.val),
        VAPL_SIZE("data.test", data.synthetic.test),
        VAPL_DOUBLE("data.positive_fraction", data.synthetic.positive_fraction),
        VAPL_DOUBLE("data.background", data.synthetic.background),
        VAPL_DOUBLE("data.noise", data.synthetic.noise),
        VAPL_SIZE("data.lesion_radius_min", data.synthetic.lesion_radius_min),
        VAPL_SIZE("data.lesion_radius_max", data.synthetic.lesion_radius_max),
        VAPL_DOUBLE("data.lesion_intensity", data.synthetic.lesion_intensity),
        VAPL_SIZE("data.artifact_size", data.synthetic.artifact_size),
        VAPL_DOUBLE("data.artifact_bright", data.synthetic.artifact_bright),
        VAPL_DOUBLE("data.artifact_dim", data.synthetic.artifact_dim),
        VAPL_DOUBLE("data.spurious_train", data.synthetic.spurious_train),
        VAPL_DOUBLE("data.spurious_test", data.synthetic.spurious_test),
        VAPL_DOUBLE("data.coverage", data.synthetic.coverage),
        VAPL_U64("data.seed", data.synthetic.seed),

        VAPL_STRING("serve.addr", serve.addr),
        {"serve.port",
         {[](Config& c, const std::string& k, const std::string& v) {
              const auto p = to_u64(k, v);
              if (p > 65535) bad_value(k, v, "a port number");
              c.serve.port = static_cast<int>(p);
          },
          [](const Config& c) { return std::to_string(c.serve.port); }}},
        VAPL_SIZE("serve.default_masks", serve.default_masks),
        VAPL_SIZE("serve.max_masks", serve.max_masks),
        VAPL_BOOL("serve.expose_dataset", serve.expose_dataset),
    };
    return keys;
}

#undef VAPL_SIZE
#undef VAPL_U64
#undef VAPL_DOUBLE
#undef VAPL_BOOL
#undef VAPL_STRING

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void Config::set(const std::string& key, const std::string& value) {
    auto it = registry().find(key);
    if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(*this, key, value);
    // image geometry is shared between the model and the generator
    data.synthetic.height = model.height;
    data.synthetic.width = model.width;
    data.synthetic.channels = model.channels;
}

std::string Config::get(const std::string& key) const {
    auto it = registry().find(key);
    if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second.get(*this);
}

std::vector<std::string> Config::keys() {
    std::vector<std::string> out;
    for (const auto& [k, _] : registry()) out.push_back(k);
    return out;
}

void Config::validate() const {
    model.validate();
    data.synthetic.validate();
    refine.weight_net().validate();
    if (train.outer_iterations == 0) throw ConfigError("train.outer_iterations must be >= 1");
    if (train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (train.seeds == 0) throw ConfigError("train.seeds must be >= 1");
    if (train.patience == 0) throw ConfigError("train.patience must be >= 1");
    if (train.lambda1 < 0 || train.lambda2 < 0 || train.lambda3 < 0) throw ConfigError("lambdas must be >= 0");
    if (!(train.learning_rate > 0)) throw ConfigError("train.lr must be > 0");
    if (!(refine.p > 0.0 && refine.p < 1.0)) throw ConfigError("refine.p must lie in (0,1)");
    if (refine.n_masks == 0) throw ConfigError("refine.n_masks must be >= 1");
    if (refine.cell == 0) throw ConfigError("refine.cell must be >= 1");
    if (model.classes != 2) throw ConfigError("model.classes: the synthetic task has exactly 2 classes");
    if (serve.default_masks == 0 || serve.default_masks > serve.max_masks)
        throw ConfigError("serve.default_masks must lie in [1, serve.max_masks]");
    if (train.sweep_values.empty()) throw ConfigError("train.sweep_values must not be empty");
    if (train.sweep_param != "lambda1" && train.sweep_param != "lambda2" && train.sweep_param != "lambda3")
        throw ConfigError("train.sweep_param must be lambda1, lambda2 or lambda3");
}

std::string Config::to_text() const {
    std::string out;
    for (const auto& [k, def] : registry()) out += k + "=" + def.get(*this) + "\n";
    return out;
}

Config Config::parse(const std::string& text, const std::string& source) {
    Config c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
        try {
            c.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::string text;
    try {
        text = netpbm::read_file(path);
    } catch (const DataError&) {
        throw ConfigError(path.string() + ": cannot read config file");
    }
    return parse(text, path.string());
}

void Config::apply_overrides(const std::vector<std::string>& args) {
    for (const std::string& a : args) {
        if (!a.starts_with("--")) throw ConfigError("unexpected argument '" + a + "'");
        const auto eq = a.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + a + "' must look like --section.key=value");
        set(a.substr(2, eq - 2), a.substr(eq + 1));
    }
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace vapl
