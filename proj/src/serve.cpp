#include "vapl/serve.hpp"

#include <sodium.h>

#include <chrono>
#include <cmath>
#include <cstdio>

#include "httplib.h"
#include "vapl/errors.hpp"
#include "vapl/netpbm.hpp"
#include "vapl/parallel.hpp"

namespace vapl {

using nlohmann::json;

std::string base64_encode(std::string_view bytes) {
    std::string out(sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL), '\0');
    sodium_bin2base64(out.data(), out.size(), reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(),
                      sodium_base64_VARIANT_ORIGINAL);
    out.resize(out.size() - 1);  // trailing NUL
    return out;
}

std::string base64_decode(std::string_view text) {
    std::string out(text.size() / 4 * 3 + 3, '\0');
    std::size_t len = 0;
    if (sodium_base642bin(reinterpret_cast<unsigned char*>(out.data()), out.size(), text.data(), text.size(),
                          " \r\n", &len, nullptr, sodium_base64_VARIANT_ORIGINAL) != 0)
        throw DataError("malformed base64 payload");
    out.resize(len);
    return out;
}

json saliency_json(const SaliencyMap& map) {
    json rows = json::array();
    for (std::size_t y = 0; y < map.height(); ++y) {
        json row = json::array();
        for (std::size_t x = 0; x < map.width(); ++x) row.push_back(map[y * map.width() + x]);
        rows.push_back(std::move(row));
    }
    return {{"width", map.width()},
            {"height", map.height()},
            {"values", std::move(rows)},
            {"pgm16", base64_encode(netpbm::encode(saliency_to_raster(map)))}};
}

json prediction_json(const Prediction& p, bool include_saliency) {
    json j = {{"class_index", p.class_index},
              {"probabilities", p.probabilities},
              {"path_used", p.prompted ? "prompted" : "non-prompted"}};
    if (include_saliency && p.saliency) j["saliency"] = saliency_json(*p.saliency);
    return j;
}

namespace {

// Nested numeric array -> (H, W, C, values row-major with interleaved channels).
struct Grid {
    std::size_t h = 0, w = 0, c = 1;
    std::vector<double> v;
};

Grid decode_grid(const json& a, std::size_t max_side, const char* what) {
    if (!a.is_array() || a.empty()) throw DataError(std::string(what) + " array must be a non-empty list of rows");
    Grid g;
    g.h = a.size();
    if (!a[0].is_array() || a[0].empty()) throw DataError(std::string(what) + " rows must be non-empty lists");
    g.w = a[0].size();
    if (g.h > max_side || g.w > max_side)
        throw DataError(std::string(what) + " array " + std::to_string(g.h) + "x" + std::to_string(g.w) +
                        " exceeds the " + std::to_string(max_side) + "x" + std::to_string(max_side) + " limit");
    g.c = a[0][0].is_array() ? a[0][0].size() : 1;
    if (g.c == 0) throw DataError(std::string(what) + " pixel lists must be non-empty");
    for (std::size_t y = 0; y < g.h; ++y) {
        if (!a[y].is_array() || a[y].size() != g.w)
            throw DataError(std::string(what) + " row " + std::to_string(y) + " has the wrong length");
        for (const json& px : a[y]) {
            if (g.c == 1 && px.is_number()) {
                g.v.push_back(px.get<double>());
                continue;
            }
            if (!px.is_array() || px.size() != g.c)
                throw DataError(std::string(what) + " row " + std::to_string(y) + " mixes pixel shapes");
            for (const json& s : px) {
                if (!s.is_number()) throw DataError(std::string(what) + " values must be numbers");
                g.v.push_back(s.get<double>());
            }
        }
    }
    return g;
}

}  // namespace

Tensor decode_image(const json& v, std::size_t max_side) {
    if (v.is_string()) return netpbm::to_tensor(netpbm::parse(base64_decode(v.get<std::string>()), "image"));
    const Grid g = decode_grid(v, max_side, "image");
    Tensor t({g.c, g.h, g.w});
    for (std::size_t i = 0; i < g.h * g.w; ++i)
        for (std::size_t c = 0; c < g.c; ++c) {
            const double x = g.v[i * g.c + c];
            if (!(x >= 0.0 && x <= 1.0)) throw DataError("image array values must lie in [0,1]");
            t[c * g.h * g.w + i] = x;
        }
    return t;
}

AttentionPrompt decode_prompt(const json& v, std::size_t max_side) {
    if (v.is_string())
        return prompt_from_raster(netpbm::parse(base64_decode(v.get<std::string>()), "prompt"), "prompt");
    const Grid g = decode_grid(v, max_side, "prompt");
    if (g.c != 1) throw DataError("prompt array must be two-dimensional");
    std::vector<int> vals;
    for (double x : g.v) {
        if (x != -1.0 && x != 0.0 && x != 1.0) throw DataError("prompt values must be -1, 0 or 1");
        vals.push_back(static_cast<int>(x));
    }
    return AttentionPrompt(g.h, g.w, std::move(vals));
}

// ---- service ----

namespace {

constexpr std::size_t kMaxArraySide = 128;

struct RequestError {
    int status;
    std::string message;
};

HttpResponse json_response(int status, const json& j) { return {status, j.dump()}; }

HttpResponse error_response(int status, const std::string& message, const std::string& body) {
    json j = {{"error", message}};
    if (status >= 500) {
        const std::string id = fnv1a_hex(message + "\n" + body);
        j["diagnostic_id"] = id;
        std::fprintf(stderr, "vapl serve: diagnostic %s: %s\n", id.c_str(), message.c_str());
    }
    return json_response(status, j);
}

double ms_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t).count();
}

template <class F>
HttpResponse guarded(const std::string& body, F&& f) {
    try {
        return f();
    } catch (const RequestError& e) {
        return error_response(e.status, e.message, body);
    } catch (const NumericError& e) {
        return error_response(500, e.what(), body);
    } catch (const json::exception& e) {
        return error_response(400, std::string("malformed request: ") + e.what(), body);
    } catch (const DataError& e) {
        return error_response(400, e.what(), body);
    } catch (const ShapeError& e) {
        return error_response(400, e.what(), body);
    } catch (const ConfigError& e) {
        return error_response(400, e.what(), body);
    } catch (const std::exception& e) {
        return error_response(500, e.what(), body);
    }
}

}  // namespace

struct InferenceService::Parsed {
    std::shared_ptr<const ModelSnapshot> snap;
    Tensor image;
    std::optional<AttentionPrompt> prompt;
    bool return_saliency = false;
    PredictOptions opts;
    std::optional<std::size_t> class_index;
};

InferenceService::InferenceService(ServeConfig config) : config_(std::move(config)) {}

void InferenceService::load(const std::filesystem::path& checkpoint) {
    auto snap = std::make_shared<ModelSnapshot>();
    snap->state = load_checkpoint(checkpoint);
    snap->checkpoint_id = fnv1a_hex(netpbm::read_file(checkpoint));
    snap->config_hash = fnv1a_hex(snap->state.config.to_text());
    std::lock_guard lock(mutex_);
    snapshot_ = std::move(snap);
    checkpoint_path_ = checkpoint;
}

void InferenceService::reload() {
    std::filesystem::path p;
    {
        std::lock_guard lock(mutex_);
        p = checkpoint_path_;
    }
    if (p.empty()) throw ConfigError("no checkpoint has been loaded");
    load(p);
}

void InferenceService::set_snapshot(std::shared_ptr<const ModelSnapshot> snapshot) {
    std::lock_guard lock(mutex_);
    snapshot_ = std::move(snapshot);
}

std::shared_ptr<const ModelSnapshot> InferenceService::snapshot() const {
    std::lock_guard lock(mutex_);
    return snapshot_;
}

void InferenceService::set_dataset(std::shared_ptr<const std::vector<Sample>> samples) {
    std::lock_guard lock(mutex_);
    dataset_ = std::move(samples);
}

InferenceService::Parsed InferenceService::parse_request(const std::string& body, bool need_prompt) const {
    if (body.empty()) throw RequestError{400, "empty request body"};
    Parsed p;
    p.snap = snapshot();
    if (!p.snap) throw RequestError{409, "no model loaded"};
    const json j = json::parse(body);
    if (!j.is_object()) throw RequestError{400, "request body must be a JSON object"};
    if (!j.contains("image")) throw RequestError{400, "missing field 'image'"};
    p.image = decode_image(j.at("image"), kMaxArraySide);
    if (j.contains("prompt") && !j.at("prompt").is_null()) p.prompt = decode_prompt(j.at("prompt"), kMaxArraySide);
    if (need_prompt && !p.prompt) throw RequestError{400, "missing field 'prompt'"};
    const ModelSpec& ms = p.snap->state.config.model;
    if (p.image.dim(0) != ms.channels || p.image.dim(1) != ms.height || p.image.dim(2) != ms.width)
        throw RequestError{400, "image is " + shape_str(p.image.shape()) + ", model expects [" +
                                    std::to_string(ms.channels) + ", " + std::to_string(ms.height) + ", " +
                                    std::to_string(ms.width) + "]"};
    if (p.prompt && (p.prompt->height() != ms.height || p.prompt->width() != ms.width))
        throw RequestError{400, "prompt is " + std::to_string(p.prompt->height()) + "x" +
                                    std::to_string(p.prompt->width()) + ", image is " + std::to_string(ms.height) +
                                    "x" + std::to_string(ms.width)};
    p.opts.n_masks = config_.default_masks;
    p.opts.workers = worker_count();
    if (j.contains("options")) {
        const json& o = j.at("options");
        if (!o.is_object()) throw RequestError{400, "'options' must be an object"};
        p.return_saliency = o.value("return_saliency", false);
        p.opts.seed = o.value("seed", std::uint64_t{0});
        if (o.contains("n_masks")) {
            const auto n = o.at("n_masks").get<std::int64_t>();
            if (n < 1 || static_cast<std::size_t>(n) > config_.max_masks)
                throw RequestError{400, "n_masks must lie in [1, " + std::to_string(config_.max_masks) + "]"};
            p.opts.n_masks = static_cast<std::size_t>(n);
        }
        if (o.contains("class_index")) {
            const auto k = o.at("class_index").get<std::int64_t>();
            if (k < 0 || static_cast<std::size_t>(k) >= ms.classes) throw RequestError{400, "class_index out of range"};
            p.class_index = static_cast<std::size_t>(k);
        }
    }
    return p;
}

HttpResponse InferenceService::predict(const std::string& body) const {
    return guarded(body, [&] {
        const auto t0 = std::chrono::steady_clock::now();
        const Parsed p = parse_request(body, false);
        const double decode_ms = ms_since(t0);
        const auto t1 = std::chrono::steady_clock::now();
        const Prediction pred = vapl::predict(p.snap->state, p.image, p.prompt ? &*p.prompt : nullptr, p.opts);
        json j = prediction_json(pred, p.return_saliency);
        if (pred.prompted)
            j["non_prompted_probabilities"] = vapl::predict(p.snap->state, p.image, nullptr, p.opts).probabilities;
        j["timing_ms"] = {{"decode", decode_ms}, {"inference", ms_since(t1)}, {"total", ms_since(t0)}};
        return json_response(200, j);
    });
}

HttpResponse InferenceService::refine(const std::string& body) const {
    return guarded(body, [&] {
        const auto t0 = std::chrono::steady_clock::now();
        const Parsed p = parse_request(body, true);
        const SaliencyMap map = refine_for(p.snap->state, p.image, *p.prompt, p.opts, p.class_index);
        json j = {{"saliency", saliency_json(map)}};
        j["timing_ms"] = {{"total", ms_since(t0)}};
        return json_response(200, j);
    });
}

HttpResponse InferenceService::health() const {
    const auto snap = snapshot();
    json j = {{"status", "ok"}, {"checkpoint_id", nullptr}, {"config_hash", nullptr}};
    if (snap) {
        j["checkpoint_id"] = snap->checkpoint_id;
        j["config_hash"] = snap->config_hash;
    }
    return json_response(200, j);
}

HttpResponse InferenceService::dataset_listing() const {
    std::shared_ptr<const std::vector<Sample>> data;
    {
        std::lock_guard lock(mutex_);
        data = dataset_;
    }
    if (!config_.expose_dataset || !data) return error_response(404, "dataset listing is disabled", "");
    json items = json::array();
    for (std::size_t i = 0; i < data->size(); ++i) items.push_back({{"index", i}, {"label", (*data)[i].label}});
    return json_response(200, {{"split", "test"}, {"count", data->size()}, {"items", std::move(items)}});
}

HttpResponse InferenceService::dataset_item(std::size_t index) const {
    std::shared_ptr<const std::vector<Sample>> data;
    {
        std::lock_guard lock(mutex_);
        data = dataset_;
    }
    if (!config_.expose_dataset || !data) return error_response(404, "dataset listing is disabled", "");
    if (index >= data->size()) return error_response(404, "no sample " + std::to_string(index), "");
    const Sample& s = (*data)[index];
    return json_response(200, {{"index", index},
                               {"label", s.label},
                               {"image", base64_encode(netpbm::encode(netpbm::from_tensor(s.image)))},
                               {"prompt", base64_encode(netpbm::encode(prompt_to_raster(s.prompt)))}});
}

// ---- HTTP ----

struct HttpServer::Impl {
    InferenceService& service;
    httplib::Server server;
    std::thread thread;

    explicit Impl(InferenceService& s) : service(s) {
        auto send = [](httplib::Response& res, const HttpResponse& r) {
            res.status = r.status;
            res.set_content(r.body, "application/json");
        };
        server.set_payload_max_length(64 << 20);
        server.Post("/predict", [this, send](const httplib::Request& req, httplib::Response& res) {
            send(res, service.predict(req.body));
        });
        server.Post("/refine", [this, send](const httplib::Request& req, httplib::Response& res) {
            send(res, service.refine(req.body));
        });
        server.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) {
            send(res, service.health());
        });
        server.Post("/reload", [this, send](const httplib::Request&, httplib::Response& res) {
            try {
                service.reload();
                send(res, service.health());
            } catch (const ConfigError& e) {
                send(res, error_response(409, e.what(), ""));
            } catch (const std::exception& e) {
                send(res, error_response(500, e.what(), ""));
            }
        });
        server.Get("/dataset", [this, send](const httplib::Request&, httplib::Response& res) {
            send(res, service.dataset_listing());
        });
        server.Get(R"(/dataset/(\d+))", [this, send](const httplib::Request& req, httplib::Response& res) {
            send(res, service.dataset_item(std::stoul(req.matches[1].str())));
        });
    }
};

HttpServer::HttpServer(InferenceService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& addr, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(addr);
    } else if (!impl_->server.bind_to_port(addr, port)) {
        bound = -1;
    }
    if (bound <= 0) throw ConfigError("cannot bind " + addr + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void HttpServer::listen(const std::string& addr, int port) {
    if (!impl_->server.bind_to_port(addr, port))
        throw ConfigError("cannot bind " + addr + ":" + std::to_string(port));
    impl_->server.listen_after_bind();
}

void HttpServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace vapl
