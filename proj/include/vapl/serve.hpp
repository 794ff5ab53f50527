#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "json.hpp"
#include "vapl/config.hpp"
#include "vapl/cotrain.hpp"
#include "vapl/data.hpp"

namespace vapl {

std::string base64_encode(std::string_view bytes);
// Throws DataError on malformed input.
std::string base64_decode(std::string_view text);

// Class, probabilities and path; saliency (values plus 16-bit PGM, base64) when
// requested and present. Shared by the HTTP service and `vapl eval`.
nlohmann::json prediction_json(const Prediction& p, bool include_saliency);
nlohmann::json saliency_json(const SaliencyMap& map);

// Image from base64 PPM/PGM or a nested [H][W] / [H][W][C] array of values in [0,1].
Tensor decode_image(const nlohmann::json& v, std::size_t max_array_side);
// Prompt from base64 PGM (0/128/255) or a nested [H][W] array over {-1,0,1}.
AttentionPrompt decode_prompt(const nlohmann::json& v, std::size_t max_array_side);

struct ModelSnapshot {
    CoTrainState state;
    std::string checkpoint_id;  // FNV-1a of the checkpoint file bytes
    std::string config_hash;    // FNV-1a of the canonical config text
};

struct HttpResponse {
    int status = 200;
    std::string body;  // JSON
};

// Request handling independent of the transport. Every handler reads one
// immutable snapshot; load() swaps snapshots between requests.
class InferenceService {
public:
    explicit InferenceService(ServeConfig config);

    void load(const std::filesystem::path& checkpoint);
    void set_snapshot(std::shared_ptr<const ModelSnapshot> snapshot);
    std::shared_ptr<const ModelSnapshot> snapshot() const;
    // Reloads the most recently loaded checkpoint path.
    void reload();

    // Test split offered to the UI when serve.expose_dataset is on.
    void set_dataset(std::shared_ptr<const std::vector<Sample>> samples);

    HttpResponse predict(const std::string& body) const;
    HttpResponse refine(const std::string& body) const;
    HttpResponse health() const;
    HttpResponse dataset_listing() const;
    HttpResponse dataset_item(std::size_t index) const;

    const ServeConfig& config() const { return config_; }

private:
    struct Parsed;
    Parsed parse_request(const std::string& body, bool need_prompt) const;

    ServeConfig config_;
    mutable std::mutex mutex_;
    std::shared_ptr<const ModelSnapshot> snapshot_;
    std::shared_ptr<const std::vector<Sample>> dataset_;
    std::filesystem::path checkpoint_path_;
};

// HTTP/1.1 front end for an InferenceService.
class HttpServer {
public:
    explicit HttpServer(InferenceService& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Binds addr:port (port 0 picks a free one) and serves on a background thread.
    int start(const std::string& addr, int port);
    // Serves on the calling thread until stop().
    void listen(const std::string& addr, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace vapl
