#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ifse/session.hpp"

namespace httplib {
class Server;
}

namespace ifse::service {

struct ServiceLimits {
    std::size_t max_request_bytes = 64u << 20;
    std::size_t max_image_bytes = 16u << 20;
    int max_image_side = 4096;
    int max_images_per_session = 64;
};

/// Maps a domain error to an HTTP status (400, 404, 409, 413, 500).
int http_status_for(const std::exception& e);

/// Thrown for uploads above the configured limits.
class PayloadTooLarge : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Live annotation sessions over one immutable checkpoint.
///
/// Mutations of one session are serialized by a per-session mutex; different
/// sessions proceed in parallel. Every accepted mutation is appended to the
/// session's journal under `state_dir` before it is acknowledged, and a
/// restarted service replays the journals to the same masks.
class SessionService {
public:
    SessionService(std::shared_ptr<model::IfseNet> net, std::string checkpoint_version,
                   std::filesystem::path state_dir, std::optional<std::filesystem::path> corpus_dir = {},
                   ServiceLimits limits = {});
    ~SessionService();

    const std::string& checkpoint_version() const { return version_; }
    const ServiceLimits& limits() const { return limits_; }

    /// Body: {"images": [{"id", "data" (base64 image) | "path" (corpus-relative),
    /// "ground_truth"? (base64 mask PNG)}], "support_ids": [...], "checkpoint"?}.
    /// Returns the snapshot at revision 0. No forward pass runs.
    nlohmann::json create(const nlohmann::json& body);

    nlohmann::json get(const std::string& id) const;

    /// Body: {"image_id", "row", "col", "polarity", "expected_revision"}.
    /// Appends the click, runs one forward, bumps the revision, returns the snapshot.
    nlohmann::json add_click(const std::string& id, const nlohmann::json& body);

    /// Body: {"image_id", "expected_revision"?}. No forward pass runs.
    nlohmann::json promote(const std::string& id, const nlohmann::json& body);

    /// Single-channel PNG (0/255) of the image's current mask.
    std::vector<std::uint8_t> mask_png(const std::string& id, const std::string& image_id) const;

    std::vector<std::string> session_ids() const;

    /// Number of journals that could not be replayed at startup.
    int replay_failures() const { return replay_failures_; }

private:
    struct Slot;

    std::shared_ptr<Slot> find(const std::string& id) const;
    nlohmann::json snapshot(const Slot& slot) const;
    void replay(const std::filesystem::path& dir);
    interactive::ImageEntry ingest(const nlohmann::json& spec) const;

    std::shared_ptr<model::IfseNet> net_;
    std::string version_;
    std::filesystem::path state_dir_;
    std::optional<std::filesystem::path> corpus_dir_;
    ServiceLimits limits_;
    int replay_failures_ = 0;

    mutable std::mutex registry_mutex_;
    std::map<std::string, std::shared_ptr<Slot>> sessions_;
};

/// HTTP+JSON front end:
///   POST /sessions, GET /sessions/{id}, POST /sessions/{id}/clicks,
///   POST /sessions/{id}/promotions, GET /sessions/{id}/masks/{image_id}
class HttpServer {
public:
    explicit HttpServer(SessionService& service);
    ~HttpServer();

    /// Binds without serving; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void serve();
    void stop();

private:
    SessionService& service_;
    std::unique_ptr<httplib::Server> server_;
};

} // namespace ifse::service
