#include "ifse/service.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <iterator>

#include <boost/beast/core/detail/base64.hpp>
#include <boost/uuid/random_generator.hpp>
#include <boost/uuid/uuid_io.hpp>
#include <httplib.h>

#include "ifse/error.hpp"
#include "ifse/metrics.hpp"
#include "ifse/model/ifsenet.hpp"

namespace ifse::service {

namespace fs = std::filesystem;
namespace b64 = boost::beast::detail::base64;
using nlohmann::json;

int http_status_for(const std::exception& e) {
    if (dynamic_cast<const PayloadTooLarge*>(&e)) return 413;
    if (dynamic_cast<const InvalidArgument*>(&e)) return 400;
    if (dynamic_cast<const json::exception*>(&e)) return 400;
    if (dynamic_cast<const NotFound*>(&e)) return 404;
    if (dynamic_cast<const Conflict*>(&e)) return 409;
    return 500;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out(b64::encoded_size(bytes.size()), '\0');
    out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    // Accept data URLs as sent by browsers.
    std::string_view body = text;
    if (body.rfind("data:", 0) == 0) {
        const auto comma = body.find(',');
        if (comma == std::string_view::npos) throw InvalidArgument("malformed data URL");
        body.remove_prefix(comma + 1);
    }
    std::vector<std::uint8_t> out(b64::decoded_size(body.size()));
    const auto [written, read] = b64::decode(out.data(), body.data(), body.size());
    // decode() stops at the first '=' or foreign character; only padding may follow.
    const auto rest = body.substr(read);
    if (body.size() % 4 != 0 || rest.size() > 2 || rest.find_first_not_of('=') != std::string_view::npos) {
        throw InvalidArgument("invalid base64 payload");
    }
    out.resize(written);
    return out;
}

namespace {

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

std::string new_session_id() {
    static std::mutex mutex;
    static boost::uuids::random_generator gen;
    std::lock_guard lock(mutex);
    auto s = boost::uuids::to_string(gen());
    std::erase(s, '-');
    return s;
}

std::vector<std::uint8_t> read_file(const fs::path& path, std::size_t limit) {
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec) throw NotFound("cannot read '" + path.string() + "'");
    if (size > limit) throw PayloadTooLarge("'" + path.filename().string() + "' exceeds the image size limit");
    std::ifstream in(path, std::ios::binary);
    std::vector<std::uint8_t> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    return bytes;
}

void write_file_atomic(const fs::path& path, const void* data, std::size_t size) {
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

const std::string& require_string(const json& body, const char* key) {
    if (!body.is_object() || !body.contains(key) || !body[key].is_string()) {
        throw InvalidArgument(std::string("missing string field '") + key + "'");
    }
    return body[key].get_ref<const std::string&>();
}

int require_int(const json& body, const char* key) {
    if (!body.is_object() || !body.contains(key) || !body[key].is_number_integer()) {
        throw InvalidArgument(std::string("missing integer field '") + key + "'");
    }
    return body[key].get<int>();
}

} // namespace

struct SessionService::Slot {
    std::mutex mutex;
    std::string id;
    fs::path dir;
    std::string created;
    std::string updated;
    long revision = 0;
    std::unique_ptr<interactive::InteractiveSession> session;
    std::unique_ptr<interactive::NetworkPredictor> predictor;

    void append(const json& event) {
        std::ofstream out(dir / "journal.jsonl", std::ios::app);
        out << event.dump() << "\n";
        out.flush();
        if (!out) throw IoError("cannot append to the journal of session " + id);
    }
};

SessionService::SessionService(std::shared_ptr<model::IfseNet> net, std::string checkpoint_version,
                               fs::path state_dir, std::optional<fs::path> corpus_dir, ServiceLimits limits)
    : net_(std::move(net)),
      version_(std::move(checkpoint_version)),
      state_dir_(std::move(state_dir)),
      corpus_dir_(std::move(corpus_dir)),
      limits_(limits) {
    if (!net_ || !*net_) throw InvalidArgument("the service needs a network");
    (*net_)->eval();
    if (corpus_dir_) {
        if (!fs::is_directory(*corpus_dir_)) throw InvalidArgument("corpus directory does not exist");
        corpus_dir_ = fs::canonical(*corpus_dir_);
    }
    fs::create_directories(state_dir_);
    for (const auto& d : fs::directory_iterator(state_dir_)) {
        if (!d.is_directory() || !fs::exists(d.path() / "session.json")) continue;
        try {
            replay(d.path());
        } catch (const std::exception& e) {
            ++replay_failures_;
            std::cerr << "session " << d.path().filename().string() << " not restored: " << e.what() << "\n";
        }
    }
}

SessionService::~SessionService() = default;

interactive::ImageEntry SessionService::ingest(const json& spec) const {
    interactive::ImageEntry entry;
    entry.id = require_string(spec, "id");
    if (entry.id.empty() || entry.id.find_first_of("/\\") != std::string::npos) {
        throw InvalidArgument("image ids must be non-empty and contain no path separators");
    }
    std::vector<std::uint8_t> bytes;
    if (spec.contains("data")) {
        bytes = base64_decode(require_string(spec, "data"));
        if (bytes.size() > limits_.max_image_bytes) {
            throw PayloadTooLarge("image '" + entry.id + "' exceeds the upload size limit");
        }
    } else if (spec.contains("path")) {
        if (!corpus_dir_) throw InvalidArgument("this service has no corpus directory");
        const auto resolved = fs::weakly_canonical(*corpus_dir_ / require_string(spec, "path"));
        const auto rel = resolved.lexically_relative(*corpus_dir_);
        if (rel.empty() || *rel.begin() == "..") throw InvalidArgument("path escapes the corpus directory");
        bytes = read_file(resolved, limits_.max_image_bytes);
    } else {
        throw InvalidArgument("image '" + entry.id + "' needs either data or path");
    }
    try {
        entry.rgb = data::decode_rgb(bytes);
    } catch (const std::exception&) {
        throw InvalidArgument("image '" + entry.id + "' could not be decoded");
    }
    if (entry.rgb.rows > limits_.max_image_side || entry.rgb.cols > limits_.max_image_side) {
        throw PayloadTooLarge("image '" + entry.id + "' exceeds the maximum side length");
    }
    if (spec.contains("ground_truth") && !spec["ground_truth"].is_null()) {
        entry.gt = data::decode_mask_png(base64_decode(require_string(spec, "ground_truth")));
    }
    return entry;
}

json SessionService::create(const json& body) {
    if (!body.is_object()) throw InvalidArgument("request body must be a JSON object");
    if (body.contains("checkpoint") && !body["checkpoint"].is_null() &&
        body["checkpoint"].get<std::string>() != version_) {
        throw NotFound("unknown checkpoint '" + body["checkpoint"].get<std::string>() + "'; serving " + version_);
    }
    if (!body.contains("images") || !body["images"].is_array() || body["images"].empty()) {
        throw InvalidArgument("images must be a non-empty list");
    }
    if (static_cast<int>(body["images"].size()) > limits_.max_images_per_session) {
        throw PayloadTooLarge("too many images for one session");
    }
    if (!body.contains("support_ids") || !body["support_ids"].is_array()) {
        throw InvalidArgument("support_ids must be a list");
    }
    const auto support_ids = body["support_ids"].get<std::vector<std::string>>();

    std::vector<interactive::ImageEntry> images;
    for (const auto& spec : body["images"]) images.push_back(ingest(spec));

    auto slot = std::make_shared<Slot>();
    slot->session = std::make_unique<interactive::InteractiveSession>(images, support_ids, (*net_)->config().input_patch,
                                                                      (*net_)->config().click_disk_radius);
    slot->predictor = std::make_unique<interactive::NetworkPredictor>(net_);
    slot->id = new_session_id();
    slot->created = slot->updated = now_iso8601();
    slot->dir = state_dir_ / slot->id;

    // Persist the re-encoded inputs so a restart decodes exactly the same pixels.
    fs::create_directories(slot->dir / "images");
    json meta_images = json::array();
    for (std::size_t i = 0; i < images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%03zu.png", i);
        const auto png = data::encode_rgb_png(images[i].rgb);
        write_file_atomic(slot->dir / "images" / name, png.data(), png.size());
        json m{{"id", images[i].id}, {"file", name}};
        if (images[i].gt) {
            std::snprintf(name, sizeof(name), "%03zu_gt.png", i);
            const auto gt_png = data::encode_mask_png(*images[i].gt);
            write_file_atomic(slot->dir / "images" / name, gt_png.data(), gt_png.size());
            m["gt_file"] = name;
        }
        meta_images.push_back(m);
    }
    const auto meta = json{{"id", slot->id},
                           {"checkpoint_version", version_},
                           {"created_at", slot->created},
                           {"support_ids", support_ids},
                           {"images", meta_images}}
                          .dump(2);
    write_file_atomic(slot->dir / "session.json", meta.data(), meta.size());

    std::lock_guard slot_lock(slot->mutex);
    {
        std::lock_guard lock(registry_mutex_);
        sessions_[slot->id] = slot;
    }
    return snapshot(*slot);
}

void SessionService::replay(const fs::path& dir) {
    std::ifstream meta_in(dir / "session.json");
    const auto meta = json::parse(meta_in);
    if (meta.at("checkpoint_version").get<std::string>() != version_) {
        throw Conflict("recorded with checkpoint " + meta.at("checkpoint_version").get<std::string>());
    }
    std::vector<interactive::ImageEntry> images;
    for (const auto& m : meta.at("images")) {
        interactive::ImageEntry e;
        e.id = m.at("id").get<std::string>();
        e.rgb = data::decode_rgb(read_file(dir / "images" / m.at("file").get<std::string>(), SIZE_MAX));
        if (m.contains("gt_file")) {
            e.gt = data::decode_mask_png(read_file(dir / "images" / m.at("gt_file").get<std::string>(), SIZE_MAX));
        }
        images.push_back(std::move(e));
    }
    auto slot = std::make_shared<Slot>();
    slot->id = meta.at("id").get<std::string>();
    slot->dir = dir;
    slot->created = slot->updated = meta.at("created_at").get<std::string>();
    slot->session = std::make_unique<interactive::InteractiveSession>(
        std::move(images), meta.at("support_ids").get<std::vector<std::string>>(), (*net_)->config().input_patch,
        (*net_)->config().click_disk_radius);
    slot->predictor = std::make_unique<interactive::NetworkPredictor>(net_);

    std::ifstream journal(dir / "journal.jsonl");
    std::string line;
    while (std::getline(journal, line)) {
        if (line.empty()) continue;
        const auto ev = json::parse(line);
        const auto& type = ev.at("type").get_ref<const std::string&>();
        const auto& image_id = ev.at("image_id").get_ref<const std::string&>();
        if (type == "click") {
            slot->session->add_click(image_id, ev.at("row").get<int>(), ev.at("col").get<int>(),
                                     clicks::polarity_from_string(ev.at("polarity").get<std::string>()));
            slot->session->run_forward(*slot->predictor);
        } else if (type == "promote") {
            slot->session->promote(image_id);
        } else {
            throw InvalidArgument("unknown journal event '" + type + "'");
        }
        if (ev.at("revision").get<long>() != slot->revision + 1) throw InvalidArgument("journal revisions out of order");
        slot->revision = ev.at("revision").get<long>();
        slot->updated = ev.at("at").get<std::string>();
    }
    std::lock_guard lock(registry_mutex_);
    sessions_[slot->id] = slot;
}

std::shared_ptr<SessionService::Slot> SessionService::find(const std::string& id) const {
    std::lock_guard lock(registry_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("no session '" + id + "'");
    return it->second;
}

json SessionService::snapshot(const Slot& slot) const {
    json supports = json::array(), queries = json::array();
    for (const auto& e : slot.session->entries()) {
        json j{{"image_id", e.image.id},
               {"height", e.image.rgb.rows},
               {"width", e.image.rgb.cols},
               {"mask", base64_encode(data::encode_mask_png(e.mask))}};
        if (e.image.gt) j["iou"] = eval::iou(e.mask, *e.image.gt);
        if (e.support) {
            json clicks = json::array();
            for (const auto& c : e.history) {
                clicks.push_back(
                    {{"row", c.row}, {"col", c.col}, {"polarity", clicks::to_string(c.polarity)}, {"order", c.order}});
            }
            j["clicks"] = std::move(clicks);
            supports.push_back(std::move(j));
        } else {
            queries.push_back(std::move(j));
        }
    }
    return {{"id", slot.id},
            {"revision", slot.revision},
            {"checkpoint_version", version_},
            {"created_at", slot.created},
            {"updated_at", slot.updated},
            {"support_entries", std::move(supports)},
            {"query_entries", std::move(queries)}};
}

json SessionService::get(const std::string& id) const {
    const auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    return snapshot(*slot);
}

namespace {

void check_revision(const json& body, long current, bool required) {
    if (!body.is_object()) throw InvalidArgument("request body must be a JSON object");
    if (!body.contains("expected_revision")) {
        if (required) throw InvalidArgument("missing integer field 'expected_revision'");
        return;
    }
    const long expected = require_int(body, "expected_revision");
    if (expected != current) {
        throw Conflict("stale revision: expected " + std::to_string(expected) + ", current " +
                       std::to_string(current));
    }
}

} // namespace

json SessionService::add_click(const std::string& id, const json& body) {
    const auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    check_revision(body, slot->revision, true);
    const auto& image_id = require_string(body, "image_id");
    const int row = require_int(body, "row");
    const int col = require_int(body, "col");
    const auto polarity = clicks::polarity_from_string(require_string(body, "polarity"));

    slot->session->add_click(image_id, row, col, polarity);
    slot->session->run_forward(*slot->predictor);
    const auto at = now_iso8601();
    slot->append({{"type", "click"},
                  {"revision", slot->revision + 1},
                  {"image_id", image_id},
                  {"row", row},
                  {"col", col},
                  {"polarity", clicks::to_string(polarity)},
                  {"at", at}});
    ++slot->revision;
    slot->updated = at;
    return snapshot(*slot);
}

json SessionService::promote(const std::string& id, const json& body) {
    const auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    check_revision(body, slot->revision, false);
    const auto& image_id = require_string(body, "image_id");
    slot->session->promote(image_id);
    const auto at = now_iso8601();
    slot->append({{"type", "promote"}, {"revision", slot->revision + 1}, {"image_id", image_id}, {"at", at}});
    ++slot->revision;
    slot->updated = at;
    return snapshot(*slot);
}

std::vector<std::uint8_t> SessionService::mask_png(const std::string& id, const std::string& image_id) const {
    const auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    return data::encode_mask_png(slot->session->entry(image_id).mask);
}

std::vector<std::string> SessionService::session_ids() const {
    std::lock_guard lock(registry_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : sessions_) out.push_back(id);
    return out;
}

// ---- HTTP ----------------------------------------------------------------------

namespace {

template <class F>
void respond(httplib::Response& res, F&& handler) {
    try {
        handler();
    } catch (const std::exception& e) {
        res.status = http_status_for(e);
        res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    return json::parse(req.body);
}

} // namespace

HttpServer::HttpServer(SessionService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    auto& s = *server_;
    s.set_payload_max_length(service_.limits().max_request_bytes);
    s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
    s.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    const auto send_json = [](httplib::Response& res, const json& j, int status = 200) {
        res.status = status;
        res.set_content(j.dump(), "application/json");
    };
    s.Post("/sessions", [this, send_json](const httplib::Request& req, httplib::Response& res) {
        respond(res, [&] { send_json(res, service_.create(parse_body(req)), 201); });
    });
    s.Get(R"(/sessions/([0-9a-f]+))", [this, send_json](const httplib::Request& req, httplib::Response& res) {
        respond(res, [&] { send_json(res, service_.get(req.matches[1])); });
    });
    s.Post(R"(/sessions/([0-9a-f]+)/clicks)", [this, send_json](const httplib::Request& req, httplib::Response& res) {
        respond(res, [&] { send_json(res, service_.add_click(req.matches[1], parse_body(req))); });
    });
    s.Post(R"(/sessions/([0-9a-f]+)/promotions)",
           [this, send_json](const httplib::Request& req, httplib::Response& res) {
               respond(res, [&] { send_json(res, service_.promote(req.matches[1], parse_body(req))); });
           });
    s.Get(R"(/sessions/([0-9a-f]+)/masks/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        respond(res, [&] {
            const auto png = service_.mask_png(req.matches[1], req.matches[2]);
            res.set_content(std::string(png.begin(), png.end()), "image/png");
        });
    });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = server_->bind_to_any_port(host);
        if (bound < 0) throw IoError("cannot bind " + host);
        return bound;
    }
    if (!server_->bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpServer::serve() { server_->listen_after_bind(); }

void HttpServer::stop() { server_->stop(); }

} // namespace ifse::service
