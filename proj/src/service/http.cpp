#include <charconv>
#include <thread>

#include <httplib.h>

#include "drscreen/error.hpp"
#include "drscreen/service.hpp"

namespace drscreen::service {
namespace {

constexpr std::size_t kMaxPageSize = 100;

int status_for(const Error& e) {
  const std::string_view k = e.kind();
  if (k == "not-found") return 404;
  if (k == "unavailable") return 503;
  if (k == "client" || k == "range" || k == "bounds" || k == "decode") return 400;
  return 500;
}

std::size_t parse_positive(const std::string& s, const char* name) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || v == 0) {
    throw ClientError(std::string(name) + " must be a positive integer");
  }
  return v;
}

int parse_crop_field(const std::string& s, const char* name) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ClientError(std::string(name) + " must be an integer");
  }
  return v;
}

std::optional<std::string> form_field(const httplib::Request& req, const std::string& key) {
  if (req.has_file(key)) return req.get_file_value(key).content;
  if (req.has_param(key)) return req.get_param_value(key);
  return std::nullopt;
}

}  // namespace

struct HttpServer::Impl {
  ScreeningService& service;
  httplib::Server server;

  explicit Impl(ScreeningService& s) : service(s) { routes(); }

  void reply(httplib::Response& res, int status, nlohmann::json body) {
    body["model_version"] = service.model_version();
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void fail(httplib::Response& res, int status, std::string_view kind, std::string_view message) {
    reply(res, status, {{"error", {{"kind", kind}, {"message", message}}}});
  }

  template <class F>
  void guarded(httplib::Response& res, F&& body) {
    try {
      body();
    } catch (const Error& e) {
      fail(res, status_for(e), e.kind(), e.what());
    } catch (const nlohmann::json::exception& e) {
      fail(res, 400, "client", std::string("malformed JSON body: ") + e.what());
    } catch (const std::exception& e) {
      fail(res, 500, "internal", e.what());
    }
  }

  nlohmann::json record_json(const ScreeningRecord& r) {
    nlohmann::json j = r;
    j.erase("image_file");
    return j;
  }

  void routes() {
    server.set_payload_max_length(service.config().max_upload_bytes + (64u << 10));

    server.Post("/api/v1/screenings", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.is_multipart_form_data() || !req.has_file("image")) {
          throw ClientError("expected multipart/form-data with an 'image' part");
        }
        const auto& image = req.get_file_value("image").content;
        const std::string patient = form_field(req, "patient_code").value_or("");
        std::optional<Eye> eye;
        if (auto e = form_field(req, "eye"); e && !e->empty()) {
          if (*e == "left") eye = Eye::kLeft;
          else if (*e == "right") eye = Eye::kRight;
          else throw ClientError("eye must be 'left' or 'right'");
        }
        const auto cx = form_field(req, "crop_x"), cy = form_field(req, "crop_y"),
                   cs = form_field(req, "crop_side");
        std::optional<CropRect> crop;
        if (cx || cy || cs) {
          if (!(cx && cy && cs)) throw ClientError("crop_x, crop_y and crop_side go together");
          crop = CropRect{parse_crop_field(*cx, "crop_x"), parse_crop_field(*cy, "crop_y"),
                          parse_crop_field(*cs, "crop_side")};
        }
        const auto* bytes = reinterpret_cast<const std::uint8_t*>(image.data());
        const auto rec = service.submit(std::span(bytes, image.size()), patient, eye, crop);
        reply(res, 201, record_json(rec));
      });
    });

    server.Get(R"(/api/v1/screenings/([A-Za-z0-9_\-]+))",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] { reply(res, 200, record_json(service.get(req.matches[1]))); });
               });

    server.Get("/api/v1/screenings", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::optional<std::string> patient;
        if (req.has_param("patient_code") && !req.get_param_value("patient_code").empty()) {
          patient = req.get_param_value("patient_code");
        }
        const std::size_t page = req.has_param("page") ? parse_positive(req.get_param_value("page"), "page") : 1;
        const std::size_t size =
            req.has_param("page_size") ? parse_positive(req.get_param_value("page_size"), "page_size") : 20;
        if (size > kMaxPageSize) throw ClientError("page_size may not exceed 100");
        const Page p = service.list(patient, page, size);
        nlohmann::json items = nlohmann::json::array();
        for (const auto& r : p.items) items.push_back(record_json(r));
        reply(res, 200, {{"items", items}, {"page", p.page}, {"page_size", p.page_size}, {"total", p.total}});
      });
    });

    server.Post(R"(/api/v1/screenings/([A-Za-z0-9_\-]+)/decision)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    const auto body = nlohmann::json::parse(req.body);
                    if (!body.is_object() || !body.contains("decision") || body.size() != 1) {
                      throw ClientError("body must be exactly {\"decision\": \"refer\" | \"monitor\"}");
                    }
                    if (!body["decision"].is_string()) throw ClientError("decision must be a string");
                    const auto d = parse_decision(body["decision"].get<std::string>());
                    reply(res, 200, record_json(service.record_decision(req.matches[1], d)));
                  });
                });

    server.Get("/api/v1/summary", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::optional<std::string> patient;
        if (req.has_param("patient_code") && !req.get_param_value("patient_code").empty()) {
          patient = req.get_param_value("patient_code");
        }
        reply(res, 200, to_json(service.summary(patient)));
      });
    });

    server.Get("/api/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { reply(res, 200, service.health()); });
    });

    // Unmatched routes and httplib-generated errors (e.g. 413) get JSON bodies too.
    server.set_error_handler([this](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const char* kind = res.status == 404 ? "not-found" : res.status == 413 ? "client" : "http";
      fail(res, res.status, kind, httplib::status_message(res.status));
    });
  }
};

HttpServer::HttpServer(ScreeningService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p <= 0) throw IoError("cannot bind to " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw IoError("cannot bind to " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace drscreen::service
