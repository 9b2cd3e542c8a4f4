#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "drscreen/datasets.hpp"
#include "drscreen/grading.hpp"
#include "drscreen/imaging.hpp"
#include "drscreen/model/checkpoint.hpp"
#include "drscreen/model/densenet.hpp"

namespace drscreen::service {

using datasets::Eye;

enum class Decision { kRefer, kMonitor };
std::string_view decision_name(Decision d) noexcept;
/// Throws ClientError for anything but "refer" / "monitor".
Decision parse_decision(std::string_view s);

struct ScreeningRecord {
  std::string screening_id;
  std::string patient_code;
  std::optional<Eye> eye;
  std::string created_at;  // RFC 3339 UTC
  std::array<double, Grade::kCount> probabilities{};
  Grade grade{0};
  bool dr_positive = false;
  double dr_score = 0.0;
  std::string model_version;
  std::optional<CropRect> crop;
  std::optional<Decision> technician_decision;  // nullopt: none recorded
  std::string image_file;  // empty unless images are retained

  friend bool operator==(const ScreeningRecord&, const ScreeningRecord&) = default;
};

void to_json(nlohmann::json& j, const ScreeningRecord& r);
/// Throws FormatError.
void from_json(const nlohmann::json& j, ScreeningRecord& r);

/// "2026-10-16T08:30:00.123Z"
std::string rfc3339_utc(std::chrono::system_clock::time_point t);

struct ServiceConfig {
  std::filesystem::path checkpoint;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path store_path = "screenings.jsonl";
  bool retain_images = false;
  std::size_t max_upload_bytes = 20u << 20;

  void validate() const;
};

void to_json(nlohmann::json& j, const ServiceConfig& c);
void from_json(const nlohmann::json& j, ServiceConfig& c);

struct Page {
  std::vector<ScreeningRecord> items;
  std::size_t page = 1;
  std::size_t page_size = 20;
  std::size_t total = 0;
};

/// Append-only JSON-lines log: one "screening" event per submission and one
/// "decision" event per technician decision. The in-memory index is rebuilt
/// by replaying the log. A torn final line (crash mid-append) is dropped;
/// corruption anywhere else is a FormatError.
class RecordStore {
 public:
  explicit RecordStore(std::filesystem::path log_path);

  void insert(const ScreeningRecord& record);
  /// Throws NotFoundError.
  ScreeningRecord set_decision(const std::string& id, Decision decision);

  std::optional<ScreeningRecord> find(const std::string& id) const;
  bool contains(const std::string& id) const;
  /// Newest first; page is 1-based.
  Page list(const std::optional<std::string>& patient_code, std::size_t page,
            std::size_t page_size) const;
  std::vector<ScreeningRecord> all() const;
  std::size_t size() const;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  void append_line(const nlohmann::json& event);
  void apply(const nlohmann::json& event);

  std::filesystem::path path_;
  mutable std::shared_mutex mu_;
  std::vector<ScreeningRecord> records_;  // insertion order
  std::unordered_map<std::string, std::size_t> index_;
};

struct Summary {
  std::size_t total_screenings = 0;
  std::size_t total_patients = 0;
  std::array<std::size_t, Grade::kCount> per_grade{};
  std::size_t dr_positive = 0;
  double dr_positive_rate = 0.0;  // percent; 0 for an empty store
  std::size_t refer = 0, monitor = 0, undecided = 0;
};

nlohmann::json to_json(const Summary& s);

/// A checkpoint ready to serve.
struct LoadedModel {
  model::Checkpoint checkpoint;
  std::string version;  // checkpoint digest
  std::unique_ptr<model::DenseNet<float>> net;
};

/// Reads, self-validates and digests a checkpoint. Throws FormatError,
/// IoError, or ConfigError if the head is not 5-way.
std::shared_ptr<const LoadedModel> load_model(const std::filesystem::path& path);
std::shared_ptr<const LoadedModel> make_model(model::Checkpoint checkpoint);

/// Screening workflow over a model and a record store. Thread-safe.
class ScreeningService {
 public:
  /// `model` may be null; submissions then fail with UnavailableError.
  ScreeningService(std::shared_ptr<const LoadedModel> model, ServiceConfig config);

  /// Throws ClientError (empty patient code, oversize or undecodable image,
  /// crop out of bounds), UnavailableError (no model).
  ScreeningRecord submit(std::span<const std::uint8_t> image_bytes, const std::string& patient_code,
                         std::optional<Eye> eye = std::nullopt,
                         std::optional<CropRect> crop = std::nullopt);
  /// Throws NotFoundError.
  ScreeningRecord get(const std::string& id) const;
  Page list(const std::optional<std::string>& patient_code, std::size_t page = 1,
            std::size_t page_size = 20) const;
  /// Only the decision changes. Throws NotFoundError.
  ScreeningRecord record_decision(const std::string& id, Decision decision);
  Summary summary(const std::optional<std::string>& patient_code = std::nullopt) const;
  nlohmann::json health() const;

  /// "unloaded" when there is no model.
  std::string model_version() const;
  const ServiceConfig& config() const noexcept { return config_; }

 private:
  std::string new_id();

  std::shared_ptr<const LoadedModel> model_;
  ServiceConfig config_;
  RecordStore store_;
  std::chrono::steady_clock::time_point started_;
  std::mutex id_mu_;
  std::uint64_t id_state_;
};

/// REST front end (see README for routes). Owns an HTTP server bound to the
/// service; the service must outlive it.
class HttpServer {
 public:
  explicit HttpServer(ScreeningService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Returns the bound port (an ephemeral one when port is 0). Throws IoError.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace drscreen::service
