#include <random>
#include <set>

#include <fmt/format.h>

#include "drscreen/error.hpp"
#include "drscreen/json_util.hpp"
#include "drscreen/service.hpp"

namespace drscreen::service {

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw ConfigError("service.port must lie in 0..65535");
  if (max_upload_bytes == 0) throw ConfigError("service.max_upload_bytes must be positive");
  if (store_path.empty()) throw ConfigError("service.store_path is required");
}

void to_json(nlohmann::json& j, const ServiceConfig& c) {
  j = nlohmann::json{{"checkpoint", c.checkpoint.string()}, {"host", c.host},
                     {"port", c.port},                      {"store_path", c.store_path.string()},
                     {"retain_images", c.retain_images},    {"max_upload_bytes", c.max_upload_bytes}};
}

void from_json(const nlohmann::json& j, ServiceConfig& c) {
  json_util::reject_unknown_keys(j, "service", {"checkpoint", "host", "port", "store_path",
                                                "retain_images", "max_upload_bytes"});
  std::string checkpoint = c.checkpoint.string(), store = c.store_path.string();
  json_util::read_if_present(j, "checkpoint", checkpoint);
  json_util::read_if_present(j, "host", c.host);
  json_util::read_if_present(j, "port", c.port);
  json_util::read_if_present(j, "store_path", store);
  json_util::read_if_present(j, "retain_images", c.retain_images);
  json_util::read_if_present(j, "max_upload_bytes", c.max_upload_bytes);
  c.checkpoint = checkpoint;
  c.store_path = store;
}

namespace {

std::shared_ptr<const LoadedModel> assemble(model::Checkpoint checkpoint, std::string version) {
  if (checkpoint.config.num_classes != Grade::kCount) {
    throw ConfigError("checkpoint head has " + std::to_string(checkpoint.config.num_classes) +
                      " outputs; screening needs 5");
  }
  auto m = std::make_shared<LoadedModel>();
  m->version = std::move(version);
  m->net = std::make_unique<model::DenseNet<float>>(checkpoint.config);
  m->checkpoint = std::move(checkpoint);
  return m;
}

}  // namespace

std::shared_ptr<const LoadedModel> make_model(model::Checkpoint checkpoint) {
  auto version = model::checkpoint_digest(model::serialize_checkpoint(checkpoint));
  return assemble(std::move(checkpoint), std::move(version));
}

std::shared_ptr<const LoadedModel> load_model(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return assemble(model::deserialize_checkpoint(bytes), model::checkpoint_digest(bytes));
}

ScreeningService::ScreeningService(std::shared_ptr<const LoadedModel> model, ServiceConfig config)
    : model_(std::move(model)),
      config_(std::move(config)),
      store_((config_.validate(), config_.store_path)),
      started_(std::chrono::steady_clock::now()),
      id_state_(std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^
                static_cast<std::uint64_t>(std::chrono::system_clock::now().time_since_epoch().count())) {}

std::string ScreeningService::model_version() const { return model_ ? model_->version : "unloaded"; }

std::string ScreeningService::new_id() {
  std::lock_guard lock(id_mu_);
  for (;;) {
    // SplitMix64 stream: cheap, well distributed, never repeats within 2^64.
    const auto next = [this] {
      std::uint64_t z = (id_state_ += 0x9E3779B97F4A7C15ull);
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
      return z ^ (z >> 31);
    };
    std::string id = fmt::format("scr_{:016x}{:016x}", next(), next());
    if (!store_.contains(id)) return id;
  }
}

ScreeningRecord ScreeningService::submit(std::span<const std::uint8_t> image_bytes,
                                         const std::string& patient_code, std::optional<Eye> eye,
                                         std::optional<CropRect> crop) {
  if (!model_) throw UnavailableError("no checkpoint is loaded");
  if (patient_code.empty()) throw ClientError("patient_code is required");
  if (image_bytes.empty()) throw ClientError("image is empty");
  if (image_bytes.size() > config_.max_upload_bytes) {
    throw ClientError(fmt::format("image is {} bytes; the limit is {}", image_bytes.size(),
                                  config_.max_upload_bytes));
  }
  ImageTensor raw(1, 1);
  try {
    raw = decode_image(image_bytes);
  } catch (const DecodeError& e) {
    throw ClientError(std::string("image could not be decoded: ") + e.what());
  }
  if (crop) {
    try {
      check_crop(*crop, raw.height(), raw.width());
    } catch (const BoundsError& e) {
      throw ClientError(e.what());
    }
  }
  const ImageTensor input = preprocess_decoded(raw, crop, model_->checkpoint.config.input_side);
  const auto pred = model::predict(*model_->net, model_->checkpoint.params, input);

  ScreeningRecord rec;
  rec.screening_id = new_id();
  rec.patient_code = patient_code;
  rec.eye = eye;
  rec.created_at = rfc3339_utc(std::chrono::system_clock::now());
  rec.probabilities = pred.probabilities;
  rec.grade = pred.grade;
  rec.dr_positive = is_positive(pred.grade);
  rec.dr_score = model::dr_score(pred.probabilities);
  rec.model_version = model_->version;
  rec.crop = crop;
  if (config_.retain_images) {
    const auto dir = config_.store_path.parent_path() / "images";
    std::filesystem::create_directories(dir);
    const auto file = dir / (rec.screening_id + ".bin");
    write_file_bytes(file, image_bytes);
    rec.image_file = file.string();
  }
  store_.insert(rec);
  return rec;
}

ScreeningRecord ScreeningService::get(const std::string& id) const {
  if (auto r = store_.find(id)) return *r;
  throw NotFoundError("no screening with id '" + id + "'");
}

Page ScreeningService::list(const std::optional<std::string>& patient_code, std::size_t page,
                            std::size_t page_size) const {
  return store_.list(patient_code, page, page_size);
}

ScreeningRecord ScreeningService::record_decision(const std::string& id, Decision decision) {
  return store_.set_decision(id, decision);
}

Summary ScreeningService::summary(const std::optional<std::string>& patient_code) const {
  Summary s;
  std::set<std::string> patients;
  for (const auto& r : store_.all()) {
    if (patient_code && r.patient_code != *patient_code) continue;
    ++s.total_screenings;
    patients.insert(r.patient_code);
    ++s.per_grade[r.grade.index()];
    s.dr_positive += r.dr_positive;
    if (!r.technician_decision) ++s.undecided;
    else if (*r.technician_decision == Decision::kRefer) ++s.refer;
    else ++s.monitor;
  }
  s.total_patients = patients.size();
  if (s.total_screenings > 0) {
    s.dr_positive_rate = 100.0 * static_cast<double>(s.dr_positive) / static_cast<double>(s.total_screenings);
  }
  return s;
}

nlohmann::json ScreeningService::health() const {
  const double uptime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return {{"status", model_ ? "ok" : "unavailable"},
          {"model_version", model_version()},
          {"uptime_seconds", uptime},
          {"records", store_.size()}};
}

}  // namespace drscreen::service
