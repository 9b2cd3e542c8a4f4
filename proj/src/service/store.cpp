#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <mutex>
#include <set>

#include <fmt/format.h>

#include "drscreen/error.hpp"
#include "drscreen/service.hpp"

namespace drscreen::service {

std::string_view decision_name(Decision d) noexcept { return d == Decision::kRefer ? "refer" : "monitor"; }

Decision parse_decision(std::string_view s) {
  if (s == "refer") return Decision::kRefer;
  if (s == "monitor") return Decision::kMonitor;
  throw ClientError("decision must be \"refer\" or \"monitor\"");
}

std::string rfc3339_utc(std::chrono::system_clock::time_point t) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900, tm.tm_mon + 1,
                     tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, ms % 1000);
}

void to_json(nlohmann::json& j, const ScreeningRecord& r) {
  j = nlohmann::json{
      {"screening_id", r.screening_id},
      {"patient_code", r.patient_code},
      {"eye", r.eye ? nlohmann::json(std::string(datasets::eye_name(*r.eye))) : nlohmann::json(nullptr)},
      {"created_at", r.created_at},
      {"probabilities", r.probabilities},
      {"grade", r.grade.value()},
      {"stage_name", std::string(stage_name(r.grade))},
      {"dr_positive", r.dr_positive},
      {"dr_score", r.dr_score},
      {"model_version", r.model_version},
      {"crop", r.crop ? nlohmann::json{{"x", r.crop->x}, {"y", r.crop->y}, {"side", r.crop->side}}
                      : nlohmann::json(nullptr)},
      {"technician_decision", r.technician_decision
                                  ? nlohmann::json(std::string(decision_name(*r.technician_decision)))
                                  : nlohmann::json(nullptr)},
  };
  if (!r.image_file.empty()) j["image_file"] = r.image_file;
}

void from_json(const nlohmann::json& j, ScreeningRecord& r) {
  try {
    r = ScreeningRecord{};
    r.screening_id = j.at("screening_id").get<std::string>();
    r.patient_code = j.at("patient_code").get<std::string>();
    if (const auto& e = j.at("eye"); !e.is_null()) {
      r.eye = e.get<std::string>() == "left" ? Eye::kLeft : Eye::kRight;
    }
    r.created_at = j.at("created_at").get<std::string>();
    r.probabilities = j.at("probabilities").get<std::array<double, Grade::kCount>>();
    r.grade = Grade(j.at("grade").get<int>());
    r.dr_positive = j.at("dr_positive").get<bool>();
    r.dr_score = j.at("dr_score").get<double>();
    r.model_version = j.at("model_version").get<std::string>();
    if (const auto& c = j.at("crop"); !c.is_null()) {
      r.crop = CropRect{c.at("x").get<int>(), c.at("y").get<int>(), c.at("side").get<int>()};
    }
    if (const auto& d = j.at("technician_decision"); !d.is_null()) {
      r.technician_decision = parse_decision(d.get<std::string>());
    }
    r.image_file = j.value("image_file", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed screening record: ") + e.what());
  } catch (const Error& e) {
    throw FormatError(std::string("malformed screening record: ") + e.what());
  }
}

RecordStore::RecordStore(std::filesystem::path log_path) : path_(std::move(log_path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ifstream in(path_, std::ios::binary);
  if (!in) return;
  std::vector<std::string> lines;
  std::vector<std::uintmax_t> starts;
  std::uintmax_t offset = 0;
  for (std::string line; std::getline(in, line);) {
    starts.push_back(offset);
    offset += line.size() + 1;
    lines.push_back(std::move(line));
  }
  in.close();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      apply(nlohmann::json::parse(lines[i]));
    } catch (const std::exception& e) {
      if (i + 1 == lines.size()) {
        // A crash mid-append leaves at most one partial line; drop it so the
        // next append starts clean.
        std::filesystem::resize_file(path_, starts[i]);
        break;
      }
      throw FormatError(fmt::format("{}: line {} is corrupt: {}", path_.string(), i + 1, e.what()));
    }
  }
}

void RecordStore::apply(const nlohmann::json& event) {
  const auto kind = event.at("event").get<std::string>();
  if (kind == "screening") {
    auto rec = event.at("record").get<ScreeningRecord>();
    if (index_.contains(rec.screening_id)) throw FormatError("duplicate screening id " + rec.screening_id);
    index_.emplace(rec.screening_id, records_.size());
    records_.push_back(std::move(rec));
  } else if (kind == "decision") {
    const auto id = event.at("screening_id").get<std::string>();
    const auto it = index_.find(id);
    if (it == index_.end()) throw FormatError("decision for unknown screening " + id);
    records_[it->second].technician_decision = parse_decision(event.at("decision").get<std::string>());
  } else {
    throw FormatError("unknown event kind '" + kind + "'");
  }
}

void RecordStore::append_line(const nlohmann::json& event) {
  const std::string line = event.dump() + "\n";
  std::FILE* f = std::fopen(path_.c_str(), "ab");
  if (!f) throw IoError("cannot open record store " + path_.string());
  const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0 &&
                  ::fsync(fileno(f)) == 0;
  std::fclose(f);
  if (!ok) throw IoError("failed to append to record store " + path_.string());
}

void RecordStore::insert(const ScreeningRecord& record) {
  std::unique_lock lock(mu_);
  if (index_.contains(record.screening_id)) throw UniquenessError("screening id already stored");
  append_line({{"event", "screening"}, {"record", record}});
  index_.emplace(record.screening_id, records_.size());
  records_.push_back(record);
}

ScreeningRecord RecordStore::set_decision(const std::string& id, Decision decision) {
  std::unique_lock lock(mu_);
  const auto it = index_.find(id);
  if (it == index_.end()) throw NotFoundError("no screening with id '" + id + "'");
  append_line({{"event", "decision"},
               {"screening_id", id},
               {"decision", std::string(decision_name(decision))},
               {"at", rfc3339_utc(std::chrono::system_clock::now())}});
  records_[it->second].technician_decision = decision;
  return records_[it->second];
}

std::optional<ScreeningRecord> RecordStore::find(const std::string& id) const {
  std::shared_lock lock(mu_);
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return records_[it->second];
}

bool RecordStore::contains(const std::string& id) const {
  std::shared_lock lock(mu_);
  return index_.contains(id);
}

Page RecordStore::list(const std::optional<std::string>& patient_code, std::size_t page,
                       std::size_t page_size) const {
  if (page < 1 || page_size < 1) throw ClientError("page and page_size must be at least 1");
  std::shared_lock lock(mu_);
  Page out;
  out.page = page;
  out.page_size = page_size;
  const std::size_t skip = (page - 1) * page_size;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (patient_code && it->patient_code != *patient_code) continue;
    if (out.total >= skip && out.items.size() < page_size) out.items.push_back(*it);
    ++out.total;
  }
  return out;
}

std::vector<ScreeningRecord> RecordStore::all() const {
  std::shared_lock lock(mu_);
  return records_;
}

std::size_t RecordStore::size() const {
  std::shared_lock lock(mu_);
  return records_.size();
}

nlohmann::json to_json(const Summary& s) {
  return {{"total_screenings", s.total_screenings},
          {"total_patients", s.total_patients},
          {"per_grade", s.per_grade},
          {"dr_positive", s.dr_positive},
          {"dr_positive_rate", s.dr_positive_rate},
          {"decisions", {{"refer", s.refer}, {"monitor", s.monitor}, {"none", s.undecided}}}};
}

}  // namespace drscreen::service
