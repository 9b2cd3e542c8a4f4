#include "drscreen/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "drscreen/error.hpp"
#include "drscreen/random.hpp"

namespace drscreen::datasets {
namespace fs = std::filesystem;

std::optional<std::size_t> CsvTable::find_column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return std::nullopt;
  return static_cast<std::size_t>(it - header.begin());
}

std::size_t CsvTable::column(std::string_view name) const {
  if (auto c = find_column(name)) return *c;
  throw FormatError("manifest is missing required column '" + std::string(name) + "'");
}

CsvTable parse_csv(std::string_view text) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  std::vector<std::vector<std::string>> lines;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool row_has_content = false;
  std::size_t line_no = 1;

  const auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
  };
  const auto end_row = [&] {
    end_field();
    if (row_has_content || row.size() > 1 || !row.front().empty()) lines.push_back(std::move(row));
    row.clear();
    row_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line_no;
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        quoted = true;
        row_has_content = true;
        break;
      case ',':
        end_field();
        row_has_content = true;
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;
        field.push_back(ch);
        break;
      case '\n':
        end_row();
        ++line_no;
        break;
      default:
        field.push_back(ch);
    }
  }
  if (quoted) throw FormatError(fmt::format("unterminated quoted field at line {}", line_no));
  if (!field.empty() || !row.empty() || row_has_content) end_row();
  if (lines.empty()) throw FormatError("CSV has no header row");

  CsvTable table;
  table.header = std::move(lines.front());
  for (auto& h : table.header) {
    while (!h.empty() && (h.back() == ' ' || h.back() == '\t')) h.pop_back();
    while (!h.empty() && (h.front() == ' ' || h.front() == '\t')) h.erase(h.begin());
  }
  for (std::size_t r = 1; r < lines.size(); ++r) {
    if (lines[r].size() != table.header.size()) {
      throw FormatError(fmt::format("row {} has {} fields, header has {}", r, lines[r].size(),
                                    table.header.size()));
    }
    table.rows.push_back(std::move(lines[r]));
  }
  return table;
}

namespace {

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

/// Strict base-10 integer: the whole field, optional surrounding blanks.
std::optional<long long> parse_int(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

long long require_int(std::string_view s, std::string_view column, std::size_t row) {
  const auto v = parse_int(s);
  if (!v) {
    throw FormatError(fmt::format("row {}: {} '{}' is not an integer", row, column, s));
  }
  return *v;
}

Grade parse_grade(std::string_view s, std::string_view column, std::size_t row) {
  const long long v = require_int(s, column, row);
  if (v < 0 || v >= Grade::kCount) {
    throw RangeError(fmt::format("row {}: {} {} is outside the ICDR scale 0-4", row, column, v));
  }
  return Grade(static_cast<int>(v));
}

}  // namespace

std::string write_csv(const CsvTable& table) {
  std::string out;
  const auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += quote_csv(cells[i]);
    }
    out += '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  return out;
}

CsvTable read_csv_file(const fs::path& path) { return parse_csv(read_text(path)); }

std::optional<fs::path> find_image(const fs::path& image_dir, const std::string& id) {
  std::error_code ec;
  const fs::path as_is = image_dir / id;
  if (fs::path(id).has_extension() && fs::is_regular_file(as_is, ec)) return as_is;
  for (const char* ext : {".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG"}) {
    fs::path p = image_dir / (id + ext);
    if (fs::is_regular_file(p, ec)) return p;
  }
  return std::nullopt;
}

DatasetSummary summarize(std::span<const TrainingRecord> records) {
  DatasetSummary s;
  s.total = records.size();
  s.train = records.size();
  for (const auto& r : records) ++s.histogram[r.diagnosis.index()];
  return s;
}

namespace {

template <class Manifest>
bool resolve_image(const fs::path& image_dir, const std::string& id, std::size_t row,
                   const LoadOptions& opts, Manifest& out, fs::path& path) {
  if (!opts.require_images) return true;
  if (auto p = find_image(image_dir, id)) {
    path = *p;
    return true;
  }
  if (opts.fail_fast) {
    throw DataError(fmt::format("row {}: no image for '{}' under {}", row, id, image_dir.string()));
  }
  out.missing.push_back({row, id});
  return false;
}

}  // namespace

TrainingManifest parse_training_manifest(std::string_view csv_text, const fs::path& image_dir,
                                         const LoadOptions& opts) {
  const CsvTable table = parse_csv(csv_text);
  const std::size_t c_id = table.column("id_code");
  const std::size_t c_dx = table.column("diagnosis");
  TrainingManifest out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    TrainingRecord rec{row[c_id], {}, parse_grade(row[c_dx], "diagnosis", r + 1)};
    if (rec.image_id.empty()) throw FormatError(fmt::format("row {}: empty id_code", r + 1));
    if (!resolve_image(image_dir, rec.image_id, r + 1, opts, out, rec.image_path)) continue;
    out.records.push_back(std::move(rec));
  }
  out.summary = summarize(out.records);
  return out;
}

TrainingManifest load_training_manifest(const fs::path& csv_path, const fs::path& image_dir,
                                        const LoadOptions& opts) {
  return parse_training_manifest(read_text(csv_path), image_dir, opts);
}

std::string write_training_manifest(std::span<const TrainingRecord> records) {
  CsvTable t{{"id_code", "diagnosis"}, {}};
  for (const auto& r : records) t.rows.push_back({r.image_id, std::to_string(r.diagnosis.value())});
  return write_csv(t);
}

std::string_view eye_name(Eye e) noexcept { return e == Eye::kLeft ? "left" : "right"; }

ValidationManifest parse_validation_manifest(std::string_view csv_text, const fs::path& image_dir,
                                             const LoadOptions& opts) {
  const CsvTable table = parse_csv(csv_text);
  const std::size_t c_id = table.column("image_id");
  const std::size_t c_patient = table.column("patient_code");
  const std::size_t c_grade = table.column("grade");
  const std::size_t c_conf = table.column("confidence");
  const auto c_eye = table.find_column("eye");
  const auto c_x = table.find_column("crop_x");
  const auto c_y = table.find_column("crop_y");
  const auto c_side = table.find_column("crop_side");
  const auto c_time = table.find_column("timeframe");
  if ((c_x || c_y || c_side) && !(c_x && c_y && c_side)) {
    throw FormatError("crop columns must appear together: crop_x, crop_y, crop_side");
  }

  ValidationManifest out;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t line = r + 1;
    ValidationRecord rec;
    rec.image_id = row[c_id];
    if (rec.image_id.empty()) throw FormatError(fmt::format("row {}: empty image_id", line));
    if (!seen.insert(rec.image_id).second) {
      throw UniquenessError(fmt::format("row {}: duplicate image_id '{}'", line, rec.image_id));
    }
    rec.patient_code = row[c_patient];
    if (rec.patient_code.empty()) throw FormatError(fmt::format("row {}: empty patient_code", line));
    rec.specialist_grade = parse_grade(row[c_grade], "grade", line);
    const long long conf = require_int(row[c_conf], "confidence", line);
    if (conf < 1 || conf > 5) {
      throw RangeError(fmt::format("row {}: confidence {} is outside 1-5", line, conf));
    }
    rec.confidence = static_cast<int>(conf);
    if (c_eye && !row[*c_eye].empty()) {
      std::string e = row[*c_eye];
      std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (e == "left" || e == "l") rec.eye = Eye::kLeft;
      else if (e == "right" || e == "r") rec.eye = Eye::kRight;
      else throw FormatError(fmt::format("row {}: eye '{}' must be left or right", line, row[*c_eye]));
    }
    if (c_x) {
      const bool any = !row[*c_x].empty() || !row[*c_y].empty() || !row[*c_side].empty();
      const bool all = !row[*c_x].empty() && !row[*c_y].empty() && !row[*c_side].empty();
      if (any && !all) throw FormatError(fmt::format("row {}: crop fields are partially filled", line));
      if (all) {
        const long long x = require_int(row[*c_x], "crop_x", line);
        const long long y = require_int(row[*c_y], "crop_y", line);
        const long long side = require_int(row[*c_side], "crop_side", line);
        if (x < 0 || y < 0 || side <= 0 || x > INT32_MAX || y > INT32_MAX || side > INT32_MAX) {
          throw RangeError(fmt::format("row {}: crop ({},{},{}) is not a valid rectangle", line, x, y, side));
        }
        rec.crop = CropRect{static_cast<int>(x), static_cast<int>(y), static_cast<int>(side)};
      }
    }
    if (c_time) rec.timeframe = row[*c_time];
    if (!resolve_image(image_dir, rec.image_id, line, opts, out, rec.image_path)) continue;
    out.records.push_back(std::move(rec));
  }
  out.n_patients = count_patients(out.records);
  return out;
}

ValidationManifest load_validation_manifest(const fs::path& csv_path, const fs::path& image_dir,
                                            const LoadOptions& opts) {
  return parse_validation_manifest(read_text(csv_path), image_dir, opts);
}

std::string write_validation_manifest(std::span<const ValidationRecord> records) {
  CsvTable t{{"image_id", "patient_code", "grade", "confidence", "eye", "crop_x", "crop_y",
              "crop_side", "timeframe"},
             {}};
  for (const auto& r : records) {
    t.rows.push_back({r.image_id, r.patient_code, std::to_string(r.specialist_grade.value()),
                      std::to_string(r.confidence), r.eye ? std::string(eye_name(*r.eye)) : "",
                      r.crop ? std::to_string(r.crop->x) : "", r.crop ? std::to_string(r.crop->y) : "",
                      r.crop ? std::to_string(r.crop->side) : "", r.timeframe});
  }
  return write_csv(t);
}

std::size_t count_patients(std::span<const ValidationRecord> records) {
  std::set<std::string_view> codes;
  for (const auto& r : records) codes.insert(r.patient_code);
  return codes.size();
}

namespace {

struct Probe {
  std::optional<ImageTensor> image;
  std::string error;
};

Probe probe(const fs::path& path) {
  try {
    return {decode_image(read_file_bytes(path)), {}};
  } catch (const std::exception& e) {
    return {std::nullopt, e.what()};
  }
}

void finish(VerificationReport& rep, std::string_view what) {
  for (const Grade g : all_grades()) {
    if (rep.histogram[g.index()] == 0) {
      rep.notes.push_back(fmt::format("no stage-{} ({}) {}; its classwise accuracy will be undefined",
                                      g.value(), stage_name(g), what));
    }
  }
}

void check_size(VerificationReport& rep, const std::string& id, const ImageTensor& img) {
  const int side = std::min(img.height(), img.width());
  if (side < kInputSide) {
    rep.warnings.push_back(fmt::format("{}: {}x{} is smaller than the {}-pixel input and will be upsampled",
                                       id, img.width(), img.height(), kInputSide));
  }
}

}  // namespace

VerificationReport verify_dataset(std::span<const TrainingRecord> records) {
  VerificationReport rep;
  for (const auto& r : records) {
    ++rep.checked;
    ++rep.histogram[r.diagnosis.index()];
    auto p = probe(r.image_path);
    if (!p.image) {
      rep.issues.push_back({r.image_id, r.image_path.string(), "unreadable", p.error});
      continue;
    }
    check_size(rep, r.image_id, *p.image);
  }
  finish(rep, "images in the set");
  return rep;
}

VerificationReport verify_dataset(std::span<const ValidationRecord> records) {
  VerificationReport rep;
  for (const auto& r : records) {
    ++rep.checked;
    ++rep.histogram[r.specialist_grade.index()];
    auto p = probe(r.image_path);
    if (!p.image) {
      rep.issues.push_back({r.image_id, r.image_path.string(), "unreadable", p.error});
      continue;
    }
    check_size(rep, r.image_id, *p.image);
    if (r.crop) {
      try {
        check_crop(*r.crop, p.image->height(), p.image->width());
      } catch (const std::exception& e) {
        rep.issues.push_back({r.image_id, r.image_path.string(), "crop", e.what()});
      }
    }
  }
  finish(rep, "images in the set");
  return rep;
}

nlohmann::json to_json(const VerificationReport& report) {
  nlohmann::json issues = nlohmann::json::array();
  for (const auto& i : report.issues) {
    issues.push_back({{"image_id", i.image_id}, {"path", i.path}, {"kind", i.kind}, {"message", i.message}});
  }
  return {{"checked", report.checked}, {"per_grade", report.histogram}, {"ok", report.ok()},
          {"issues", issues},          {"warnings", report.warnings},   {"notes", report.notes}};
}

Split holdout_split(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (n < 2) throw DataError("a holdout split needs at least two samples");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("holdout fraction must lie strictly between 0 and 1");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  Split s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

TrainingSource::TrainingSource(std::vector<TrainingRecord> records, int side)
    : records_(std::move(records)), side_(side) {}

ImageTensor TrainingSource::image(std::size_t index) const {
  return preprocess_for_inference(read_file_bytes(records_.at(index).image_path), std::nullopt, side_);
}

ValidationSource::ValidationSource(std::vector<ValidationRecord> records, int side)
    : records_(std::move(records)), side_(side) {}

ImageTensor ValidationSource::image(std::size_t index) const {
  const auto& r = records_.at(index);
  return preprocess_for_inference(read_file_bytes(r.image_path), r.crop, side_);
}

}  // namespace drscreen::datasets
