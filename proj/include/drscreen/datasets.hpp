#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "drscreen/grading.hpp"
#include "drscreen/imaging.hpp"
#include "drscreen/trainer.hpp"

namespace drscreen::datasets {

// Minimal RFC 4180 CSV: header row required, quoted fields may hold commas,
// quotes ("") and newlines. A UTF-8 BOM and trailing CR are tolerated.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find_column(std::string_view name) const;
  /// Throws FormatError naming the missing column.
  std::size_t column(std::string_view name) const;
};

/// Throws FormatError on an unterminated quote, a missing header or a row
/// whose width differs from the header.
CsvTable parse_csv(std::string_view text);
std::string write_csv(const CsvTable& table);
CsvTable read_csv_file(const std::filesystem::path& path);

/// First existing file among `id` itself (if it carries an extension) and
/// id + .png/.jpg/.jpeg in either case.
std::optional<std::filesystem::path> find_image(const std::filesystem::path& image_dir,
                                                const std::string& id);

struct LoadOptions {
  /// true: the first missing image throws DataError. false: rows with missing
  /// images are dropped and listed in `missing`.
  bool fail_fast = true;
  /// false: skip image lookup entirely (image_path stays empty), for
  /// workflows that only need labels.
  bool require_images = true;
};

struct TrainingRecord {
  std::string image_id;
  std::filesystem::path image_path;
  Grade diagnosis{0};
  friend bool operator==(const TrainingRecord&, const TrainingRecord&) = default;
};

struct DatasetSummary {
  std::size_t total = 0;
  std::size_t train = 0;
  std::size_t test = 0;
  std::array<std::size_t, Grade::kCount> histogram{};
};

DatasetSummary summarize(std::span<const TrainingRecord> records);

struct MissingImage {
  std::size_t row = 0;  // 1-based data row
  std::string image_id;
};

struct TrainingManifest {
  std::vector<TrainingRecord> records;
  DatasetSummary summary;
  std::vector<MissingImage> missing;
};

/// Columns id_code,diagnosis. Throws FormatError for a missing column,
/// RangeError naming the row for a grade outside 0..4.
TrainingManifest load_training_manifest(const std::filesystem::path& csv_path,
                                        const std::filesystem::path& image_dir,
                                        const LoadOptions& opts = {});
TrainingManifest parse_training_manifest(std::string_view csv_text,
                                         const std::filesystem::path& image_dir,
                                         const LoadOptions& opts = {});
std::string write_training_manifest(std::span<const TrainingRecord> records);

enum class Eye { kLeft, kRight };
std::string_view eye_name(Eye e) noexcept;

struct ValidationRecord {
  std::string image_id;
  std::filesystem::path image_path;
  Grade specialist_grade{0};
  int confidence = 1;  // 1..5
  std::string patient_code;
  std::optional<Eye> eye;
  std::optional<CropRect> crop;
  std::string timeframe;
  friend bool operator==(const ValidationRecord&, const ValidationRecord&) = default;
};

struct ValidationManifest {
  std::vector<ValidationRecord> records;
  std::size_t n_patients = 0;
  std::vector<MissingImage> missing;
};

/// Columns image_id,patient_code,grade,confidence; optional eye,
/// crop_x,crop_y,crop_side (all three or none), timeframe. Throws
/// RangeError for a bad grade/confidence/crop, UniquenessError for a repeated
/// image_id, FormatError for missing columns or unparsable fields.
ValidationManifest load_validation_manifest(const std::filesystem::path& csv_path,
                                            const std::filesystem::path& image_dir,
                                            const LoadOptions& opts = {});
ValidationManifest parse_validation_manifest(std::string_view csv_text,
                                             const std::filesystem::path& image_dir,
                                             const LoadOptions& opts = {});
std::string write_validation_manifest(std::span<const ValidationRecord> records);

std::size_t count_patients(std::span<const ValidationRecord> records);

struct VerificationIssue {
  std::string image_id;
  std::string path;
  std::string kind;  // "unreadable", "crop"
  std::string message;
};

struct VerificationReport {
  std::size_t checked = 0;
  std::array<std::size_t, Grade::kCount> histogram{};
  std::vector<VerificationIssue> issues;
  std::vector<std::string> warnings;  // e.g. images smaller than the input side
  std::vector<std::string> notes;     // e.g. an absent stage

  bool ok() const noexcept { return issues.empty(); }
};

/// Decodes every image. Never throws for bad data; everything is reported.
VerificationReport verify_dataset(std::span<const TrainingRecord> records);
VerificationReport verify_dataset(std::span<const ValidationRecord> records);

nlohmann::json to_json(const VerificationReport& report);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded random partition of 0..n-1; round(n * test_fraction) indices go
/// to test (at least one each when n >= 2). Both halves are sorted.
/// Throws DataError for n < 2, ConfigError for a fraction outside (0,1).
Split holdout_split(std::size_t n, double test_fraction, std::uint64_t seed);

/// Lazily decodes and preprocesses training images (centered square crop).
class TrainingSource final : public train::SampleSource {
 public:
  TrainingSource(std::vector<TrainingRecord> records, int side = kInputSide);
  std::size_t size() const override { return records_.size(); }
  ImageTensor image(std::size_t index) const override;
  Grade label(std::size_t index) const override { return records_.at(index).diagnosis; }

 private:
  std::vector<TrainingRecord> records_;
  int side_;
};

/// Validation images use their manual crop when present; never augmented.
class ValidationSource final : public train::SampleSource {
 public:
  ValidationSource(std::vector<ValidationRecord> records, int side = kInputSide);
  std::size_t size() const override { return records_.size(); }
  ImageTensor image(std::size_t index) const override;
  Grade label(std::size_t index) const override { return records_.at(index).specialist_grade; }

 private:
  std::vector<ValidationRecord> records_;
  int side_;
};

}  // namespace drscreen::datasets
