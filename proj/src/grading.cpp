#include "drscreen/grading.hpp"

#include <string>

#include "drscreen/error.hpp"

namespace drscreen {

void detail::throw_invalid_grade(int value) {
  throw RangeError("grade " + std::to_string(value) + " is outside the ICDR scale 0-4");
}

std::string_view stage_name(Grade g) noexcept {
  static constexpr std::array<std::string_view, Grade::kCount> kNames = {
      "No Apparent DR",
      "Mild Nonproliferative DR",
      "Moderate Nonproliferative DR",
      "Severe Nonproliferative DR",
      "Proliferative DR",
  };
  return kNames[g.index()];
}

std::string_view binary_label_name(BinaryLabel label) noexcept {
  return label == BinaryLabel::kPositive ? "DR-positive" : "DR-negative";
}

const std::array<Grade, Grade::kCount>& all_grades() noexcept {
  static const std::array<Grade, Grade::kCount> kGrades = {Grade(0), Grade(1), Grade(2), Grade(3),
                                                           Grade(4)};
  return kGrades;
}

}  // namespace drscreen
