#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace drscreen {

namespace detail {
[[noreturn]] void throw_invalid_grade(int value);
}

/// A diabetic-retinopathy stage on the ICDR 5-point scale. Closed world:
/// only 0..4 can be constructed.
class Grade {
 public:
  static constexpr int kCount = 5;

  /// Throws RangeError for any value outside 0..4.
  constexpr explicit Grade(int value) : value_(value) {
    if (value < 0 || value >= kCount) detail::throw_invalid_grade(value);
  }

  constexpr int value() const noexcept { return value_; }
  constexpr std::size_t index() const noexcept { return static_cast<std::size_t>(value_); }

  friend bool operator==(Grade, Grade) = default;
  friend auto operator<=>(Grade, Grade) = default;

 private:
  int value_;
};

enum class BinaryLabel : std::uint8_t { kNegative, kPositive };

/// Grade 0 is DR-negative, grades 1..4 are DR-positive.
constexpr BinaryLabel to_binary(Grade g) noexcept {
  return g.value() == 0 ? BinaryLabel::kNegative : BinaryLabel::kPositive;
}

constexpr bool is_positive(Grade g) noexcept { return to_binary(g) == BinaryLabel::kPositive; }

constexpr int grade_distance(Grade a, Grade b) noexcept {
  return a.value() > b.value() ? a.value() - b.value() : b.value() - a.value();
}

std::string_view stage_name(Grade g) noexcept;

std::string_view binary_label_name(BinaryLabel label) noexcept;

/// All five grades in ascending order.
const std::array<Grade, Grade::kCount>& all_grades() noexcept;

}  // namespace drscreen
