// Label enums shared by the corpus, model and metrics layers, plus the
// error types thrown across the library.
#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mhch {

/// Input rejected before any work is done (bad config, bad file, bad shape).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corpus or checkpoint file could not be parsed. Carries the 1-based line.
class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// NaN/Inf showed up in a loss or a parameter.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Role : std::uint8_t { user, agent };
enum class Sentiment : std::uint8_t { positive, neutral, negative };
enum class Handoff : std::uint8_t { normal, transferable };
enum class Satisfaction : std::uint8_t { satisfactory, neutral, dissatisfied };

inline constexpr std::size_t kNumSentiments = 3;
inline constexpr std::size_t kNumHandoff = 2;
inline constexpr std::size_t kNumSatisfaction = 3;

namespace detail {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::string_view, N>& names,
             std::string_view what) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == s) return static_cast<E>(i);
  throw ValidationError("unknown " + std::string(what) + " value \"" + std::string(s) + "\"");
}

inline constexpr std::array<std::string_view, 2> kRoleNames{"user", "agent"};
inline constexpr std::array<std::string_view, 3> kSentimentNames{"positive", "neutral", "negative"};
inline constexpr std::array<std::string_view, 2> kHandoffNames{"normal", "transferable"};
inline constexpr std::array<std::string_view, 3> kSatisfactionNames{"satisfactory", "neutral",
                                                                    "dissatisfied"};

}  // namespace detail

inline std::string_view to_string(Role r) { return detail::kRoleNames[static_cast<int>(r)]; }
inline std::string_view to_string(Sentiment s) {
  return detail::kSentimentNames[static_cast<int>(s)];
}
inline std::string_view to_string(Handoff h) { return detail::kHandoffNames[static_cast<int>(h)]; }
inline std::string_view to_string(Satisfaction s) {
  return detail::kSatisfactionNames[static_cast<int>(s)];
}

inline Role parse_role(std::string_view s) {
  return detail::parse_enum<Role>(s, detail::kRoleNames, "role");
}
inline Sentiment parse_sentiment(std::string_view s) {
  return detail::parse_enum<Sentiment>(s, detail::kSentimentNames, "sentiment");
}
inline Handoff parse_handoff(std::string_view s) {
  return detail::parse_enum<Handoff>(s, detail::kHandoffNames, "handoff");
}
inline Satisfaction parse_satisfaction(std::string_view s) {
  return detail::parse_enum<Satisfaction>(s, detail::kSatisfactionNames, "satisfaction");
}

}  // namespace mhch
