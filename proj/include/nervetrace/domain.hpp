#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "errors.hpp"

namespace nervetrace {

enum class Plexus { scbp, isc, none };
enum class Side { left, right };
enum class Gain { low, medium, high };
enum class Sex { male, female };
enum class FrameStatus { positive, negative, discarded };
enum class Provenance { seed, tracked_approved, manual };

namespace detail {

template <typename E, std::size_t N>
using NameTable = std::array<std::pair<E, std::string_view>, N>;

template <typename E, std::size_t N>
std::string_view enum_name(const NameTable<E, N>& table, E value) {
  for (const auto& [e, name] : table)
    if (e == value) return name;
  return "?";
}

template <typename E, std::size_t N>
std::optional<E> enum_parse(const NameTable<E, N>& table, std::string_view s) {
  for (const auto& [e, name] : table)
    if (name == s) return e;
  return std::nullopt;
}

inline constexpr NameTable<Plexus, 3> kPlexusNames{{{Plexus::scbp, "scbp"}, {Plexus::isc, "isc"}, {Plexus::none, "none"}}};
inline constexpr NameTable<Side, 2> kSideNames{{{Side::left, "left"}, {Side::right, "right"}}};
inline constexpr NameTable<Gain, 3> kGainNames{{{Gain::low, "low"}, {Gain::medium, "medium"}, {Gain::high, "high"}}};
inline constexpr NameTable<Sex, 2> kSexNames{{{Sex::male, "male"}, {Sex::female, "female"}}};
inline constexpr NameTable<FrameStatus, 3> kStatusNames{
    {{FrameStatus::positive, "positive"}, {FrameStatus::negative, "negative"}, {FrameStatus::discarded, "discarded"}}};
inline constexpr NameTable<Provenance, 3> kProvenanceNames{
    {{Provenance::seed, "seed"}, {Provenance::tracked_approved, "tracked_approved"}, {Provenance::manual, "manual"}}};

}  // namespace detail

inline std::string_view to_string(Plexus v) { return detail::enum_name(detail::kPlexusNames, v); }
inline std::string_view to_string(Side v) { return detail::enum_name(detail::kSideNames, v); }
inline std::string_view to_string(Gain v) { return detail::enum_name(detail::kGainNames, v); }
inline std::string_view to_string(Sex v) { return detail::enum_name(detail::kSexNames, v); }
inline std::string_view to_string(FrameStatus v) { return detail::enum_name(detail::kStatusNames, v); }
inline std::string_view to_string(Provenance v) { return detail::enum_name(detail::kProvenanceNames, v); }

template <typename E>
E parse_enum(std::string_view s);

#define NERVETRACE_PARSE_ENUM(Type, Table)                                               \
  template <>                                                                           \
  inline Type parse_enum<Type>(std::string_view s) {                                    \
    if (auto v = detail::enum_parse(detail::Table, s)) return *v;                       \
    throw FormatError("invalid " #Type " value '" + std::string(s) + "'");              \
  }

NERVETRACE_PARSE_ENUM(Plexus, kPlexusNames)
NERVETRACE_PARSE_ENUM(Side, kSideNames)
NERVETRACE_PARSE_ENUM(Gain, kGainNames)
NERVETRACE_PARSE_ENUM(Sex, kSexNames)
NERVETRACE_PARSE_ENUM(FrameStatus, kStatusNames)
NERVETRACE_PARSE_ENUM(Provenance, kProvenanceNames)

#undef NERVETRACE_PARSE_ENUM

}  // namespace nervetrace
