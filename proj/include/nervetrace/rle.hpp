#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "image.hpp"

namespace nervetrace::rle {

// Row-major run lengths alternating background/foreground, starting with
// background (the first run may be zero).
struct RlePayload {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> runs;

  bool operator==(const RlePayload&) const = default;
};

inline RlePayload encode(const BinaryMask& mask) {
  RlePayload out{mask.width(), mask.height(), {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (std::uint8_t v : mask.bits()) {
    if (v != current) {
      out.runs.push_back(run);
      run = 0;
      current = v;
    }
    ++run;
  }
  out.runs.push_back(run);
  return out;
}

inline BinaryMask decode(const RlePayload& p) {
  if (p.width < 0 || p.height < 0) throw FormatError("rle: negative dimensions");
  BinaryMask mask(p.width, p.height);
  const std::size_t total = mask.pixel_count();
  std::size_t pos = 0;
  bool value = false;
  auto bits = mask.bits();
  for (std::uint32_t run : p.runs) {
    if (pos + run > total) throw FormatError("rle: runs exceed width*height");
    if (value) std::fill_n(bits.begin() + static_cast<std::ptrdiff_t>(pos), run, std::uint8_t{1});
    pos += run;
    value = !value;
  }
  if (pos != total) throw FormatError("rle: runs sum to " + std::to_string(pos) + ", expected " + std::to_string(total));
  return mask;
}

inline void to_json(nlohmann::json& j, const RlePayload& p) {
  j = nlohmann::json{{"width", p.width}, {"height", p.height}, {"runs", p.runs}};
}

inline void from_json(const nlohmann::json& j, RlePayload& p) {
  try {
    p.width = j.at("width").get<int>();
    p.height = j.at("height").get<int>();
    p.runs = j.at("runs").get<std::vector<std::uint32_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("rle: ") + e.what());
  }
}

}  // namespace nervetrace::rle
