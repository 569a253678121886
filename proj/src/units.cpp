#include "qkd/units.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <utility>
#include <vector>

namespace qkd::units {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Splits "15.35 ns" / "15.35ns" into the numeric part and the suffix.
std::pair<double, std::string> split_number(std::string_view text) {
  text = trim(text);
  if (text.empty()) throw std::invalid_argument("empty numeric value");
  std::string owned(text);
  char* end = nullptr;
  double value = std::strtod(owned.c_str(), &end);
  if (end == owned.c_str()) throw std::invalid_argument("not a number: '" + owned + "'");
  std::string suffix(trim(std::string_view(end)));
  return {value, suffix};
}

double apply_scale(double value, const std::string& suffix,
                   const std::vector<std::pair<std::string, double>>& table,
                   const char* kind) {
  if (suffix.empty()) return value;
  for (const auto& [name, scale] : table)
    if (suffix == name) return value * scale;
  throw std::invalid_argument(std::string("unknown ") + kind + " suffix '" + suffix + "'");
}

}  // namespace

double parse_time(std::string_view text) {
  auto [value, suffix] = split_number(text);
  return apply_scale(value, suffix,
                     {{"s", 1.0}, {"ms", 1e-3}, {"us", 1e-6}, {"ns", 1e-9}}, "time");
}

double parse_frequency(std::string_view text) {
  auto [value, suffix] = split_number(text);
  return apply_scale(value, suffix,
                     {{"Hz", 1.0}, {"kHz", 1e3}, {"MHz", 1e6}, {"GHz", 1e9}}, "frequency");
}

double parse_attenuation(std::string_view text) {
  auto [value, suffix] = split_number(text);
  return apply_scale(value, suffix, {{"dB/km", 1.0}}, "attenuation");
}

double parse_distance_km(std::string_view text) {
  auto [value, suffix] = split_number(text);
  return apply_scale(value, suffix, {{"km", 1.0}, {"m", 1e-3}}, "distance");
}

double parse_plain(std::string_view text) {
  auto [value, suffix] = split_number(text);
  if (!suffix.empty())
    throw std::invalid_argument("unexpected suffix '" + suffix + "'");
  return value;
}

std::string format_sig(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, value);
  return buf;
}

}  // namespace qkd::units
