#pragma once

#include <string>
#include <string_view>

namespace qkd::units {

/// Parse a number with an optional time suffix (ns, us, ms, s) into seconds.
/// A bare number is taken as seconds.
double parse_time(std::string_view text);

/// Parse a number with an optional frequency suffix (Hz, kHz, MHz, GHz) into Hz.
double parse_frequency(std::string_view text);

/// Parse a number with an optional "dB/km" suffix.
double parse_attenuation(std::string_view text);

/// Parse a number with an optional distance suffix (m, km) into km.
double parse_distance_km(std::string_view text);

/// Parse a plain number; any trailing suffix is an error.
double parse_plain(std::string_view text);

/// Format with a fixed number of significant digits ("%.*g").
std::string format_sig(double value, int digits = 12);

}  // namespace qkd::units
