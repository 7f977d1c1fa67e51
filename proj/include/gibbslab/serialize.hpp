#pragma once

#include <filesystem>
#include <string>

#include "gibbslab/dynamics.hpp"
#include "gibbslab/gibbs.hpp"

namespace gibbslab {

// Structured-text model files; field names are fixed in docs/formats.md.
Potential potential_from_text(const std::string& json_text);
std::string potential_to_text(const Potential& pot);
Potential load_potential(const std::filesystem::path& path);
void save_potential(const Potential& pot, const std::filesystem::path& path);

RateFamily rate_family_from_text(const std::string& json_text);
std::string rate_family_to_text(const RateFamily& rates);
RateFamily load_rate_family(const std::filesystem::path& path);
void save_rate_family(const RateFamily& rates, const std::filesystem::path& path);

// 17 significant digits, round-trip safe
std::string format_g17(double v);

}  // namespace gibbslab
