#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "playereval/cli.hpp"
#include "playereval/stats.hpp"

namespace playereval {

namespace {

struct KickerProfile {
  const char* name;
  int attempts;
  double skill;        // logit shift at 35 yards
  double range;        // mean kick distance
  double outdoor;      // share of outdoor attempts
  const char* surface; // home surface
};

constexpr KickerProfile kProfiles[] = {
    {"Abbott", 420, 2.55, 37.0, 0.80, "grass"},  {"Barlow", 380, 2.35, 36.0, 0.25, "turf"},
    {"Castell", 350, 2.70, 40.0, 0.70, "grass"}, {"Dunmore", 330, 2.10, 34.0, 0.90, "grass"},
    {"Ellery", 300, 2.45, 38.5, 0.40, "turf"},   {"Fairley", 260, 2.20, 35.5, 0.60, "hybrid"},
    {"Garnet", 240, 2.60, 39.0, 0.85, "grass"},  {"Hollis", 210, 1.95, 33.5, 0.50, "turf"},
    {"Iverson", 60, 2.00, 35.0, 0.70, "grass"},  {"Jessop", 25, 1.80, 34.0, 0.60, "turf"},
};

double normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace

std::string synthesize_kicker_csv(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> lines;
  for (const auto& k : kProfiles) {
    for (int t = 0; t < k.attempts; ++t) {
      const bool outdoor = uniform01(rng) < k.outdoor;
      const double distance = std::clamp(std::round(k.range + 9.0 * normal(rng)), 18.0, 64.0);
      const double wind = outdoor ? std::round(std::abs(7.0 * normal(rng)) * 10.0) / 10.0 : 0.0;
      const double temperature = outdoor ? std::round(58.0 + 16.0 * normal(rng)) : 70.0;
      std::string surface = k.surface;
      const double away = uniform01(rng);
      if (away < 0.15) surface = "grass";
      else if (away < 0.25) surface = "turf";
      else if (away < 0.28) surface = "hybrid";
      const double eta = k.skill - 0.105 * (distance - 35.0) - 0.04 * wind -
                         0.0015 * (distance - 35.0) * wind + 0.006 * (temperature - 60.0) +
                         (surface == "turf" ? 0.15 : 0.0);
      const int made = uniform01(rng) < expit(eta) ? 1 : 0;
      const bool lost_distance = uniform01(rng) < 0.004;
      std::string line = std::string(k.name) + "," + std::to_string(made) + ",";
      line += lost_distance ? "NA" : fmt("%.0f", distance);
      line += std::string(",") + (outdoor ? "1" : "0") + ",";
      line += outdoor ? fmt("%.1f", wind) : "";
      line += "," + fmt("%.0f", temperature) + "," + surface;
      lines.push_back(std::move(line));
    }
  }
  portable_shuffle(lines, rng);
  std::string out = "kicker,made,distance,outdoor,wind,temperature,surface\n";
  for (const auto& l : lines) out += l + "\n";
  return out;
}

}  // namespace playereval
