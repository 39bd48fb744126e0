#pragma once
// Run reports: per-step and per-epoch curves plus cost counters, written as
// CSV rows and a JSON sidecar.

#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glue/nn.hpp"

namespace glue {

struct StepRecord {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double train_loss = 0.0;
  std::vector<double> alpha;
  PassCounters counters;
  double wall_ms = 0.0;
};

struct EpochRecord {
  std::uint64_t epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  PassCounters counters;
  double wall_ms = 0.0;
};

struct RunReport {
  std::string phase;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  PassCounters counters;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, double> phase_wall_ms;
  std::vector<std::string> flags;
  bool complete = true;
};

inline nlohmann::json to_json(const PassCounters& c) {
  return {{"forwards", c.forwards},
          {"backwards", c.backwards},
          {"blends", c.blends},
          {"inner_products", c.inner_products}};
}

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"step", s.step},
                     {"epoch", s.epoch},
                     {"train_loss", s.train_loss},
                     {"alpha", s.alpha},
                     {"counters", to_json(s.counters)},
                     {"wall_ms", s.wall_ms}});
  }
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"test_accuracy", e.test_accuracy},
                      {"test_loss", e.test_loss},
                      {"counters", to_json(e.counters)},
                      {"wall_ms", e.wall_ms}});
  }
  return {{"phase", r.phase},         {"steps", std::move(steps)},
          {"epochs", std::move(epochs)}, {"counters", to_json(r.counters)},
          {"config", r.config},       {"phase_wall_ms", r.phase_wall_ms},
          {"flags", r.flags},         {"complete", r.complete}};
}

inline constexpr const char* kCurveCsvHeader =
    "config_id,seed,phase,epoch,step,train_loss,test_accuracy,forwards,backwards,blends,wall_ms";

namespace detail {
inline std::string csv_number(double v) {
  if (!std::isfinite(v)) return "";
  nlohmann::json j = v;
  return j.dump();
}
}  // namespace detail

/// Appends one row per step and one row per epoch. Steps leave test_accuracy
/// blank, epochs leave step blank.
inline void write_curve_rows(std::ostream& os, int config_id, std::uint64_t seed,
                             const RunReport& report) {
  for (const auto& s : report.steps) {
    os << config_id << ',' << seed << ',' << report.phase << ',' << s.epoch << ',' << s.step << ','
       << detail::csv_number(s.train_loss) << ",," << s.counters.forwards << ','
       << s.counters.backwards << ',' << s.counters.blends << ','
       << detail::csv_number(s.wall_ms) << '\n';
  }
  for (const auto& e : report.epochs) {
    os << config_id << ',' << seed << ',' << report.phase << ',' << e.epoch << ",,"
       << detail::csv_number(e.train_loss) << ',' << detail::csv_number(e.test_accuracy) << ','
       << e.counters.forwards << ',' << e.counters.backwards << ',' << e.counters.blends << ','
       << detail::csv_number(e.wall_ms) << '\n';
  }
}

}  // namespace glue
