#pragma once

// HighD-style track tables and leader-follower episode extraction.
//
// Column mapping (HighD tracks file -> canonical episode):
//   frame        -> t = frame / frame_rate
//   id           -> follower identity
//   precedingId  -> leader identity (0 = no leader)
//   x, width     -> front-bumper position x + width (bounding-box left edge plus length)
//   xVelocity    -> speed
//   width        -> leader_length of the leading vehicle
//   class        -> vehicle_class (optional, default car)
// Tracks are assumed longitudinally aligned and direction-normalized so that
// vehicles travel toward +x; the upstream lane/direction transform is not
// reproduced here.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "maidm/csv.hpp"
#include "maidm/episode.hpp"
#include "maidm/error.hpp"

namespace maidm {

struct TrackRow {
  long frame = 0;
  long id = 0;
  long preceding_id = 0;
  double x = 0.0;
  double x_velocity = 0.0;
  double width = 0.0;
  VehicleClass cls = VehicleClass::Car;
};

struct TrackTable {
  double frame_rate = 25.0;
  std::vector<TrackRow> rows;
};

inline TrackTable track_table_from_csv(const csv::Table& tab, double frame_rate = 25.0) {
  static const std::vector<std::string> required = {"frame", "id", "precedingId", "x", "xVelocity", "width"};
  std::string missing;
  for (const auto& name : required)
    if (tab.find(name) < 0) missing += (missing.empty() ? "" : ", ") + name;
  if (!missing.empty()) throw InvalidArgument(tab.source + ": track table missing fields: " + missing);
  if (!(frame_rate > 0.0)) throw InvalidArgument("track table: frame_rate must be > 0");
  const auto cf = tab.column("frame"), ci = tab.column("id"), cp = tab.column("precedingId"), cx = tab.column("x"),
             cv = tab.column("xVelocity"), cw = tab.column("width");
  const auto cc = tab.find("class");
  TrackTable out;
  out.frame_rate = frame_rate;
  out.rows.reserve(tab.rows.size());
  for (std::size_t r = 0; r < tab.rows.size(); ++r) {
    TrackRow row;
    row.frame = std::lround(tab.number(r, cf));
    row.id = std::lround(tab.number(r, ci));
    row.preceding_id = std::lround(tab.number(r, cp));
    row.x = tab.number(r, cx);
    row.x_velocity = tab.number(r, cv);
    row.width = tab.number(r, cw);
    if (cc >= 0) row.cls = vehicle_class_from_string(tab.rows[r][static_cast<std::size_t>(cc)]);
    out.rows.push_back(row);
  }
  return out;
}

inline TrackTable load_track_csv(const std::filesystem::path& path, double frame_rate = 25.0) {
  return track_table_from_csv(csv::read(path), frame_rate);
}

/// One episode per maximal interval of consecutive frames in which the
/// follower keeps the same leader and the gap stays positive. Intervals
/// shorter than min_duration are dropped; the duration rule is inclusive
/// (duration = (frames - 1) / frame_rate >= min_duration).
inline std::vector<Episode> extract_episodes(const TrackTable& tracks, double min_duration) {
  if (!(min_duration >= 0.0)) throw InvalidArgument("extract_episodes: min_duration must be >= 0");
  std::map<long, std::map<long, const TrackRow*>> by_vehicle;
  for (const auto& row : tracks.rows) by_vehicle[row.id][row.frame] = &row;

  std::vector<Episode> out;
  for (const auto& [follower_id, frames] : by_vehicle) {
    std::vector<const TrackRow*> run_f, run_l;
    auto flush = [&]() {
      if (run_f.size() >= 2) {
        const double duration = static_cast<double>(run_f.size() - 1) / tracks.frame_rate;
        if (duration >= min_duration - 1e-9) {
          const double length = run_l.front()->width;
          std::vector<double> t, x, v, xl, vl;
          for (std::size_t k = 0; k < run_f.size(); ++k) {
            t.push_back(static_cast<double>(run_f[k]->frame) / tracks.frame_rate);
            x.push_back(run_f[k]->x + run_f[k]->width);
            v.push_back(run_f[k]->x_velocity);
            xl.push_back(run_l[k]->x + run_l[k]->width);
            vl.push_back(run_l[k]->x_velocity);
          }
          const std::string id = std::to_string(follower_id) + "_" + std::to_string(run_l.front()->id) + "_" +
                                 std::to_string(run_f.front()->frame);
          out.emplace_back(id, std::move(t), std::move(x), std::move(v), std::move(xl), std::move(vl), length,
                           run_f.front()->cls);
        }
      }
      run_f.clear();
      run_l.clear();
    };

    for (const auto& [frame, row] : frames) {
      const TrackRow* lead = nullptr;
      if (row->preceding_id != 0) {
        const auto it = by_vehicle.find(row->preceding_id);
        if (it != by_vehicle.end()) {
          const auto jt = it->second.find(frame);
          if (jt != it->second.end()) lead = jt->second;
        }
      }
      const bool gap_ok = lead != nullptr && lead->x - (row->x + row->width) > 0.0;
      const bool continues = !run_f.empty() && frame == run_f.back()->frame + 1 && lead != nullptr &&
                             lead->id == run_l.back()->id && lead->width == run_l.back()->width;
      if (!continues) flush();
      if (gap_ok) {
        run_f.push_back(row);
        run_l.push_back(lead);
      } else {
        flush();
      }
    }
    flush();
  }
  return out;
}

}  // namespace maidm
