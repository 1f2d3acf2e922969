#pragma once

// Canonical leader-follower episode on a uniform time grid.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "maidm/csv.hpp"
#include "maidm/error.hpp"
#include "maidm/idm.hpp"

namespace maidm {

enum class VehicleClass { Car, Truck };

inline std::string to_string(VehicleClass c) { return c == VehicleClass::Car ? "car" : "truck"; }

inline VehicleClass vehicle_class_from_string(const std::string& s) {
  if (s == "car" || s == "Car") return VehicleClass::Car;
  if (s == "truck" || s == "Truck") return VehicleClass::Truck;
  throw InvalidArgument("unknown vehicle class '" + s + "' (expected car|truck)");
}

/// Gap s = x_lead - x - leader_length and approach rate dv = v - v_lead are
/// derived on construction; invariants are checked there, never trusted.
class Episode {
 public:
  static constexpr double kGridTolerance = 1e-6;

  Episode() = default;

  Episode(std::string driver_id, std::vector<double> t, std::vector<double> x, std::vector<double> v,
          std::vector<double> x_lead, std::vector<double> v_lead, double leader_length,
          VehicleClass cls = VehicleClass::Car)
      : driver_id_(std::move(driver_id)),
        t_(std::move(t)),
        x_(std::move(x)),
        v_(std::move(v)),
        x_lead_(std::move(x_lead)),
        v_lead_(std::move(v_lead)),
        leader_length_(leader_length),
        class_(cls) {
    validate_and_derive();
  }

  const std::string& driver_id() const { return driver_id_; }
  VehicleClass vehicle_class() const { return class_; }
  double dt() const { return dt_; }
  double leader_length() const { return leader_length_; }
  std::size_t size() const { return t_.size(); }
  double duration() const { return t_.empty() ? 0.0 : t_.back() - t_.front(); }

  const std::vector<double>& t() const { return t_; }
  const std::vector<double>& x() const { return x_; }
  const std::vector<double>& v() const { return v_; }
  const std::vector<double>& x_lead() const { return x_lead_; }
  const std::vector<double>& v_lead() const { return v_lead_; }
  const std::vector<double>& s() const { return s_; }
  const std::vector<double>& dv() const { return dv_; }

  /// Forward-difference acceleration (v[k+1] - v[k]) / dt; the last sample
  /// repeats the previous one.
  std::vector<double> accel() const {
    std::vector<double> a(size(), 0.0);
    for (std::size_t k = 0; k + 1 < size(); ++k) a[k] = (v_[k + 1] - v_[k]) / dt_;
    if (size() >= 2) a.back() = a[size() - 2];
    return a;
  }

  LeaderTrack leader_track() const { return {dt_, leader_length_, x_lead_, v_lead_}; }
  KinematicState initial_state() const { return {x_.front(), v_.front()}; }

  /// Strided decimation; new_dt must be an integer multiple of dt.
  Episode resample(double new_dt) const {
    if (!(new_dt > 0.0)) throw InvalidArgument("resample: new_dt must be > 0");
    const double ratio = new_dt / dt_;
    const double stride_f = std::round(ratio);
    if (stride_f < 1.0 || std::abs(ratio - stride_f) > 1e-6 * std::max(1.0, ratio))
      throw InvalidArgument("resample: new_dt " + csv::fmt(new_dt) + " is not an integer multiple of dt " +
                            csv::fmt(dt_));
    const auto stride = static_cast<std::size_t>(stride_f);
    std::vector<double> t, x, v, xl, vl;
    for (std::size_t k = 0; k < size(); k += stride) {
      t.push_back(t_[k]);
      x.push_back(x_[k]);
      v.push_back(v_[k]);
      xl.push_back(x_lead_[k]);
      vl.push_back(v_lead_[k]);
    }
    return Episode(driver_id_, std::move(t), std::move(x), std::move(v), std::move(xl), std::move(vl),
                   leader_length_, class_);
  }

  /// First `n` samples.
  Episode head(std::size_t n) const {
    n = std::min(n, size());
    auto cut = [n](const std::vector<double>& a) { return std::vector<double>(a.begin(), a.begin() + n); };
    return Episode(driver_id_, cut(t_), cut(x_), cut(v_), cut(x_lead_), cut(v_lead_), leader_length_, class_);
  }

 private:
  void validate_and_derive() {
    const std::size_t n = t_.size();
    if (n < 2) throw InvalidArgument("Episode '" + driver_id_ + "': need at least 2 samples");
    if (x_.size() != n || v_.size() != n || x_lead_.size() != n || v_lead_.size() != n)
      throw InvalidArgument("Episode '" + driver_id_ + "': channel lengths differ");
    if (!(leader_length_ >= 0.0) || !std::isfinite(leader_length_))
      throw InvalidArgument("Episode '" + driver_id_ + "': leader_length must be finite and >= 0");
    dt_ = (t_.back() - t_.front()) / static_cast<double>(n - 1);
    if (!(dt_ > 0.0)) throw InvalidArgument("Episode '" + driver_id_ + "': time must increase");
    s_.resize(n);
    dv_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (!std::isfinite(t_[k]) || !std::isfinite(x_[k]) || !std::isfinite(v_[k]) || !std::isfinite(x_lead_[k]) ||
          !std::isfinite(v_lead_[k]))
        throw InvalidArgument("Episode '" + driver_id_ + "': non-finite value at sample " + std::to_string(k));
      if (k > 0 && std::abs((t_[k] - t_[k - 1]) - dt_) > kGridTolerance)
        throw InvalidArgument("Episode '" + driver_id_ + "': non-uniform time step at sample " + std::to_string(k));
      if (v_[k] < 0.0) throw InvalidArgument("Episode '" + driver_id_ + "': negative speed at sample " + std::to_string(k));
      s_[k] = x_lead_[k] - x_[k] - leader_length_;
      if (!(s_[k] > 0.0))
        throw InvalidArgument("Episode '" + driver_id_ + "': non-positive gap at sample " + std::to_string(k));
      dv_[k] = v_[k] - v_lead_[k];
    }
  }

  std::string driver_id_;
  std::vector<double> t_, x_, v_, x_lead_, v_lead_, s_, dv_;
  double leader_length_ = 0.0;
  VehicleClass class_ = VehicleClass::Car;
  double dt_ = 0.0;
};

inline constexpr const char* kEpisodeHeader = "t,x_follow,v_follow,x_lead,v_lead,leader_length,driver_id,vehicle_class";

inline void save_episode_csv(const Episode& ep, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  out << kEpisodeHeader << '\n';
  const std::string tail = "," + csv::fmt(ep.leader_length()) + "," + ep.driver_id() + "," + to_string(ep.vehicle_class());
  for (std::size_t k = 0; k < ep.size(); ++k) {
    out << csv::fmt(ep.t()[k]) << ',' << csv::fmt(ep.x()[k]) << ',' << csv::fmt(ep.v()[k]) << ','
        << csv::fmt(ep.x_lead()[k]) << ',' << csv::fmt(ep.v_lead()[k]) << tail << '\n';
  }
  csv::finish(out, path);
}

inline Episode episode_from_table(const csv::Table& tab) {
  const auto ct = tab.column("t"), cx = tab.column("x_follow"), cv = tab.column("v_follow"),
             cxl = tab.column("x_lead"), cvl = tab.column("v_lead"), cl = tab.column("leader_length"),
             cid = tab.column("driver_id"), ccl = tab.column("vehicle_class");
  if (tab.rows.size() < 2) throw InvalidArgument(tab.source + ": need at least 2 data rows");
  std::vector<double> t, x, v, xl, vl;
  const double length = tab.number(0, cl);
  const std::string id = tab.rows[0][cid];
  const std::string cls = tab.rows[0][ccl];
  for (std::size_t r = 0; r < tab.rows.size(); ++r) {
    t.push_back(tab.number(r, ct));
    x.push_back(tab.number(r, cx));
    v.push_back(tab.number(r, cv));
    xl.push_back(tab.number(r, cxl));
    vl.push_back(tab.number(r, cvl));
    if (tab.number(r, cl) != length || tab.rows[r][cid] != id || tab.rows[r][ccl] != cls)
      throw InvalidArgument(tab.source + ":" + std::to_string(tab.line_numbers[r]) +
                            ": leader_length, driver_id and vehicle_class must be constant within an episode");
  }
  try {
    return Episode(id, std::move(t), std::move(x), std::move(v), std::move(xl), std::move(vl), length,
                   vehicle_class_from_string(cls));
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(tab.source + ": " + e.what());
  }
}

inline Episode load_episode_csv(const std::filesystem::path& path) { return episode_from_table(csv::read(path)); }

}  // namespace maidm
