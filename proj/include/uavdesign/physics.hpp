#pragma once
/*
  Closed-form static hover oracle.

  Propellers follow the similarity relations T = Ct*rho*n^2*D^4 and
  P = Cp*rho*n^3*D^5 (n in rev/s, D in metres). All rotors of a design share a
  common speed, so thrust divides in proportion to Ct*D^4. A design hovers when
  that speed is within every motor's loaded speed limit and the resulting
  currents stay under motor, ESC and battery limits; hover time is usable battery
  energy over total electrical power.
*/

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "uavdesign/catalog.hpp"
#include "uavdesign/design.hpp"

namespace uav {

inline constexpr double kGravity = 9.80665;        // m/s^2
inline constexpr double kSeaLevelDensity = 1.225;  // kg/m^3
inline constexpr double kMetresPerInch = 0.0254;

struct PhysicsConstants {
  double air_density = kSeaLevelDensity;
  double loaded_rpm_fraction = 0.80;
  double drivetrain_efficiency = 0.75;
  double usable_battery_fraction = 0.80;
  double arm_linear_density_g_per_mm = 0.05;
  double fuselage_base_mass_g = 250.0;
  double wing_area_density_g_per_mm2 = 0.0015;
  double min_tip_clearance_mm = 10.0;
  double hub_radius_mm = 40.0;

  void validate() const;
  nlohmann::json to_json() const;
  static PhysicsConstants from_json(const nlohmann::json& j);
  static PhysicsConstants load_file(const std::string& path);
};

enum class FailureReason {
  ThrustDeficit,  // reserved; the static model reports speed limits instead
  MotorRpmLimit,
  MotorCurrentLimit,
  EscCurrentLimit,
  BatteryDischargeLimit,
  Interference,
  NoPropellers,
};

std::string_view failure_name(FailureReason reason);
std::optional<FailureReason> failure_from_name(std::string_view name);

struct HoverResult {
  bool can_hover = false;
  double hover_time_s = 0.0;
  double total_mass_kg = 0.0;
  double hover_power_W = 0.0;
  std::optional<FailureReason> failure_reason;

  // Diagnostics; zero when the evaluation stopped before computing them.
  int rotor_count = 0;
  double rotor_speed_rev_s = 0.0;
  double total_current_A = 0.0;

  bool operator==(const HoverResult&) const = default;
};

struct RotorSpec {
  double thrust_coeff = 0.0;
  double power_coeff = 0.0;
  double diameter_m = 0.0;
  double kv_rpm_per_volt = 0.0;
  double motor_max_current_A = 0.0;
  double esc_max_current_A = 0.0;
};

// Everything the hover computation needs once geometry has been resolved.
struct HoverProblem {
  double mass_kg = 0.0;
  std::vector<RotorSpec> rotors;
  double battery_capacity_Ah = 0.0;
  double battery_voltage_V = 0.0;
  double battery_max_discharge_C = 0.0;
  bool interference = false;
};

double mass_rollup(const DesignNode& tree, const Catalog& catalog, const PhysicsConstants& constants = {});

// n = sqrt((W / rotors) / (Ct * rho * D^4)), rev/s.
double required_rotor_speed(double weight_N, int rotor_count, double thrust_coeff, double diameter_m,
                            double air_density = kSeaLevelDensity);

// Adjacent propeller disks on a shared hub closer than the tip clearance.
bool has_interference(const DesignNode& tree, const Catalog& catalog, const PhysicsConstants& constants = {});

HoverProblem hover_problem(const DesignNode& tree, const Catalog& catalog, const PhysicsConstants& constants = {});
HoverResult solve_hover(const HoverProblem& problem, const PhysicsConstants& constants = {});

HoverResult evaluate_hover(const DesignNode& tree, const Catalog& catalog, const PhysicsConstants& constants = {});

// Label 1 iff hover time is strictly positive.
std::pair<int, HoverResult> label_design(const DesignNode& tree, const Catalog& catalog,
                                         const PhysicsConstants& constants = {});

}  // namespace uav
