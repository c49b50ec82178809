#include "uavdesign/physics.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "uavdesign/error.hpp"

namespace uav {

namespace {

using json = nlohmann::json;

void require_valid(const DesignNode& tree, const Catalog& catalog, const char* what) {
  ValidationReport report = validate_design(tree, catalog);
  if (!report.valid) {
    const Violation& v = report.violations.front();
    throw Error(ErrorCode::InvalidTree, std::string(what) + ": invalid tree at " + v.path + " [" + v.rule + "]: " + v.message);
  }
}

double arm_mass_g(const DesignNode& arm, const Catalog& catalog, const PhysicsConstants& c) {
  return c.arm_linear_density_g_per_mm * arm.number(ParamKey::ArmLength) +
         catalog.at(arm.symbol(ParamKey::MotorType)).attr("mass_g") +
         catalog.at(arm.symbol(ParamKey::PropType)).attr("mass_g") +
         catalog.at(arm.symbol(ParamKey::EscType)).attr("mass_g");
}

double subtree_mass_g(const DesignNode& node, const Catalog& catalog, const PhysicsConstants& c) {
  double m = 0.0;
  switch (node.kind.type) {
    case NodeType::PropArm:
      m += arm_mass_g(node, catalog, c);
      break;
    case NodeType::Wing:
      m += c.wing_area_density_g_per_mm2 * node.number(ParamKey::SpanMm) * node.number(ParamKey::ChordMm);
      break;
    default:
      break;
  }
  double children = 0.0;
  if (node.kind.type == NodeType::Hub && node.kind.symmetric) {
    // Summed copy by copy so the result is bitwise equal to the expanded tree's.
    double copy = subtree_mass_g(node.children.front(), catalog, c);
    for (int i = 0; i < node.kind.arity; ++i) children += copy;
  } else {
    for (const DesignNode& child : node.children) children += subtree_mass_g(child, catalog, c);
  }
  return m + children;
}

RotorSpec rotor_of(const DesignNode& arm, const Catalog& catalog) {
  const ComponentRecord& motor = catalog.at(arm.symbol(ParamKey::MotorType));
  const ComponentRecord& prop = catalog.at(arm.symbol(ParamKey::PropType));
  const ComponentRecord& esc = catalog.at(arm.symbol(ParamKey::EscType));
  return RotorSpec{
      prop.attr("thrust_coeff_Ct"),
      prop.attr("power_coeff_Cp"),
      prop.attr("diameter_in") * kMetresPerInch,
      motor.attr("kv_rpm_per_volt"),
      motor.attr("max_current_A"),
      esc.attr("max_current_A"),
  };
}

// Rotors in the order of the symmetry-expanded tree.
void collect_rotors(const DesignNode& node, const Catalog& catalog, std::vector<RotorSpec>& out) {
  if (node.kind.type == NodeType::PropArm) {
    out.push_back(rotor_of(node, catalog));
    return;
  }
  if (node.kind.type == NodeType::Hub && node.kind.symmetric) {
    std::size_t first = out.size();
    collect_rotors(node.children.front(), catalog, out);
    std::size_t per_copy = out.size() - first;
    for (int copy = 1; copy < node.kind.arity; ++copy) {
      for (std::size_t i = 0; i < per_copy; ++i) out.push_back(out[first + i]);
    }
    return;
  }
  for (const DesignNode& child : node.children) collect_rotors(child, catalog, out);
}

double disk_radius_mm(const DesignNode& arm, const Catalog& catalog) {
  return 0.5 * catalog.at(arm.symbol(ParamKey::PropType)).attr("diameter_in") * 25.4;
}

bool disks_overlap(const DesignNode& a, const DesignNode& b, double angle, const Catalog& catalog,
                   const PhysicsConstants& c) {
  // Arms are mounted on the hub rim, so disk centres sit hub_radius further out.
  double la = c.hub_radius_mm + a.number(ParamKey::ArmLength);
  double lb = c.hub_radius_mm + b.number(ParamKey::ArmLength);
  double dist = std::sqrt(std::max(0.0, la * la + lb * lb - 2.0 * la * lb * std::cos(angle)));
  return dist < disk_radius_mm(a, catalog) + disk_radius_mm(b, catalog) + c.min_tip_clearance_mm;
}

bool hub_interferes(const DesignNode& hub, const Catalog& catalog, const PhysicsConstants& c) {
  const int k = hub.kind.arity;
  const double spacing = 2.0 * std::numbers::pi / k;
  auto child_at = [&](int slot) -> const DesignNode& {
    return hub.kind.symmetric ? hub.children.front() : hub.children[static_cast<std::size_t>(slot)];
  };
  // For k == 2 the two neighbours of a slot coincide; check the pair once.
  const int pairs = k == 2 ? 1 : k;
  for (int i = 0; i < pairs; ++i) {
    const DesignNode& a = child_at(i);
    const DesignNode& b = child_at((i + 1) % k);
    if (a.kind.type == NodeType::PropArm && b.kind.type == NodeType::PropArm &&
        disks_overlap(a, b, spacing, catalog, c)) {
      return true;
    }
  }
  return false;
}

bool interferes(const DesignNode& node, const Catalog& catalog, const PhysicsConstants& c) {
  if (node.kind.type != NodeType::Hub) return false;
  if (hub_interferes(node, catalog, c)) return true;
  for (const DesignNode& child : node.children) {
    if (interferes(child, catalog, c)) return true;
  }
  return false;
}

HoverResult failed(HoverResult r, FailureReason reason) {
  r.can_hover = false;
  r.hover_time_s = 0.0;
  r.failure_reason = reason;
  return r;
}

double number_field(const json& value, const std::string& key) {
  if (!value.is_number()) throw Error(ErrorCode::Config, "physics constant '" + key + "' must be a number");
  return value.get<double>();
}

}  // namespace

std::string_view failure_name(FailureReason reason) {
  switch (reason) {
    case FailureReason::ThrustDeficit: return "thrust_deficit";
    case FailureReason::MotorRpmLimit: return "motor_rpm_limit";
    case FailureReason::MotorCurrentLimit: return "motor_current_limit";
    case FailureReason::EscCurrentLimit: return "esc_current_limit";
    case FailureReason::BatteryDischargeLimit: return "battery_discharge_limit";
    case FailureReason::Interference: return "interference";
    case FailureReason::NoPropellers: return "no_propellers";
  }
  return "";
}

std::optional<FailureReason> failure_from_name(std::string_view name) {
  for (auto r : {FailureReason::ThrustDeficit, FailureReason::MotorRpmLimit, FailureReason::MotorCurrentLimit,
                 FailureReason::EscCurrentLimit, FailureReason::BatteryDischargeLimit, FailureReason::Interference,
                 FailureReason::NoPropellers}) {
    if (failure_name(r) == name) return r;
  }
  return std::nullopt;
}

void PhysicsConstants::validate() const {
  if (air_density != kSeaLevelDensity) throw Error(ErrorCode::Config, "air density is fixed at 1.225 kg/m^3");
  for (double v : {loaded_rpm_fraction, drivetrain_efficiency, usable_battery_fraction, arm_linear_density_g_per_mm,
                   fuselage_base_mass_g, wing_area_density_g_per_mm2, min_tip_clearance_mm, hub_radius_mm}) {
    if (!std::isfinite(v) || v <= 0.0) throw Error(ErrorCode::Config, "physics constants must be finite and > 0");
  }
  if (loaded_rpm_fraction > 1.0 || drivetrain_efficiency > 1.0 || usable_battery_fraction > 1.0) {
    throw Error(ErrorCode::Config, "fractions and efficiencies must not exceed 1");
  }
}

json PhysicsConstants::to_json() const {
  return json{
      {"loaded_rpm_fraction", loaded_rpm_fraction},
      {"drivetrain_efficiency", drivetrain_efficiency},
      {"usable_battery_fraction", usable_battery_fraction},
      {"arm_linear_density_g_per_mm", arm_linear_density_g_per_mm},
      {"fuselage_base_mass_g", fuselage_base_mass_g},
      {"wing_area_density_g_per_mm2", wing_area_density_g_per_mm2},
      {"min_tip_clearance_mm", min_tip_clearance_mm},
      {"hub_radius_mm", hub_radius_mm},
  };
}

PhysicsConstants PhysicsConstants::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Config, "physics constants must be a JSON object");
  PhysicsConstants c;
  for (const auto& [key, value] : j.items()) {
    if (key == "loaded_rpm_fraction") {
      c.loaded_rpm_fraction = number_field(value, key);
    } else if (key == "drivetrain_efficiency") {
      c.drivetrain_efficiency = number_field(value, key);
    } else if (key == "usable_battery_fraction") {
      c.usable_battery_fraction = number_field(value, key);
    } else if (key == "arm_linear_density_g_per_mm") {
      c.arm_linear_density_g_per_mm = number_field(value, key);
    } else if (key == "fuselage_base_mass_g") {
      c.fuselage_base_mass_g = number_field(value, key);
    } else if (key == "wing_area_density_g_per_mm2") {
      c.wing_area_density_g_per_mm2 = number_field(value, key);
    } else if (key == "min_tip_clearance_mm") {
      c.min_tip_clearance_mm = number_field(value, key);
    } else if (key == "hub_radius_mm") {
      c.hub_radius_mm = number_field(value, key);
    } else {
      throw Error(ErrorCode::Config, "unknown physics constant '" + key + "'");
    }
  }
  c.validate();
  return c;
}

PhysicsConstants PhysicsConstants::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open physics constants '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Config, "physics constants '" + path + "': " + e.what());
  }
  return from_json(j);
}

double mass_rollup(const DesignNode& tree, const Catalog& catalog, const PhysicsConstants& constants) {
  require_valid(tree, catalog, "mass_rollup");
  double grams = constants.fuselage_base_mass_g + subtree_mass_g(tree, catalog, constants);
  if (const ParamValue* battery = tree.find(ParamKey::BatteryType)) {
    grams += catalog.at(std::get<std::string>(*battery)).attr("mass_g");
  }
  return grams / 1000.0;
}

double required_rotor_speed(double weight_N, int rotor_count, double thrust_coeff, double diameter_m,
                            double air_density) {
  if (rotor_count <= 0) throw Error(ErrorCode::NoPropellers, "required_rotor_speed: no propellers");
  if (!(thrust_coeff > 0.0) || !(diameter_m > 0.0)) {
    throw Error(ErrorCode::InvalidTree, "required_rotor_speed: Ct and D must be > 0");
  }
  double d2 = diameter_m * diameter_m;
  return std::sqrt((weight_N / rotor_count) / (thrust_coeff * air_density * d2 * d2));
}

bool has_interference(const DesignNode& tree, const Catalog& catalog, const PhysicsConstants& constants) {
  require_valid(tree, catalog, "has_interference");
  return interferes(tree, catalog, constants);
}

HoverProblem hover_problem(const DesignNode& tree, const Catalog& catalog, const PhysicsConstants& constants) {
  HoverProblem p;
  p.mass_kg = mass_rollup(tree, catalog, constants);
  collect_rotors(tree, catalog, p.rotors);
  if (const ParamValue* battery = tree.find(ParamKey::BatteryType)) {
    const ComponentRecord& b = catalog.at(std::get<std::string>(*battery));
    p.battery_capacity_Ah = b.attr("capacity_mAh") / 1000.0;
    p.battery_voltage_V = b.attr("voltage_V");
    p.battery_max_discharge_C = b.attr("max_discharge_C");
  }
  p.interference = interferes(tree, catalog, constants);
  return p;
}

HoverResult solve_hover(const HoverProblem& p, const PhysicsConstants& c) {
  HoverResult r;
  r.total_mass_kg = p.mass_kg;
  r.rotor_count = static_cast<int>(p.rotors.size());
  if (p.rotors.empty()) return failed(r, FailureReason::NoPropellers);
  if (p.interference) return failed(r, FailureReason::Interference);

  const double weight = p.mass_kg * kGravity;
  double disk_sum = 0.0;  // sum of Ct * D^4
  for (const RotorSpec& rotor : p.rotors) {
    double d2 = rotor.diameter_m * rotor.diameter_m;
    disk_sum += rotor.thrust_coeff * d2 * d2;
  }
  const double n = std::sqrt(weight / (c.air_density * disk_sum));
  r.rotor_speed_rev_s = n;

  const double volts = p.battery_voltage_V;
  for (const RotorSpec& rotor : p.rotors) {
    double n_max = rotor.kv_rpm_per_volt * volts * c.loaded_rpm_fraction / 60.0;
    if (n > n_max) return failed(r, FailureReason::MotorRpmLimit);
  }

  std::vector<double> currents;
  currents.reserve(p.rotors.size());
  double power = 0.0;
  double current = 0.0;
  for (const RotorSpec& rotor : p.rotors) {
    double d = rotor.diameter_m;
    double mech = rotor.power_coeff * c.air_density * n * n * n * d * d * d * d * d;
    double elec = mech / c.drivetrain_efficiency;
    power += elec;
    currents.push_back(elec / volts);
    current += currents.back();
  }
  r.hover_power_W = power;
  r.total_current_A = current;
  for (std::size_t i = 0; i < p.rotors.size(); ++i) {
    if (currents[i] > p.rotors[i].motor_max_current_A) return failed(r, FailureReason::MotorCurrentLimit);
  }
  for (std::size_t i = 0; i < p.rotors.size(); ++i) {
    if (currents[i] > p.rotors[i].esc_max_current_A) return failed(r, FailureReason::EscCurrentLimit);
  }
  if (current > p.battery_capacity_Ah * p.battery_max_discharge_C) {
    return failed(r, FailureReason::BatteryDischargeLimit);
  }

  r.hover_time_s = p.battery_capacity_Ah * c.usable_battery_fraction * volts * 3600.0 / power;
  r.can_hover = r.hover_time_s > 0.0;
  return r;
}

HoverResult evaluate_hover(const DesignNode& tree, const Catalog& catalog, const PhysicsConstants& constants) {
  return solve_hover(hover_problem(tree, catalog, constants), constants);
}

std::pair<int, HoverResult> label_design(const DesignNode& tree, const Catalog& catalog,
                                         const PhysicsConstants& constants) {
  HoverResult r = evaluate_hover(tree, catalog, constants);
  return {r.hover_time_s > 0.0 ? 1 : 0, r};
}

}  // namespace uav
