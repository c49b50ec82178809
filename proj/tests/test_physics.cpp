#include <cmath>

#include "doctest.h"
#include "test_support.hpp"
#include "uavdesign/error.hpp"
#include "uavdesign/generator.hpp"
#include "uavdesign/physics.hpp"
#include "uavdesign/rng.hpp"

using namespace uav;
using testing::bundled_catalog;
using testing::hub;
using testing::prop_arm;
using testing::sym_hub;
using testing::tiny_catalog;
using testing::wing;
using testing::with_battery;

namespace {

RotorSpec golden_rotor() {
  RotorSpec r;
  r.thrust_coeff = 0.10;
  r.power_coeff = 0.05;
  r.diameter_m = 0.254;
  r.kv_rpm_per_volt = 1000.0;
  r.motor_max_current_A = 30.0;
  r.esc_max_current_A = 30.0;
  return r;
}

HoverProblem golden_problem(double mass_kg = 1.2) {
  HoverProblem p;
  p.mass_kg = mass_kg;
  p.rotors.assign(4, golden_rotor());
  p.battery_capacity_Ah = 2.2;
  p.battery_voltage_V = 11.1;
  p.battery_max_discharge_C = 30.0;
  return p;
}

// Straight-line recomputation of the hover chain for identical rotors.
struct HandChain {
  double n, n_max, electrical_W, hover_s;
};

HandChain hand_chain(double m, int rotors, double Ct, double Cp, double D, double kv, double V, double Ah) {
  const double rho = 1.225, g = 9.80665;
  HandChain h;
  h.n = std::sqrt(m * g / rotors / (Ct * rho * std::pow(D, 4)));
  h.n_max = kv * V * 0.8 / 60.0;
  h.electrical_W = rotors * Cp * rho * std::pow(h.n, 3) * std::pow(D, 5) / 0.75;
  h.hover_s = Ah * 0.8 * V * 3600.0 / h.electrical_W;
  return h;
}

HoverProblem random_problem(Rng& rng) {
  HoverProblem p;
  p.mass_kg = rng.uniform(0.3, 3.0);
  int k = 2 + static_cast<int>(rng.below(12));
  RotorSpec r;
  r.thrust_coeff = rng.uniform(0.08, 0.14);
  r.power_coeff = rng.uniform(0.03, 0.07);
  r.diameter_m = rng.uniform(6.0, 16.0) * kMetresPerInch;
  r.kv_rpm_per_volt = rng.uniform(500.0, 2500.0);
  r.motor_max_current_A = rng.uniform(20.0, 60.0);
  r.esc_max_current_A = rng.uniform(20.0, 80.0);
  p.rotors.assign(static_cast<std::size_t>(k), r);
  p.battery_capacity_Ah = rng.uniform(1.0, 10.0);
  p.battery_voltage_V = 3.7 * static_cast<double>(2 + rng.below(5));
  p.battery_max_discharge_C = rng.uniform(20.0, 100.0);
  return p;
}

}  // namespace

TEST_CASE("golden quadcopter chain") {
  HoverResult r = solve_hover(golden_problem());
  HandChain h = hand_chain(1.2, 4, 0.10, 0.05, 0.254, 1000.0, 11.1, 2.2);

  // Published reference numbers for this case.
  CHECK(h.n == doctest::Approx(75.97).epsilon(5e-4));
  CHECK(h.n_max == doctest::Approx(148.0));
  CHECK(h.electrical_W == doctest::Approx(151.4).epsilon(1e-3));
  CHECK(h.hover_s == doctest::Approx(464.5).epsilon(1e-3));

  REQUIRE(r.can_hover);
  CHECK_FALSE(r.failure_reason);
  CHECK(r.rotor_speed_rev_s == doctest::Approx(h.n).epsilon(1e-12));
  CHECK(r.hover_power_W == doctest::Approx(h.electrical_W).epsilon(1e-12));
  CHECK(r.hover_time_s == doctest::Approx(h.hover_s).epsilon(1e-12));
  CHECK(std::abs(r.hover_time_s / 464.5 - 1.0) < 0.005);
  CHECK(std::abs(r.rotor_speed_rev_s / 75.97 - 1.0) < 0.005);
  CHECK(required_rotor_speed(1.2 * kGravity, 4, 0.10, 0.254) == doctest::Approx(h.n).epsilon(1e-12));
}

TEST_CASE("failure modes") {
  SUBCASE("ten times the mass exceeds the motor speed limit") {
    HoverResult r = solve_hover(golden_problem(12.0));
    CHECK_FALSE(r.can_hover);
    CHECK(r.hover_time_s == 0.0);
    REQUIRE(r.failure_reason);
    CHECK(*r.failure_reason == FailureReason::MotorRpmLimit);
  }
  SUBCASE("motor current") {
    HoverProblem p = golden_problem();
    p.rotors.assign(4, [] { auto r = golden_rotor(); r.motor_max_current_A = 1.0; return r; }());
    CHECK(solve_hover(p).failure_reason == FailureReason::MotorCurrentLimit);
  }
  SUBCASE("esc current") {
    HoverProblem p = golden_problem();
    p.rotors.assign(4, [] { auto r = golden_rotor(); r.esc_max_current_A = 1.0; return r; }());
    CHECK(solve_hover(p).failure_reason == FailureReason::EscCurrentLimit);
  }
  SUBCASE("battery discharge") {
    HoverProblem p = golden_problem();
    p.battery_max_discharge_C = 1.0;  // 2.2 A ceiling against ~13.6 A draw
    CHECK(solve_hover(p).failure_reason == FailureReason::BatteryDischargeLimit);
  }
  SUBCASE("interference") {
    HoverProblem p = golden_problem();
    p.interference = true;
    CHECK(solve_hover(p).failure_reason == FailureReason::Interference);
  }
  SUBCASE("no propellers") {
    HoverProblem p = golden_problem();
    p.rotors.clear();
    CHECK(solve_hover(p).failure_reason == FailureReason::NoPropellers);
    CHECK_THROWS_AS(required_rotor_speed(10.0, 0, 0.1, 0.25), Error);
  }
}

TEST_CASE("mass rollup by hand") {
  const Catalog& cat = tiny_catalog();
  DesignNode quad = with_battery(sym_hub(4, prop_arm(200)));
  // Arm: 0.05 g/mm * 200 mm + motor 60 + prop 13 + esc 9 = 92 g.
  CHECK(mass_rollup(quad, cat) == doctest::Approx((250.0 + 4 * 92.0 + 180.0) / 1000.0).epsilon(1e-14));
  CHECK(mass_rollup(DesignNode{NodeKind::fuselage(), {}, {}}, cat) == doctest::Approx(0.250));
  DesignNode winged = hub({wing(800.0, 150.0), wing(800.0, 150.0)});
  CHECK(mass_rollup(winged, cat) == doctest::Approx((250.0 + 2 * 0.0015 * 800.0 * 150.0) / 1000.0));
  HoverResult fus = evaluate_hover(DesignNode{NodeKind::fuselage(), {}, {}}, cat);
  CHECK(fus.failure_reason == FailureReason::NoPropellers);
  CHECK(fus.total_mass_kg == doctest::Approx(0.250));
}

TEST_CASE("tree evaluation matches the hand chain") {
  const Catalog& cat = tiny_catalog();
  DesignNode quad = with_battery(sym_hub(4, prop_arm(250)));
  HoverResult r = evaluate_hover(quad, cat);
  double m = (250.0 + 4 * (0.05 * 250 + 82.0) + 180.0) / 1000.0;
  HandChain h = hand_chain(m, 4, 0.1, 0.05, 0.254, 1000.0, 11.1, 2.2);
  REQUIRE(r.can_hover);
  CHECK(r.hover_time_s == doctest::Approx(h.hover_s).epsilon(1e-12));
  CHECK(label_design(quad, cat).first == 1);
}

TEST_CASE("interference geometry") {
  const Catalog& cat = tiny_catalog();
  // 10-inch props: radius 127 mm. Four arms of 80 mm put disk centres 120 mm
  // out, 169.7 mm apart, against 264 mm needed.
  CHECK(has_interference(with_battery(sym_hub(4, prop_arm(80))), cat));
  // At 250 mm the centres are 409.3 mm apart.
  CHECK_FALSE(has_interference(with_battery(sym_hub(4, prop_arm(250))), cat));
  CHECK(evaluate_hover(with_battery(sym_hub(4, prop_arm(80))), cat).failure_reason == FailureReason::Interference);
  // Arms on opposite sides of a 2-hub only need 2 * (40 + L) >= 264.
  CHECK_FALSE(has_interference(with_battery(sym_hub(2, prop_arm(95))), cat));
  CHECK(has_interference(with_battery(sym_hub(2, prop_arm(85))), cat));
}

TEST_CASE("reference quadcopter hovers with the bundled catalog") {
  auto [label, r] = label_design(reference_quadcopter(), bundled_catalog());
  CHECK(label == 1);
  CHECK(r.hover_time_s > 0.0);
  CHECK(r.rotor_count == 4);
}

TEST_CASE("monotonicity over randomized perturbation pairs") {
  Rng rng(2024);
  int mass_pairs = 0, capacity_pairs = 0;
  while (mass_pairs < 1000 || capacity_pairs < 1000) {
    HoverProblem p = random_problem(rng);
    HoverResult base = solve_hover(p);
    if (!base.can_hover) continue;
    if (mass_pairs < 1000) {
      HoverProblem heavier = p;
      heavier.mass_kg *= rng.uniform(1.001, 1.5);
      HoverResult h = solve_hover(heavier);
      CHECK(h.hover_time_s < base.hover_time_s);
      ++mass_pairs;
    }
    if (capacity_pairs < 1000) {
      HoverProblem bigger = p;
      bigger.battery_capacity_Ah *= rng.uniform(1.001, 1.5);
      HoverResult b = solve_hover(bigger);
      REQUIRE(b.can_hover);
      CHECK(b.hover_time_s > base.hover_time_s);
      ++capacity_pairs;
    }
  }
}

TEST_CASE("properties over generator samples") {
  const Catalog& cat = bundled_catalog();
  GeneratorConfig cfg;
  int hovering = 0;
  for (std::uint64_t i = 0; i < 3000; ++i) {
    DesignNode t = sample_design(cfg, i, cat);
    auto [label, r] = label_design(t, cat);
    CHECK(r.can_hover == (r.hover_time_s > 0.0));
    CHECK(r.can_hover == !r.failure_reason.has_value());
    CHECK(label == (r.hover_time_s > 0.0 ? 1 : 0));
    CHECK(r.total_mass_kg > 0.0);
    CHECK(r.hover_power_W >= 0.0);
    // Symmetry expansion does not change the physics.
    CHECK(evaluate_hover(expand_symmetry(t), cat) == r);
    hovering += label;
  }
  // Base rate stays in a usable regime for the filter.
  CHECK(hovering > 3000 * 0.05);
  CHECK(hovering < 3000 * 0.20);
}

TEST_CASE("physics constants json") {
  PhysicsConstants c;
  CHECK_NOTHROW(c.validate());
  PhysicsConstants back = PhysicsConstants::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK_THROWS_AS(PhysicsConstants::from_json({{"gravity", 9.8}}), Error);
  CHECK_THROWS_AS(PhysicsConstants::from_json({{"drivetrain_efficiency", 1.5}}), Error);
  CHECK_THROWS_AS(PhysicsConstants::from_json({{"hub_radius_mm", -1}}), Error);
  CHECK(failure_from_name(failure_name(FailureReason::EscCurrentLimit)) == FailureReason::EscCurrentLimit);
  CHECK_FALSE(failure_from_name("tipped_over"));
}

TEST_CASE("shipped default constants match the built-in defaults") {
  CHECK(PhysicsConstants::load_file(UAV_DATA_DIR "/physics_default.json").to_json() == PhysicsConstants{}.to_json());
}
