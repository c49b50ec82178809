#!/usr/bin/env python3
"""Regenerates data/catalog.jsonl, the bundled component library.

Part names follow vendor naming patterns; attribute values are drawn inside
manufacturer-typical ranges with the usual couplings (bigger motors are heavier,
carry more current and spin slower per volt; battery mass follows stored
energy). The output is deterministic for a given seed.

    python3 tools/make_catalog.py > data/catalog.jsonl
"""

import json
import math
import random
import sys

KEY_CLASSES = 18
VALUE_CLASSES = 671
ATTRIBUTE_SLOTS = 51
# Numeric class + 12 hub arities x {plain, _Sym} + PropArm + Wing + Fuselage.
GRAMMAR_VALUES = 1 + 24 + 3
COMPONENTS = VALUE_CLASSES - GRAMMAR_VALUES

N_MOTORS = 260
N_PROPS = 220
N_ESCS = 60
N_BATTERIES = COMPONENTS - N_MOTORS - N_PROPS - N_ESCS

# Parts that appear in the reference quadcopter.
FIXED = [
    {"id": "t_motor_MN2212KV780", "kind": "Motor",
     "attributes": {"kv_rpm_per_volt": 780.0, "max_current_A": 15.0, "resistance_ohm": 0.133, "mass_g": 55.0}},
    {"id": "apc_propellers_12x5", "kind": "Propeller",
     "attributes": {"diameter_in": 12.0, "pitch_in": 5.0, "thrust_coeff_Ct": 0.105, "power_coeff_Cp": 0.042,
                    "mass_g": 18.0}},
    {"id": "t_motor_T_80A", "kind": "ESC", "attributes": {"max_current_A": 80.0, "mass_g": 48.0}},
    {"id": "TurnigyGraphene1400mAh3S75C", "kind": "Battery",
     "attributes": {"capacity_mAh": 1400.0, "voltage_V": 11.1, "max_discharge_C": 75.0, "mass_g": 134.0}},
]


def r3(x):
    return float(f"{x:.4g}")


def motors(rng, n, taken):
    families = ["t_motor_MN", "kde_", "scorpion_SII_", "tiger_U", "emax_MT", "sunnysky_X"]
    out = []
    while len(out) < n:
        fam = rng.choice(families)
        # Stator diameter (mm) drives mass, current and the attainable Kv band.
        stator = rng.choice([18, 22, 23, 28, 35, 40, 46, 50, 60, 70, 80])
        height = rng.choice([6, 8, 10, 12, 14, 18])
        volume = stator * stator * height
        mass = r3(6.0 + volume * 0.0042 * rng.uniform(0.85, 1.15))
        kv_center = 5200.0 / math.sqrt(volume / 400.0)
        kv = int(round(kv_center * math.exp(rng.uniform(-0.6, 0.6)) / 10.0) * 10)
        kv = max(90, kv)
        max_current = r3(max(4.0, 0.28 * mass ** 0.95 * rng.uniform(0.8, 1.25)))
        resistance = r3(max(0.008, 2.4 / max_current * rng.uniform(0.7, 1.3)))
        if fam == "t_motor_MN":
            name = f"t_motor_MN{stator}{height:02d}KV{kv}"
        elif fam == "kde_":
            name = f"kde_{stator}{height:02d}XF_{kv}"
        elif fam == "scorpion_SII_":
            name = f"scorpion_SII_{stator}{height:02d}_{kv}KV"
        elif fam == "tiger_U":
            name = f"tiger_U{stator // 10}_{stator}{height:02d}_KV{kv}"
        elif fam == "emax_MT":
            name = f"emax_MT{stator}{height:02d}_{kv}KV"
        else:
            name = f"sunnysky_X{stator}{height:02d}_KV{kv}"
        if name in taken:
            continue
        taken.add(name)
        out.append({"id": name, "kind": "Motor",
                    "attributes": {"kv_rpm_per_volt": float(kv), "max_current_A": max_current,
                                   "resistance_ohm": resistance, "mass_g": mass}})
    return out


def props(rng, n, taken):
    families = ["apc_propellers_", "t_motor_props_", "master_airscrew_", "gemfan_", "xoar_"]
    out = []
    while len(out) < n:
        fam = rng.choice(families)
        diameter = rng.choice([5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 20, 22, 24, 26, 28])
        pitch = round(diameter * rng.uniform(0.25, 0.7) * 2) / 2
        pitch_s = f"{pitch:g}".replace(".", "")
        suffix = rng.choice(["", "E", "MR", "CF", "SF"])
        name = f"{fam}{diameter}x{pitch_s}{suffix}"
        if name in taken:
            continue
        taken.add(name)
        ratio = pitch / diameter
        ct = r3(0.07 + 0.09 * ratio + rng.uniform(-0.008, 0.008))
        cp = r3(0.012 + 0.085 * ratio * ratio + 0.02 * ratio + rng.uniform(-0.003, 0.003))
        mass = r3(0.11 * diameter ** 2 * rng.uniform(0.7, 1.3))
        out.append({"id": name, "kind": "Propeller",
                    "attributes": {"diameter_in": float(diameter), "pitch_in": float(pitch), "thrust_coeff_Ct": ct,
                                   "power_coeff_Cp": cp, "mass_g": mass}})
    return out


def escs(rng, n, taken):
    families = ["t_motor_T_", "hobbywing_XRotor_", "castle_Phoenix_", "flycolor_Raptor_"]
    out = []
    while len(out) < n:
        fam = rng.choice(families)
        amps = rng.choice([10, 12, 15, 20, 25, 30, 35, 40, 45, 50, 60, 70, 80, 100, 120, 150])
        name = f"{fam}{amps}A"
        if name in taken:
            variant = rng.choice(["_V2", "_Pro", "_HV", "_LV", "_Lite", "_Opto"])
            name = f"{fam}{amps}A{variant}"
        if name in taken:
            continue
        taken.add(name)
        mass = r3(4.0 + 0.55 * amps * rng.uniform(0.75, 1.25))
        out.append({"id": name, "kind": "ESC", "attributes": {"max_current_A": float(amps), "mass_g": mass}})
    return out


def batteries(rng, n, taken):
    families = ["TurnigyGraphene", "TattuPlus", "GensAce", "ZippyCompact", "Multistar"]
    out = []
    while len(out) < n:
        fam = rng.choice(families)
        cells = rng.choice([2, 3, 3, 4, 4, 6, 6, 8, 12])
        capacity = rng.choice([450, 650, 850, 1000, 1300, 1400, 1500, 1800, 2200, 2700, 3000, 3300, 4000,
                               5000, 5200, 6000, 8000, 10000, 12000, 16000, 22000])
        c_rating = rng.choice([15, 20, 25, 30, 35, 40, 45, 50, 65, 75, 95, 100])
        name = f"{fam}{capacity}mAh{cells}S{c_rating}C"
        if name in taken:
            continue
        taken.add(name)
        voltage = round(3.7 * cells, 2)
        energy_wh = capacity / 1000.0 * voltage
        mass = r3(energy_wh / 0.15 * rng.uniform(0.9, 1.15) + 4.0 * cells)
        out.append({"id": name, "kind": "Battery",
                    "attributes": {"capacity_mAh": float(capacity), "voltage_V": voltage,
                                   "max_discharge_C": float(c_rating), "mass_g": mass}})
    return out


def main():
    rng = random.Random(20221123)
    taken = {rec["id"] for rec in FIXED}
    kinds = {"Motor": [], "Propeller": [], "ESC": [], "Battery": []}
    for rec in FIXED:
        kinds[rec["kind"]].append(rec)
    kinds["Motor"] += motors(rng, N_MOTORS - 1, taken)
    kinds["Propeller"] += props(rng, N_PROPS - 1, taken)
    kinds["ESC"] += escs(rng, N_ESCS - 1, taken)
    kinds["Battery"] += batteries(rng, N_BATTERIES - 1, taken)
    records = sorted((r for rs in kinds.values() for r in rs), key=lambda r: r["id"])
    assert len(records) == COMPONENTS, len(records)
    out = sys.stdout
    out.write(json.dumps({"dimensions": {"key_classes": KEY_CLASSES, "value_classes": VALUE_CLASSES,
                                         "attribute_slots": ATTRIBUTE_SLOTS}}, separators=(",", ":")) + "\n")
    for rec in records:
        rec = {"id": rec["id"], "kind": rec["kind"], "attributes": dict(sorted(rec["attributes"].items()))}
        out.write(json.dumps(rec, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main()
