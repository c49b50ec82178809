#pragma once
/*
  Design grammar: typed design trees, symmetry expansion, and structural
  validation.

  Grammar (reconstructed closure over the published examples):
    root     := Hub | Fuselage, optionally followed by a trailing batteryType
    Hub      := ConnectedHub<k> with k children, or ConnectedHub<k>_Sym with a
                single child that is replicated k times when compiled
    child    := Hub | PropArm | Wing
    PropArm  := armLength motorType propType escType offset offset angle
                x1_offset z1_offset
    Wing     := span_mm chord_mm angle_deg offset
    Fuselage := (no params, no children; root only)

  Lengths are millimetres, angles degrees.
*/

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace uav {

class Catalog;

inline constexpr int kMinHubArity = 2;
inline constexpr int kMaxHubArity = 13;

enum class NodeType : std::uint8_t { Hub, PropArm, Wing, Fuselage };

struct NodeKind {
  NodeType type = NodeType::Fuselage;
  int arity = 0;  // hubs only
  bool symmetric = false;

  static NodeKind hub(int arity, bool symmetric) { return {NodeType::Hub, arity, symmetric}; }
  static NodeKind prop_arm() { return {NodeType::PropArm, 0, false}; }
  static NodeKind wing() { return {NodeType::Wing, 0, false}; }
  static NodeKind fuselage() { return {NodeType::Fuselage, 0, false}; }

  // "ConnectedHub4_Sym", "PropArm", ...
  std::string literal() const;
  static std::optional<NodeKind> from_literal(std::string_view text);

  bool operator==(const NodeKind&) const = default;
};

// Every literal a node_type token can carry, in vocabulary order.
std::vector<std::string> node_type_literals();

enum class ParamKey : std::uint8_t {
  NodeType,
  ArmLength,
  MotorType,
  PropType,
  EscType,
  Offset,
  Angle,
  X1Offset,
  Z1Offset,
  SpanMm,
  ChordMm,
  AngleDeg,
  BatteryType,
};

inline constexpr int kParamKeyCount = 13;

std::string_view key_name(ParamKey key);
std::optional<ParamKey> key_from_name(std::string_view name);

// True for keys whose values are catalog ids or node literals.
bool is_categorical(ParamKey key);

enum class ComponentKind : std::uint8_t { Motor, Propeller, Esc, Battery };

// Component kind a reference key must resolve to; nullopt for non-reference keys.
std::optional<ComponentKind> referenced_kind(ParamKey key);

// Categorical values are stored by symbol; numeric values as float64.
using ParamValue = std::variant<std::string, double>;

struct Param {
  ParamKey key;
  ParamValue value;

  bool operator==(const Param&) const = default;
};

struct DesignNode {
  NodeKind kind;
  std::vector<Param> params;
  std::vector<DesignNode> children;

  bool operator==(const DesignNode&) const = default;

  const ParamValue* find(ParamKey key) const;
  double number(ParamKey key) const;             // first numeric value with key
  const std::string& symbol(ParamKey key) const;  // first categorical value with key
};

// Leading parameter layout per node type, in serialization order.
std::span<const ParamKey> param_layout(NodeType type);

struct Violation {
  std::string path;  // "root", "root/0", "root/0/3", ...
  std::string rule;
  std::string message;

  bool operator==(const Violation&) const = default;
};

struct ValidationReport {
  bool valid = true;
  std::vector<Violation> violations;
};

namespace rule {
inline constexpr const char* kHubArity = "hub-arity";
inline constexpr const char* kSymmetryChildCount = "symmetry-child-count";
inline constexpr const char* kHubChildCount = "hub-child-count";
inline constexpr const char* kLeafChildren = "leaf-children";
inline constexpr const char* kFuselagePosition = "fuselage-position";
inline constexpr const char* kRootKind = "root-kind";
inline constexpr const char* kParamOrder = "param-order";
inline constexpr const char* kParamType = "param-type";
inline constexpr const char* kParamRange = "param-range";
inline constexpr const char* kBatteryPosition = "battery-position";
inline constexpr const char* kBatteryRequired = "battery-required";
inline constexpr const char* kCatalogResolution = "catalog-resolution";
inline constexpr const char* kCatalogKind = "catalog-kind";
}  // namespace rule

// Catalog-independent rules only (arity, symmetry, ordering, ranges).
ValidationReport validate_structure(const DesignNode& tree);

// Full validation: structural rules plus catalog resolution of every reference.
ValidationReport validate_design(const DesignNode& tree, const Catalog& catalog);

// Replaces every symmetric hub by a plain hub with `arity` deep copies of its
// child. Throws InvalidTree on structurally invalid input.
DesignNode expand_symmetry(const DesignNode& tree);

struct ComponentCounts {
  int propellers = 0;
  int wings = 0;
  int motors = 0;
  int batteries = 0;
  int fuselages = 0;

  bool operator==(const ComponentCounts&) const = default;
};

ComponentCounts count_components(const DesignNode& tree);

// Token count of the preorder serialization, without building it.
std::size_t sequence_length(const DesignNode& tree);

// The symmetric quadcopter used throughout as the reference design.
DesignNode reference_quadcopter();

}  // namespace uav
