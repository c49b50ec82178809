#include "uavdesign/design.hpp"

#include <charconv>
#include <cmath>

#include "uavdesign/catalog.hpp"
#include "uavdesign/error.hpp"

namespace uav {

namespace {

constexpr std::array<std::string_view, kParamKeyCount> kKeyNames = {
    "node_type", "armLength", "motorType", "propType", "escType",  "offset",      "angle",
    "x1_offset", "z1_offset", "span_mm",   "chord_mm", "angle_deg", "batteryType",
};

constexpr std::array kPropArmLayout = {
    ParamKey::ArmLength, ParamKey::MotorType, ParamKey::PropType, ParamKey::EscType, ParamKey::Offset,
    ParamKey::Offset,    ParamKey::Angle,     ParamKey::X1Offset, ParamKey::Z1Offset,
};

constexpr std::array kWingLayout = {ParamKey::SpanMm, ParamKey::ChordMm, ParamKey::AngleDeg, ParamKey::Offset};

constexpr std::string_view kHubPrefix = "ConnectedHub";
constexpr std::string_view kSymSuffix = "_Sym";

std::string join_path(const std::string& parent, std::size_t index) {
  return parent + "/" + std::to_string(index);
}

// Strictly positive numeric keys; the remaining numeric keys only need to be finite.
bool requires_positive(ParamKey key) {
  return key == ParamKey::ArmLength || key == ParamKey::SpanMm || key == ParamKey::ChordMm;
}

class Validator {
 public:
  explicit Validator(const Catalog* catalog) : catalog_(catalog) {}

  ValidationReport run(const DesignNode& root) {
    visit(root, "root", true);
    if (rotor_count_ > 0 && !root_has_battery_) {
      add("root", rule::kBatteryRequired, "design has propellers but no batteryType");
    }
    report_.valid = report_.violations.empty();
    return std::move(report_);
  }

 private:
  void add(const std::string& path, const char* rule, std::string message) {
    report_.violations.push_back({path, rule, std::move(message)});
  }

  void visit(const DesignNode& node, const std::string& path, bool is_root) {
    const NodeKind& kind = node.kind;
    if (kind.type == NodeType::Hub) {
      if (kind.arity < kMinHubArity || kind.arity > kMaxHubArity) {
        add(path, rule::kHubArity, "hub arity " + std::to_string(kind.arity) + " outside [2, 13]");
      }
      if (kind.symmetric && node.children.size() != 1) {
        add(path, rule::kSymmetryChildCount,
            "symmetric hub must define exactly one child, found " + std::to_string(node.children.size()));
      }
      if (!kind.symmetric && static_cast<int>(node.children.size()) != kind.arity) {
        add(path, rule::kHubChildCount,
            "hub of arity " + std::to_string(kind.arity) + " has " + std::to_string(node.children.size()) +
                " children");
      }
    } else if (!node.children.empty()) {
      add(path, rule::kLeafChildren, literal_of(kind) + " cannot have children");
    }
    if (kind.type == NodeType::Fuselage && !is_root) {
      add(path, rule::kFuselagePosition, "Fuselage may only appear as the root");
    }
    if (is_root && (kind.type == NodeType::PropArm || kind.type == NodeType::Wing)) {
      add(path, rule::kRootKind, literal_of(kind) + " cannot be the root; expected a hub or Fuselage");
    }
    if (kind.type == NodeType::PropArm) {
      ++rotor_count_;  // presence only; symmetry multiplicity is irrelevant here
    }

    check_params(node, path, is_root);

    for (std::size_t i = 0; i < node.children.size(); ++i) {
      visit(node.children[i], join_path(path, i), false);
    }
  }

  static std::string literal_of(const NodeKind& kind) { return kind.literal(); }

  void check_params(const DesignNode& node, const std::string& path, bool is_root) {
    auto layout = param_layout(node.kind.type);
    std::size_t n = node.params.size();
    std::size_t expected = layout.size();
    bool trailing_battery = false;
    if (n == expected + 1 && node.params.back().key == ParamKey::BatteryType) {
      trailing_battery = true;
      if (!is_root) {
        add(path, rule::kBatteryPosition, "batteryType is only permitted on the root node");
      } else {
        root_has_battery_ = true;
      }
    }
    std::size_t leading = trailing_battery ? n - 1 : n;
    if (leading != expected) {
      add(path, rule::kParamOrder,
          literal_of(node.kind) + " expects " + std::to_string(expected) + " parameters, found " +
              std::to_string(leading));
    }
    for (std::size_t i = 0; i < std::min(leading, expected); ++i) {
      if (node.params[i].key != layout[i]) {
        add(path, rule::kParamOrder,
            "parameter " + std::to_string(i) + " is " + std::string(key_name(node.params[i].key)) + ", expected " +
                std::string(key_name(layout[i])));
      }
    }
    for (const Param& p : node.params) {
      if (p.key == ParamKey::NodeType) {
        add(path, rule::kParamOrder, "node_type is implied by the node kind and cannot be a parameter");
        continue;
      }
      check_value(p, path);
    }
  }

  void check_value(const Param& p, const std::string& path) {
    const bool categorical = is_categorical(p.key);
    if (categorical != std::holds_alternative<std::string>(p.value)) {
      add(path, rule::kParamType,
          std::string(key_name(p.key)) + (categorical ? " requires a categorical value" : " requires a numeric value"));
      return;
    }
    if (!categorical) {
      double v = std::get<double>(p.value);
      if (!std::isfinite(v)) {
        add(path, rule::kParamRange, std::string(key_name(p.key)) + " is not finite");
      } else if (requires_positive(p.key) && v <= 0.0) {
        add(path, rule::kParamRange, std::string(key_name(p.key)) + " must be > 0");
      }
      return;
    }
    if (catalog_ == nullptr) return;
    const auto& id = std::get<std::string>(p.value);
    const ComponentRecord* rec = catalog_->find(id);
    if (rec == nullptr) {
      add(path, rule::kCatalogResolution, std::string(key_name(p.key)) + " '" + id + "' not found in catalog");
      return;
    }
    auto want = referenced_kind(p.key);
    if (want && rec->kind != *want) {
      add(path, rule::kCatalogKind,
          std::string(key_name(p.key)) + " '" + id + "' is a " + std::string(kind_name(rec->kind)) + ", expected " +
              std::string(kind_name(*want)));
    }
  }

  const Catalog* catalog_;
  ValidationReport report_;
  int rotor_count_ = 0;
  bool root_has_battery_ = false;
};

void expand_into(const DesignNode& node, DesignNode& out) {
  out.kind = node.kind;
  out.params = node.params;
  out.children.clear();
  if (node.kind.type == NodeType::Hub && node.kind.symmetric) {
    out.kind.symmetric = false;
    DesignNode child;
    expand_into(node.children.front(), child);
    out.children.assign(static_cast<std::size_t>(node.kind.arity), child);
    return;
  }
  out.children.resize(node.children.size());
  for (std::size_t i = 0; i < node.children.size(); ++i) expand_into(node.children[i], out.children[i]);
}

void count_into(const DesignNode& node, long multiplier, ComponentCounts& c) {
  switch (node.kind.type) {
    case NodeType::PropArm:
      c.propellers += static_cast<int>(multiplier);
      c.motors += static_cast<int>(multiplier);
      break;
    case NodeType::Wing:
      c.wings += static_cast<int>(multiplier);
      break;
    case NodeType::Fuselage:
      c.fuselages += static_cast<int>(multiplier);
      break;
    case NodeType::Hub:
      break;
  }
  for (const Param& p : node.params) {
    if (p.key == ParamKey::BatteryType) c.batteries += static_cast<int>(multiplier);
  }
  long child_mult = multiplier * ((node.kind.type == NodeType::Hub && node.kind.symmetric) ? node.kind.arity : 1);
  for (const DesignNode& child : node.children) count_into(child, child_mult, c);
}

void require_valid_structure(const DesignNode& tree, const char* what) {
  ValidationReport report = validate_structure(tree);
  if (!report.valid) {
    const Violation& v = report.violations.front();
    throw Error(ErrorCode::InvalidTree,
                std::string(what) + ": invalid tree at " + v.path + " [" + v.rule + "]: " + v.message);
  }
}

}  // namespace

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidTree: return "invalid-tree";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::DuplicateId: return "duplicate-id";
    case ErrorCode::NonFiniteAttribute: return "non-finite-attribute";
    case ErrorCode::UnknownId: return "unknown-id";
    case ErrorCode::UnexpectedKey: return "unexpected-key";
    case ErrorCode::TruncatedSequence: return "truncated-sequence";
    case ErrorCode::UnknownValue: return "unknown-value";
    case ErrorCode::PadTooSmall: return "pad-too-small";
    case ErrorCode::DimensionMismatch: return "dimension-mismatch";
    case ErrorCode::EmptyMask: return "empty-mask";
    case ErrorCode::NonFiniteLoss: return "non-finite-loss";
    case ErrorCode::MagicMismatch: return "magic-mismatch";
    case ErrorCode::VersionMismatch: return "version-mismatch";
    case ErrorCode::HashMismatch: return "hash-mismatch";
    case ErrorCode::Truncation: return "truncation";
    case ErrorCode::ChecksumMismatch: return "checksum-mismatch";
    case ErrorCode::RecallUnattainable: return "recall-unattainable";
    case ErrorCode::DegenerateDataset: return "degenerate-dataset";
    case ErrorCode::NoPropellers: return "no-propellers";
    case ErrorCode::Config: return "config";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

std::string NodeKind::literal() const {
  switch (type) {
    case NodeType::Hub: {
      std::string s(kHubPrefix);
      s += std::to_string(arity);
      if (symmetric) s += kSymSuffix;
      return s;
    }
    case NodeType::PropArm: return "PropArm";
    case NodeType::Wing: return "Wing";
    case NodeType::Fuselage: return "Fuselage";
  }
  return {};
}

std::optional<NodeKind> NodeKind::from_literal(std::string_view text) {
  if (text == "PropArm") return prop_arm();
  if (text == "Wing") return wing();
  if (text == "Fuselage") return fuselage();
  if (!text.starts_with(kHubPrefix)) return std::nullopt;
  text.remove_prefix(kHubPrefix.size());
  bool sym = false;
  if (text.ends_with(kSymSuffix)) {
    sym = true;
    text.remove_suffix(kSymSuffix.size());
  }
  if (text.empty() || text.front() == '0') return std::nullopt;
  int arity = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), arity);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  if (arity < kMinHubArity || arity > kMaxHubArity) return std::nullopt;
  return hub(arity, sym);
}

std::vector<std::string> node_type_literals() {
  std::vector<std::string> out;
  for (int k = kMinHubArity; k <= kMaxHubArity; ++k) {
    out.push_back(NodeKind::hub(k, false).literal());
    out.push_back(NodeKind::hub(k, true).literal());
  }
  out.push_back(NodeKind::prop_arm().literal());
  out.push_back(NodeKind::wing().literal());
  out.push_back(NodeKind::fuselage().literal());
  return out;
}

std::string_view key_name(ParamKey key) { return kKeyNames[static_cast<std::size_t>(key)]; }

std::optional<ParamKey> key_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kKeyNames.size(); ++i) {
    if (kKeyNames[i] == name) return static_cast<ParamKey>(i);
  }
  return std::nullopt;
}

bool is_categorical(ParamKey key) {
  switch (key) {
    case ParamKey::NodeType:
    case ParamKey::MotorType:
    case ParamKey::PropType:
    case ParamKey::EscType:
    case ParamKey::BatteryType:
      return true;
    default:
      return false;
  }
}

std::optional<ComponentKind> referenced_kind(ParamKey key) {
  switch (key) {
    case ParamKey::MotorType: return ComponentKind::Motor;
    case ParamKey::PropType: return ComponentKind::Propeller;
    case ParamKey::EscType: return ComponentKind::Esc;
    case ParamKey::BatteryType: return ComponentKind::Battery;
    default: return std::nullopt;
  }
}

const ParamValue* DesignNode::find(ParamKey key) const {
  for (const Param& p : params) {
    if (p.key == key) return &p.value;
  }
  return nullptr;
}

double DesignNode::number(ParamKey key) const {
  const ParamValue* v = find(key);
  if (v == nullptr || !std::holds_alternative<double>(*v)) {
    throw Error(ErrorCode::InvalidTree, kind.literal() + " has no numeric " + std::string(key_name(key)));
  }
  return std::get<double>(*v);
}

const std::string& DesignNode::symbol(ParamKey key) const {
  const ParamValue* v = find(key);
  if (v == nullptr || !std::holds_alternative<std::string>(*v)) {
    throw Error(ErrorCode::InvalidTree, kind.literal() + " has no categorical " + std::string(key_name(key)));
  }
  return std::get<std::string>(*v);
}

std::span<const ParamKey> param_layout(NodeType type) {
  switch (type) {
    case NodeType::PropArm: return kPropArmLayout;
    case NodeType::Wing: return kWingLayout;
    default: return {};
  }
}

ValidationReport validate_structure(const DesignNode& tree) { return Validator(nullptr).run(tree); }

ValidationReport validate_design(const DesignNode& tree, const Catalog& catalog) {
  return Validator(&catalog).run(tree);
}

DesignNode expand_symmetry(const DesignNode& tree) {
  require_valid_structure(tree, "expand_symmetry");
  DesignNode out;
  expand_into(tree, out);
  return out;
}

ComponentCounts count_components(const DesignNode& tree) {
  require_valid_structure(tree, "count_components");
  ComponentCounts counts;
  count_into(tree, 1, counts);
  return counts;
}

std::size_t sequence_length(const DesignNode& tree) {
  std::size_t n = 1 + tree.params.size();
  for (const DesignNode& child : tree.children) n += sequence_length(child);
  return n;
}

DesignNode reference_quadcopter() {
  DesignNode arm{NodeKind::prop_arm(),
                 {
                     {ParamKey::ArmLength, 210.88760375976562},
                     {ParamKey::MotorType, std::string("t_motor_MN2212KV780")},
                     {ParamKey::PropType, std::string("apc_propellers_12x5")},
                     {ParamKey::EscType, std::string("t_motor_T_80A")},
                     {ParamKey::Offset, -3.2862548828125},
                     {ParamKey::Offset, 4.2498626708984375},
                     {ParamKey::Angle, 0.0},
                     {ParamKey::X1Offset, 4.219192504882812},
                     {ParamKey::Z1Offset, 3.637290954589844},
                 },
                 {}};
  return DesignNode{NodeKind::hub(4, true),
                    {{ParamKey::BatteryType, std::string("TurnigyGraphene1400mAh3S75C")}},
                    {std::move(arm)}};
}

}  // namespace uav
