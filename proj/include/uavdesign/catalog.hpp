#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "uavdesign/design.hpp"

namespace uav {

using ContentHash = std::array<std::uint8_t, 32>;

std::string_view kind_name(ComponentKind kind);
std::optional<ComponentKind> kind_from_name(std::string_view name);

// Physical attribute names each component kind must carry.
std::span<const std::string_view> required_attributes(ComponentKind kind);

struct ComponentRecord {
  std::string id;
  ComponentKind kind = ComponentKind::Motor;
  std::map<std::string, double> attributes;

  double attr(std::string_view name) const;

  bool operator==(const ComponentRecord&) const = default;
};

// Configured embedding dimensions. Zero means "natural size" (no padding).
struct CatalogDimensions {
  int key_classes = 0;
  int value_classes = 0;
  int attribute_slots = 0;

  bool operator==(const CatalogDimensions&) const = default;
};

// Immutable component library plus the vocabularies derived from it.
//
// Value vocabulary layout: [<float>, node literals..., component ids sorted,
// reserved padding]. Attribute schema: "<Kind>.<attr>" slots grouped by kind,
// attribute names sorted, followed by reserved padding slots.
class Catalog {
 public:
  static constexpr std::string_view kNumericValue = "<float>";

  Catalog() = default;
  Catalog(std::vector<ComponentRecord> records, CatalogDimensions dims = {});

  // Line-delimited JSON. An optional first line {"dimensions": {...}} pins the
  // padded vocabulary sizes.
  static Catalog load(std::istream& in);
  static Catalog load_file(const std::string& path);
  void save(std::ostream& out) const;

  bool empty() const { return records_.empty(); }
  std::span<const ComponentRecord> records() const { return records_; }
  const ComponentRecord* find(std::string_view id) const;
  const ComponentRecord& at(std::string_view id) const;  // throws UnknownId
  std::vector<const ComponentRecord*> of_kind(ComponentKind kind) const;

  int key_classes() const { return key_classes_; }
  std::span<const std::string> value_vocab() const { return value_vocab_; }
  std::optional<int> value_index(std::string_view value) const;
  std::span<const std::string> attribute_schema() const { return attribute_schema_; }
  CatalogDimensions dimensions() const { return dims_; }

  // Min-max normalized attributes at their global slots; zero elsewhere.
  std::vector<double> attribute_vector(std::string_view id) const;
  std::span<const int> attribute_slots_of(ComponentKind kind) const;

  const ContentHash& content_hash() const { return hash_; }

  bool operator==(const Catalog& other) const { return records_ == other.records_ && dims_ == other.dims_; }

 private:
  void build();

  std::vector<ComponentRecord> records_;  // sorted by id
  CatalogDimensions dims_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unordered_map<std::string, int> value_index_;
  std::vector<std::string> value_vocab_;
  std::vector<std::string> attribute_schema_;
  std::array<std::vector<int>, 4> kind_slots_;
  std::vector<double> slot_min_;
  std::vector<double> slot_max_;
  std::unordered_map<std::string, std::vector<double>> normalized_;
  int key_classes_ = kParamKeyCount;
  ContentHash hash_{};
};

std::string hash_hex(const ContentHash& hash);

}  // namespace uav
