#pragma once

// Question-specific scene graph: entity nodes detected in the image, the six
// fixed view nodes (one per cube face), and their attribute, inter-entity,
// entity-view and inter-view relations. The textual form is what the
// answering prompt receives.

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "free360/sphere_geom.hpp"

namespace free360::graph {

/// Separator between the parts of a relation line.
inline constexpr std::string_view kArrow = " \xE2\x86\x92 ";  // " → "
/// The arrow glyph itself; forbidden inside labels, attributes and predicates.
inline constexpr std::string_view kArrowGlyph = "\xE2\x86\x92";

inline constexpr std::string_view kNodesHeader = "List of nodes:";
inline constexpr std::string_view kAttributesHeader = "Attribute relations:";
inline constexpr std::string_view kSpatialHeader = "Spatial relations:";
inline constexpr std::string_view kInPredicate = "in";

struct ViewNode {
  geom::Face face;
  std::string_view label;
  std::string_view attribute;
};

/// View nodes in their fixed listing order.
const std::array<ViewNode, 6>& view_nodes();
const ViewNode& view_node(geom::Face face);

struct InterViewRelation {
  geom::Face source;
  std::string_view predicate;
  geom::Face target;
  bool operator==(const InterViewRelation&) const = default;
};

enum class InterViewTable {
  OppositeOnly,  // front/behind, left/right, top/bottom
  Full,          // opposite pairs plus ring and vertical adjacency
};

const std::vector<InterViewRelation>& inter_view_relations(InterViewTable table);

using EntityId = std::size_t;

struct EntityNode {
  std::string label;
  int index = 1;  // 1-based among entities sharing the label
  std::string attribute;
  geom::PixelBox box_cmp;
  std::optional<geom::PixelBox> box_erp;
  std::optional<geom::Face> view;

  std::string display_name() const { return label + " " + std::to_string(index); }
};

enum class RelationKind { Attribute, InterEntity, EntityView, InterView };

struct NodeRef {
  enum class Kind { Entity, View } kind = Kind::Entity;
  std::size_t index = 0;  // EntityId or Face value
  bool operator==(const NodeRef&) const = default;
};

/// Flattened relation as it appears in the serialized text. For attribute
/// relations `predicate` is empty and `target_text` holds the attribute.
struct Relation {
  RelationKind kind;
  NodeRef source;
  std::string predicate;
  std::optional<NodeRef> target;
  std::string target_text;
};

/// Replaces the arrow glyph with "->" and line breaks with spaces, then trims.
std::string sanitize_text(std::string_view text);

class SceneGraph {
 public:
  /// Graph with the six view nodes, the chosen inter-view relations, and no
  /// entities.
  explicit SceneGraph(InterViewTable table = InterViewTable::Full);

  /// Appends an entity; index = 1 + number of earlier entities with the same
  /// label. Throws ValidationError on an empty label, SanitizationError on
  /// reserved characters.
  EntityId add_entity(std::string_view label, const geom::PixelBox& box_cmp);

  void set_attribute(EntityId id, std::string_view attribute);
  void set_entity_erp_box(EntityId id, const geom::PixelBox& box_erp);
  /// Throws ValidationError for unknown ids, self relations, or a repeated
  /// ordered pair.
  void add_inter_entity_relation(EntityId source, std::string_view predicate, EntityId target);
  /// Predicate is always "in". Throws ValidationError if the entity already
  /// has a view.
  void add_entity_view_relation(EntityId id, geom::Face face);

  const std::vector<EntityNode>& entities() const { return entities_; }
  const EntityNode& entity(EntityId id) const;
  std::size_t entity_count() const { return entities_.size(); }
  const std::map<std::pair<EntityId, EntityId>, std::string>& inter_entity() const {
    return inter_entity_;
  }
  const std::vector<InterViewRelation>& inter_view() const { return inter_view_; }
  InterViewTable inter_view_table() const { return table_; }

  /// Relations in serialization order: attributes (entities then views),
  /// entity-view, inter-entity, inter-view.
  std::vector<Relation> relations() const;

  /// Equality of everything the textual form carries (labels, indices,
  /// attributes, relations); boxes are ignored.
  bool same_structure(const SceneGraph& other) const;

  std::string serialize() const;
  nlohmann::json to_json() const;

 private:
  friend SceneGraph parse(std::string_view text);

  void check_entity(EntityId id) const;

  InterViewTable table_;
  std::vector<EntityNode> entities_;
  std::map<std::pair<EntityId, EntityId>, std::string> inter_entity_;
  std::vector<InterViewRelation> inter_view_;
};

/// Rebuilds a graph from serialize() output. Throws ParseError with the
/// 1-based line number on malformed input.
SceneGraph parse(std::string_view text);

}  // namespace free360::graph
