#include "free360/scene_graph.hpp"

#include <algorithm>
#include <charconv>
#include <unordered_map>

#include "free360/errors.hpp"

namespace free360::graph {

using geom::Face;

namespace {

const std::array<ViewNode, 6> kViews = {{
    {Face::Left, "left view", "Left side of the scene and to the left of the viewer."},
    {Face::Right, "right view", "Right side of the scene and to the right of the viewer."},
    {Face::Front, "front view", "Front of the scene and front of the viewer."},
    {Face::Back, "behind view", "Back of the scene and behind the viewer."},
    {Face::Top, "top view", "Top of the scene and above the viewer."},
    {Face::Bottom, "bottom view", "Bottom of the scene and below the viewer."},
}};

const std::vector<InterViewRelation> kOpposite = {
    {Face::Front, "opposite", Face::Back},
    {Face::Left, "opposite", Face::Right},
    {Face::Top, "opposite", Face::Bottom},
};

const std::vector<InterViewRelation> kFull = [] {
  std::vector<InterViewRelation> t = kOpposite;
  // Horizontal ring, turning right from the left view.
  t.push_back({Face::Left, "left of", Face::Front});
  t.push_back({Face::Front, "left of", Face::Right});
  t.push_back({Face::Right, "left of", Face::Back});
  t.push_back({Face::Back, "left of", Face::Left});
  t.push_back({Face::Top, "above", Face::Front});
  t.push_back({Face::Bottom, "below", Face::Front});
  return t;
}();

bool has_reserved(std::string_view s) {
  return s.find(kArrowGlyph) != std::string_view::npos ||
         s.find_first_of("\r\n") != std::string_view::npos;
}

void require_clean(std::string_view what, std::string_view s) {
  if (has_reserved(s)) {
    throw SanitizationError(std::string(what) +
                            " contains the arrow token or a line break: \"" + std::string(s) +
                            "\"");
  }
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      if (pos < text.size()) lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

std::vector<std::string_view> split_arrow(std::string_view line) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t at = line.find(kArrow, pos);
    if (at == std::string_view::npos) {
      parts.push_back(line.substr(pos));
      return parts;
    }
    parts.push_back(line.substr(pos, at - pos));
    pos = at + kArrow.size();
  }
}

const char* kind_name(RelationKind k) {
  switch (k) {
    case RelationKind::Attribute: return "attribute";
    case RelationKind::InterEntity: return "inter_entity";
    case RelationKind::EntityView: return "entity_view";
    case RelationKind::InterView: return "inter_view";
  }
  return "?";
}

}  // namespace

const std::array<ViewNode, 6>& view_nodes() { return kViews; }

const ViewNode& view_node(Face face) {
  for (const ViewNode& v : kViews)
    if (v.face == face) return v;
  throw ValidationError("unknown face");
}

const std::vector<InterViewRelation>& inter_view_relations(InterViewTable table) {
  return table == InterViewTable::Full ? kFull : kOpposite;
}

std::string sanitize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    if (text.substr(i, kArrowGlyph.size()) == kArrowGlyph) {
      out += "->";
      i += kArrowGlyph.size();
    } else if (text[i] == '\n' || text[i] == '\r') {
      out += ' ';
      ++i;
    } else {
      out += text[i++];
    }
  }
  const auto first = out.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = out.find_last_not_of(" \t");
  return out.substr(first, last - first + 1);
}

SceneGraph::SceneGraph(InterViewTable table)
    : table_(table), inter_view_(inter_view_relations(table)) {}

void SceneGraph::check_entity(EntityId id) const {
  if (id >= entities_.size()) {
    throw ValidationError("unknown entity id " + std::to_string(id));
  }
}

const EntityNode& SceneGraph::entity(EntityId id) const {
  check_entity(id);
  return entities_[id];
}

EntityId SceneGraph::add_entity(std::string_view label, const geom::PixelBox& box_cmp) {
  if (label.empty()) throw ValidationError("entity label must not be empty");
  require_clean("entity label", label);
  const auto same = std::count_if(entities_.begin(), entities_.end(),
                                  [&](const EntityNode& e) { return e.label == label; });
  EntityNode node;
  node.label = std::string(label);
  node.index = static_cast<int>(same) + 1;
  node.box_cmp = box_cmp.ordered();
  entities_.push_back(std::move(node));
  return entities_.size() - 1;
}

void SceneGraph::set_attribute(EntityId id, std::string_view attribute) {
  check_entity(id);
  require_clean("attribute", attribute);
  entities_[id].attribute = std::string(attribute);
}

void SceneGraph::set_entity_erp_box(EntityId id, const geom::PixelBox& box_erp) {
  check_entity(id);
  entities_[id].box_erp = box_erp;
}

void SceneGraph::add_inter_entity_relation(EntityId source, std::string_view predicate,
                                           EntityId target) {
  check_entity(source);
  check_entity(target);
  if (source == target) throw ValidationError("inter-entity relation needs two entities");
  if (predicate.empty()) throw ValidationError("relation predicate must not be empty");
  require_clean("relation predicate", predicate);
  const auto [it, inserted] = inter_entity_.emplace(std::pair{source, target}, predicate);
  if (!inserted) {
    throw ValidationError("duplicate inter-entity relation " + entities_[source].display_name() +
                          " -> " + entities_[target].display_name());
  }
}

void SceneGraph::add_entity_view_relation(EntityId id, Face face) {
  check_entity(id);
  if (entities_[id].view) {
    throw ValidationError(entities_[id].display_name() + " already has a view relation");
  }
  entities_[id].view = face;
}

std::vector<Relation> SceneGraph::relations() const {
  using Kind = NodeRef::Kind;
  std::vector<Relation> out;
  for (EntityId i = 0; i < entities_.size(); ++i) {
    out.push_back({RelationKind::Attribute, {Kind::Entity, i}, "", std::nullopt,
                   entities_[i].attribute});
  }
  for (const ViewNode& v : kViews) {
    out.push_back({RelationKind::Attribute, {Kind::View, std::size_t(v.face)}, "", std::nullopt,
                   std::string(v.attribute)});
  }
  for (EntityId i = 0; i < entities_.size(); ++i) {
    if (!entities_[i].view) continue;
    out.push_back({RelationKind::EntityView, {Kind::Entity, i}, std::string(kInPredicate),
                   NodeRef{Kind::View, std::size_t(*entities_[i].view)}, ""});
  }
  for (const auto& [pair, pred] : inter_entity_) {
    out.push_back({RelationKind::InterEntity, {Kind::Entity, pair.first}, pred,
                   NodeRef{Kind::Entity, pair.second}, ""});
  }
  for (const InterViewRelation& r : inter_view_) {
    out.push_back({RelationKind::InterView, {Kind::View, std::size_t(r.source)},
                   std::string(r.predicate), NodeRef{Kind::View, std::size_t(r.target)}, ""});
  }
  return out;
}

bool SceneGraph::same_structure(const SceneGraph& other) const {
  if (entities_.size() != other.entities_.size()) return false;
  for (std::size_t i = 0; i < entities_.size(); ++i) {
    const EntityNode& a = entities_[i];
    const EntityNode& b = other.entities_[i];
    if (a.label != b.label || a.index != b.index || a.attribute != b.attribute ||
        a.view != b.view) {
      return false;
    }
  }
  return inter_entity_ == other.inter_entity_ && inter_view_ == other.inter_view_;
}

std::string SceneGraph::serialize() const {
  const auto name = [this](const NodeRef& n) -> std::string {
    if (n.kind == NodeRef::Kind::Entity) return entities_[n.index].display_name();
    return std::string(view_node(static_cast<Face>(n.index)).label);
  };
  std::string out;
  out += kNodesHeader;
  out += '\n';
  for (const EntityNode& e : entities_) out += e.display_name() + "\n";
  for (const ViewNode& v : kViews) (out += v.label) += '\n';

  const std::vector<Relation> rels = relations();
  out += kAttributesHeader;
  out += '\n';
  for (const Relation& r : rels) {
    if (r.kind != RelationKind::Attribute) continue;
    ((out += name(r.source)) += kArrow) += r.target_text;
    out += '\n';
  }
  out += kSpatialHeader;
  out += '\n';
  for (const Relation& r : rels) {
    if (r.kind == RelationKind::Attribute) continue;
    ((((out += name(r.source)) += kArrow) += r.predicate) += kArrow) += name(*r.target);
    out += '\n';
  }
  return out;
}

nlohmann::json SceneGraph::to_json() const {
  using nlohmann::json;
  const auto box = [](const geom::PixelBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); };
  json entities = json::array();
  for (std::size_t i = 0; i < entities_.size(); ++i) {
    const EntityNode& e = entities_[i];
    json j{{"id", i},
           {"label", e.label},
           {"index", e.index},
           {"display_name", e.display_name()},
           {"attribute", e.attribute},
           {"box_cmp", box(e.box_cmp)}};
    j["box_erp"] = e.box_erp ? box(*e.box_erp) : json(nullptr);
    j["view"] = e.view ? json(view_node(*e.view).label) : json(nullptr);
    entities.push_back(std::move(j));
  }
  json views = json::array();
  for (const ViewNode& v : kViews) views.push_back({{"label", v.label}, {"attribute", v.attribute}});
  const auto name = [this](const NodeRef& n) -> std::string {
    if (n.kind == NodeRef::Kind::Entity) return entities_[n.index].display_name();
    return std::string(view_node(static_cast<Face>(n.index)).label);
  };
  json relations = json::array();
  for (const Relation& r : this->relations()) {
    json j{{"kind", kind_name(r.kind)}, {"source", name(r.source)}};
    if (r.kind == RelationKind::Attribute) {
      j["target"] = r.target_text;
    } else {
      j["predicate"] = r.predicate;
      j["target"] = name(*r.target);
    }
    relations.push_back(std::move(j));
  }
  return json{{"entities", entities}, {"views", views}, {"relations", relations}};
}

SceneGraph parse(std::string_view text) {
  const std::vector<std::string_view> lines = split_lines(text);
  std::size_t ln = 0;  // index into lines; reported 1-based
  const auto fail = [&](std::size_t at, const std::string& what) -> ParseError {
    return ParseError(at + 1, what);
  };
  const auto expect_header = [&](std::string_view header) {
    if (ln >= lines.size()) throw fail(ln, "missing \"" + std::string(header) + "\" header");
    if (lines[ln] != header) {
      throw fail(ln, "expected \"" + std::string(header) + "\", got \"" + std::string(lines[ln]) +
                         "\"");
    }
    ++ln;
  };

  SceneGraph g(InterViewTable::OppositeOnly);
  g.inter_view_.clear();
  std::unordered_map<std::string, EntityId> by_name;
  std::unordered_map<std::string, Face> view_by_label;
  for (const ViewNode& v : kViews) view_by_label.emplace(std::string(v.label), v.face);

  expect_header(kNodesHeader);
  std::vector<std::string_view> node_lines;
  while (ln < lines.size() && lines[ln] != kAttributesHeader) {
    if (lines[ln] == kSpatialHeader) throw fail(ln, "missing \"Attribute relations:\" header");
    node_lines.push_back(lines[ln++]);
  }
  if (node_lines.size() < kViews.size()) throw fail(ln, "fewer than six view nodes listed");
  const std::size_t entity_count = node_lines.size() - kViews.size();
  const std::size_t first_node_line = 1;
  for (std::size_t i = 0; i < entity_count; ++i) {
    const std::string_view line = node_lines[i];
    const std::size_t sp = line.rfind(' ');
    int index = 0;
    if (sp == std::string_view::npos || sp == 0) {
      throw fail(first_node_line + i, "entity node must read \"<label> <index>\"");
    }
    const std::string_view num = line.substr(sp + 1);
    const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), index);
    if (ec != std::errc() || ptr != num.data() + num.size() || index < 1) {
      throw fail(first_node_line + i, "entity node must end with a positive index");
    }
    if (has_reserved(line)) throw fail(first_node_line + i, "entity node contains the arrow token");
    const EntityId id = g.add_entity(line.substr(0, sp), geom::PixelBox{});
    if (g.entities_[id].index != index) {
      throw fail(first_node_line + i, "entity index out of detection order");
    }
    by_name.emplace(std::string(line), id);
  }
  for (std::size_t q = 0; q < kViews.size(); ++q) {
    if (node_lines[entity_count + q] != kViews[q].label) {
      throw fail(first_node_line + entity_count + q,
                 "expected view node \"" + std::string(kViews[q].label) + "\"");
    }
  }

  expect_header(kAttributesHeader);
  for (std::size_t i = 0; i < entity_count + kViews.size(); ++i, ++ln) {
    if (ln >= lines.size() || lines[ln] == kSpatialHeader) {
      throw fail(ln, "missing attribute relation lines");
    }
    const auto parts = split_arrow(lines[ln]);
    if (parts.size() != 2) throw fail(ln, "attribute relation must read \"<node> → <attribute>\"");
    if (i < entity_count) {
      const std::string expected = g.entities_[i].display_name();
      if (parts[0] != expected) throw fail(ln, "expected attribute of \"" + expected + "\"");
      g.entities_[i].attribute = std::string(parts[1]);
    } else {
      const ViewNode& v = kViews[i - entity_count];
      if (parts[0] != v.label || parts[1] != v.attribute) {
        throw fail(ln, "view attribute for \"" + std::string(v.label) + "\" does not match");
      }
    }
  }

  expect_header(kSpatialHeader);
  for (; ln < lines.size(); ++ln) {
    const auto parts = split_arrow(lines[ln]);
    if (parts.size() != 3) {
      throw fail(ln, "spatial relation must read \"<node> → <predicate> → <node>\"");
    }
    const std::string src(parts[0]), dst(parts[2]);
    const auto se = by_name.find(src);
    const auto te = by_name.find(dst);
    const auto sv = view_by_label.find(src);
    const auto tv = view_by_label.find(dst);
    try {
      if (se != by_name.end() && te != by_name.end()) {
        g.add_inter_entity_relation(se->second, parts[1], te->second);
      } else if (se != by_name.end() && tv != view_by_label.end()) {
        if (parts[1] != kInPredicate) throw fail(ln, "entity-view predicate must be \"in\"");
        g.add_entity_view_relation(se->second, tv->second);
      } else if (sv != view_by_label.end() && tv != view_by_label.end()) {
        const InterViewRelation r{sv->second, parts[1], tv->second};
        const auto& full = inter_view_relations(InterViewTable::Full);
        const auto it = std::find(full.begin(), full.end(), r);
        if (it == full.end()) throw fail(ln, "inter-view relation is not predefined");
        g.inter_view_.push_back(*it);
      } else {
        throw fail(ln, "relation references an unknown node");
      }
    } catch (const ValidationError& e) {
      throw fail(ln, e.what());
    }
  }

  if (g.inter_view_ == inter_view_relations(InterViewTable::Full)) {
    g.table_ = InterViewTable::Full;
  } else if (g.inter_view_ == inter_view_relations(InterViewTable::OppositeOnly)) {
    g.table_ = InterViewTable::OppositeOnly;
  } else {
    throw fail(lines.size(), "inter-view relations do not match a predefined table");
  }
  return g;
}

}  // namespace free360::graph
