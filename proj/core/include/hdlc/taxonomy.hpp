#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "hdlc/error.hpp"

namespace hdlc {

// WordNet-style synset identifier: "n" followed by exactly 8 decimal
// digits. Ordering is ordering on the numeric part.
struct SynsetId {
  uint32_t value = 0;

  static SynsetId parse(std::string_view raw);
  static std::optional<SynsetId> try_parse(std::string_view raw);
  std::string str() const;

  auto operator<=>(const SynsetId&) const = default;
};

// Synsets with no ISA attachment hang under this synthetic root.
inline constexpr SynsetId kSyntheticRoot{0};

// The ISA relation as a child -> parents multimap. Acyclic by
// construction (checked when parsed).
struct IsaMap {
  std::map<SynsetId, std::set<SynsetId>> parents_of;
  std::set<SynsetId> ids;  // every id appearing on either side

  bool contains(SynsetId id) const { return ids.count(id) > 0; }
  const std::set<SynsetId>* parents(SynsetId child) const {
    auto it = parents_of.find(child);
    return it == parents_of.end() ? nullptr : &it->second;
  }
  size_t edge_count() const {
    size_t n = 0;
    for (const auto& [child, parents] : parents_of) n += parents.size();
    return n;
  }
};

// One "parent child" pair per line, whitespace separated; '#' comments
// and blank lines skipped; duplicate edges deduplicated. Raises
// ParseError with the line number on malformed tokens or self-edges
// and CycleError naming one cycle if the child->parent graph is cyclic.
IsaMap parse_isa_map(std::istream& in);
IsaMap parse_isa_map_text(const std::string& text);
IsaMap load_isa_map(const std::string& path);
std::string serialize_isa_map(const IsaMap& m);

std::vector<SynsetId> parse_synset_list(std::istream& in);
std::vector<SynsetId> load_synset_list(const std::string& path);

// The parent with the maximal numeric id, or none for roots.
std::optional<SynsetId> closest_parent(SynsetId s, const IsaMap& m);

// Root-to-s path obtained by recursively following closest_parent.
std::vector<SynsetId> deepest_branch(SynsetId s, const IsaMap& m);

// Rolled-up union of deepest branches. Nodes that are themselves input
// synsets carry themselves in members; roll-up appends merged leaves'
// members to their parents.
struct HierarchyTree {
  std::set<SynsetId> nodes;
  std::map<SynsetId, SynsetId> parent;  // no entry for roots
  std::map<SynsetId, std::vector<SynsetId>> members;
  int iterations = 0;

  std::optional<SynsetId> parent_of(SynsetId n) const;
  int depth(SynsetId n) const;  // parent links to the root
  int max_depth() const;
  std::vector<SynsetId> roots() const;
  std::vector<SynsetId> children(SynsetId n) const;  // ascending id
  int64_t subtree_member_count(SynsetId n) const;
};

struct HtreeResult {
  HierarchyTree tree;
  std::vector<std::string> warnings;
};

HtreeResult build_htree(const std::vector<SynsetId>& synsets, const IsaMap& m,
                        int iterations);

HierarchyTree parse_tree(std::istream& in);
HierarchyTree load_tree(const std::string& path);
std::string serialize_tree(const HierarchyTree& tree);
void save_tree(const HierarchyTree& tree, const std::string& path);

// Leaf-group partition with the three id maps. RID: 1-based group
// index, ordered by descending group size; LID: 1-based index within
// the group sorted by synset id; GID: 1-based index in the global
// sorted synset list.
struct LeafPartition {
  std::vector<std::vector<SynsetId>> leaves;  // leaves[rid-1], LID order
  std::map<SynsetId, int> rid_of;
  std::map<SynsetId, int> lid_of;
  std::map<SynsetId, int> gid_of;

  int group_count() const { return static_cast<int>(leaves.size()); }
  int64_t synset_count() const { return static_cast<int64_t>(gid_of.size()); }
  // (rid, lid) -> gid; throws ConfigError on unknown pairs.
  int gid(int rid, int lid) const;
  SynsetId synset_of_gid(int gid) const;
};

struct PartitionResult {
  LeafPartition partition;
  std::vector<std::string> warnings;
};

PartitionResult partition_leaves(const HierarchyTree& tree, int max_leaf_size,
                                 int min_leaf_size);

LeafPartition parse_partition(std::istream& in);
LeafPartition load_partition(const std::string& path);
std::string serialize_partition(const LeafPartition& p);
void save_partition(const LeafPartition& p, const std::string& path);

}  // namespace hdlc
