#include "hdlc/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>

namespace hdlc {

SynsetId SynsetId::parse(std::string_view raw) {
  auto v = try_parse(raw);
  if (!v)
    throw ParseError(strf("malformed synset id '%.*s' (expected n + 8 digits)",
                          static_cast<int>(raw.size()), raw.data()));
  return *v;
}

std::optional<SynsetId> SynsetId::try_parse(std::string_view raw) {
  if (raw.size() != 9 || raw[0] != 'n') return std::nullopt;
  uint32_t value = 0;
  for (size_t i = 1; i < raw.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(raw[i]))) return std::nullopt;
    value = value * 10 + static_cast<uint32_t>(raw[i] - '0');
  }
  return SynsetId{value};
}

std::string SynsetId::str() const { return strf("n%08u", value); }

namespace {

// DFS over child->parent edges; returns one cycle if found.
std::vector<SynsetId> find_cycle(const IsaMap& m) {
  std::map<SynsetId, int> color;  // 0 unseen, 1 active, 2 done
  std::vector<SynsetId> stack;
  std::vector<SynsetId> cycle;
  std::function<bool(SynsetId)> visit = [&](SynsetId node) {
    color[node] = 1;
    stack.push_back(node);
    if (const auto* ps = m.parents(node)) {
      for (SynsetId p : *ps) {
        const int c = color.count(p) ? color[p] : 0;
        if (c == 1) {
          auto it = std::find(stack.begin(), stack.end(), p);
          cycle.assign(it, stack.end());
          cycle.push_back(p);
          return true;
        }
        if (c == 0 && visit(p)) return true;
      }
    }
    stack.pop_back();
    color[node] = 2;
    return false;
  };
  for (SynsetId id : m.ids)
    if ((color.count(id) ? color[id] : 0) == 0 && visit(id)) return cycle;
  return {};
}

}  // namespace

IsaMap parse_isa_map(std::istream& in) {
  IsaMap m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    std::string a, b, extra;
    if (!(ss >> a)) continue;
    if (!(ss >> b) || (ss >> extra))
      throw ParseError(strf("line %d: expected 'parent child'", lineno));
    SynsetId parent, child;
    try {
      parent = SynsetId::parse(a);
      child = SynsetId::parse(b);
    } catch (const ParseError& e) {
      throw ParseError(strf("line %d: %s", lineno, e.what()));
    }
    if (parent == child)
      throw ParseError(strf("line %d: self-edge on %s", lineno,
                            a.c_str()));
    m.parents_of[child].insert(parent);
    m.ids.insert(parent);
    m.ids.insert(child);
  }
  const std::vector<SynsetId> cycle = find_cycle(m);
  if (!cycle.empty()) {
    std::string msg = "ISA relation contains a cycle:";
    for (SynsetId id : cycle) msg += " " + id.str();
    throw CycleError(msg);
  }
  return m;
}

IsaMap parse_isa_map_text(const std::string& text) {
  std::istringstream ss(text);
  return parse_isa_map(ss);
}

IsaMap load_isa_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ISA file: " + path);
  return parse_isa_map(in);
}

std::string serialize_isa_map(const IsaMap& m) {
  std::ostringstream out;
  for (const auto& [child, parents] : m.parents_of)
    for (SynsetId parent : parents)
      out << parent.str() << ' ' << child.str() << '\n';
  return out.str();
}

std::vector<SynsetId> parse_synset_list(std::istream& in) {
  std::vector<SynsetId> out;
  std::set<SynsetId> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    std::string tok, extra;
    if (!(ss >> tok)) continue;
    if (ss >> extra)
      throw ParseError(strf("line %d: expected one synset per line", lineno));
    SynsetId id;
    try {
      id = SynsetId::parse(tok);
    } catch (const ParseError& e) {
      throw ParseError(strf("line %d: %s", lineno, e.what()));
    }
    if (seen.insert(id).second) out.push_back(id);
  }
  return out;
}

std::vector<SynsetId> load_synset_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synset list: " + path);
  return parse_synset_list(in);
}

std::optional<SynsetId> closest_parent(SynsetId s, const IsaMap& m) {
  const auto* ps = m.parents(s);
  if (!ps || ps->empty()) return std::nullopt;
  return *ps->rbegin();  // maximal numeric id
}

std::vector<SynsetId> deepest_branch(SynsetId s, const IsaMap& m) {
  std::vector<SynsetId> path{s};
  const size_t limit = m.ids.size() + 1;
  SynsetId cur = s;
  while (auto p = closest_parent(cur, m)) {
    path.push_back(*p);
    cur = *p;
    if (path.size() > limit)
      throw CycleError("deepest_branch exceeded node count; ISA map cyclic");
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::optional<SynsetId> HierarchyTree::parent_of(SynsetId n) const {
  auto it = parent.find(n);
  return it == parent.end() ? std::nullopt : std::optional<SynsetId>(it->second);
}

int HierarchyTree::depth(SynsetId n) const {
  int d = 0;
  auto it = parent.find(n);
  while (it != parent.end()) {
    ++d;
    it = parent.find(it->second);
  }
  return d;
}

int HierarchyTree::max_depth() const {
  int best = 0;
  for (SynsetId n : nodes) best = std::max(best, depth(n));
  return best;
}

std::vector<SynsetId> HierarchyTree::roots() const {
  std::vector<SynsetId> out;
  for (SynsetId n : nodes)
    if (!parent.count(n)) out.push_back(n);
  return out;
}

std::vector<SynsetId> HierarchyTree::children(SynsetId n) const {
  std::vector<SynsetId> out;
  for (const auto& [child, par] : parent)
    if (par == n) out.push_back(child);
  return out;
}

int64_t HierarchyTree::subtree_member_count(SynsetId n) const {
  int64_t total = 0;
  auto it = members.find(n);
  if (it != members.end()) total += static_cast<int64_t>(it->second.size());
  for (SynsetId c : children(n)) total += subtree_member_count(c);
  return total;
}

HtreeResult build_htree(const std::vector<SynsetId>& synsets, const IsaMap& m,
                        int iterations) {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  HtreeResult result;
  HierarchyTree& tree = result.tree;

  const std::set<SynsetId> input(synsets.begin(), synsets.end());
  if (input.count(kSyntheticRoot))
    throw ConfigError("synset n00000000 is reserved for the synthetic root");

  for (SynsetId s : synsets) {
    if (!m.contains(s)) {
      // No ISA attachment at all: hang directly under the synthetic root.
      result.warnings.push_back("synset " + s.str() +
                                " has no ISA attachment; placed under "
                                "synthetic root");
      tree.nodes.insert(kSyntheticRoot);
      tree.nodes.insert(s);
      tree.parent[s] = kSyntheticRoot;
      continue;
    }
    const std::vector<SynsetId> branch = deepest_branch(s, m);
    for (size_t i = 0; i < branch.size(); ++i) {
      tree.nodes.insert(branch[i]);
      if (i + 1 < branch.size()) tree.parent[branch[i + 1]] = branch[i];
    }
  }
  for (SynsetId n : tree.nodes)
    if (input.count(n)) tree.members[n] = {n};

  // Roll-up: one pass per iteration merges every leaf at the current
  // maximum depth into its parent, deepest first, children in
  // ascending-id order. Stops early once only roots remain.
  int performed = 0;
  for (int pass = 0; pass < iterations; ++pass) {
    const int d = tree.max_depth();
    if (d == 0) break;
    std::vector<SynsetId> doomed;
    for (SynsetId n : tree.nodes)
      if (tree.depth(n) == d) doomed.push_back(n);  // depth-d nodes are leaves
    std::sort(doomed.begin(), doomed.end());
    for (SynsetId n : doomed) {
      const SynsetId par = tree.parent.at(n);
      auto it = tree.members.find(n);
      if (it != tree.members.end()) {
        auto& pm = tree.members[par];
        pm.insert(pm.end(), it->second.begin(), it->second.end());
        tree.members.erase(it);
      }
      tree.parent.erase(n);
      tree.nodes.erase(n);
    }
    ++performed;
  }
  tree.iterations = performed;
  return result;
}

HierarchyTree parse_tree(std::istream& in) {
  HierarchyTree tree;
  bool saw_format = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    if (word == "format") {
      std::string v;
      ss >> v;
      if (v != "htree/1")
        throw ParseError(strf("line %d: unsupported tree format", lineno));
      saw_format = true;
    } else if (word == "iterations") {
      if (!(ss >> tree.iterations) || tree.iterations < 0)
        throw ParseError(strf("line %d: bad iterations", lineno));
    } else if (word == "node") {
      std::string id, parent_field, members_field;
      if (!(ss >> id >> parent_field >> members_field))
        throw ParseError(strf(
            "line %d: node expects '<id> parent=<id|-> members=<list>'",
            lineno));
      SynsetId node;
      try {
        node = SynsetId::parse(id);
        tree.nodes.insert(node);
        if (parent_field.rfind("parent=", 0) != 0 ||
            members_field.rfind("members=", 0) != 0)
          throw ParseError("expected parent= and members= fields");
        const std::string pval = parent_field.substr(7);
        if (pval != "-") tree.parent[node] = SynsetId::parse(pval);
        const std::string mval = members_field.substr(8);
        if (mval != "-") {
          std::vector<SynsetId> mem;
          size_t start = 0;
          while (start < mval.size()) {
            size_t comma = mval.find(',', start);
            if (comma == std::string::npos) comma = mval.size();
            mem.push_back(SynsetId::parse(
                std::string_view(mval).substr(start, comma - start)));
            start = comma + 1;
          }
          tree.members[node] = std::move(mem);
        }
      } catch (const ParseError& e) {
        throw ParseError(strf("line %d: %s", lineno, e.what()));
      }
    } else {
      throw ParseError(strf("line %d: unknown directive '%s'", lineno,
                            word.c_str()));
    }
  }
  if (!saw_format) throw ParseError("missing 'format htree/1' line");
  for (const auto& [child, par] : tree.parent)
    if (!tree.nodes.count(par))
      throw ParseError("tree parent " + par.str() + " is not a node");
  return tree;
}

HierarchyTree load_tree(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tree file: " + path);
  return parse_tree(in);
}

std::string serialize_tree(const HierarchyTree& tree) {
  std::ostringstream out;
  out << "format htree/1\n";
  out << "iterations " << tree.iterations << '\n';
  for (SynsetId n : tree.nodes) {
    out << "node " << n.str() << " parent=";
    if (auto p = tree.parent_of(n))
      out << p->str();
    else
      out << '-';
    out << " members=";
    auto it = tree.members.find(n);
    if (it == tree.members.end() || it->second.empty()) {
      out << '-';
    } else {
      for (size_t i = 0; i < it->second.size(); ++i) {
        if (i) out << ',';
        out << it->second[i].str();
      }
    }
    out << '\n';
  }
  return out.str();
}

void save_tree(const HierarchyTree& tree, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write tree file: " + path);
  out << serialize_tree(tree);
}

int LeafPartition::gid(int rid, int lid) const {
  if (rid < 1 || rid > group_count())
    throw ConfigError(strf("unknown RID %d", rid));
  const auto& group = leaves[static_cast<size_t>(rid - 1)];
  if (lid < 1 || lid > static_cast<int>(group.size()))
    throw ConfigError(strf("unknown LID %d in group %d", lid, rid));
  return gid_of.at(group[static_cast<size_t>(lid - 1)]);
}

SynsetId LeafPartition::synset_of_gid(int gid) const {
  for (const auto& [s, g] : gid_of)
    if (g == gid) return s;
  throw ConfigError(strf("unknown GID %d", gid));
}

PartitionResult partition_leaves(const HierarchyTree& tree, int max_leaf_size,
                                 int min_leaf_size) {
  if (min_leaf_size < 1 || max_leaf_size < min_leaf_size)
    throw ConfigError("need max_leaf_size >= min_leaf_size >= 1");

  PartitionResult result;
  std::vector<std::vector<SynsetId>> groups;

  // Flat member lists that cannot split along child boundaries are
  // chunked in sorted order.
  auto emit_members = [&](std::vector<SynsetId> mem) {
    std::sort(mem.begin(), mem.end());
    for (size_t start = 0; start < mem.size();
         start += static_cast<size_t>(max_leaf_size))
      groups.emplace_back(
          mem.begin() + static_cast<std::ptrdiff_t>(start),
          mem.begin() + static_cast<std::ptrdiff_t>(
                            std::min(mem.size(),
                                     start + static_cast<size_t>(
                                                 max_leaf_size))));
  };

  std::function<void(SynsetId)> split = [&](SynsetId node) {
    const int64_t total = tree.subtree_member_count(node);
    if (total == 0) return;
    if (total <= max_leaf_size) {
      // Whole subtree becomes one candidate group.
      std::vector<SynsetId> mem;
      std::function<void(SynsetId)> collect = [&](SynsetId n) {
        auto it = tree.members.find(n);
        if (it != tree.members.end())
          mem.insert(mem.end(), it->second.begin(), it->second.end());
        for (SynsetId c : tree.children(n)) collect(c);
      };
      collect(node);
      std::sort(mem.begin(), mem.end());
      groups.push_back(std::move(mem));
      return;
    }
    // Oversized: recurse along child boundaries; the node's own members
    // become their own candidate.
    auto it = tree.members.find(node);
    if (it != tree.members.end() && !it->second.empty())
      emit_members(it->second);
    for (SynsetId c : tree.children(node)) split(c);
  };
  for (SynsetId root : tree.roots()) split(root);

  // Greedy merge of undersized groups into the smallest other group
  // that stays within the size bound.
  std::vector<bool> final_flag(groups.size(), false);
  for (;;) {
    int undersized = -1;
    for (size_t i = 0; i < groups.size(); ++i) {
      if (final_flag[i] || groups[i].empty()) continue;
      if (static_cast<int>(groups[i].size()) >= min_leaf_size) continue;
      if (undersized < 0 ||
          groups[i].size() < groups[static_cast<size_t>(undersized)].size() ||
          (groups[i].size() ==
               groups[static_cast<size_t>(undersized)].size() &&
           groups[i].front() < groups[static_cast<size_t>(undersized)].front()))
        undersized = static_cast<int>(i);
    }
    if (undersized < 0) break;
    int partner = -1;
    for (size_t i = 0; i < groups.size(); ++i) {
      if (static_cast<int>(i) == undersized || groups[i].empty()) continue;
      if (static_cast<int>(groups[i].size() +
                           groups[static_cast<size_t>(undersized)].size()) >
          max_leaf_size)
        continue;
      if (partner < 0 ||
          groups[i].size() < groups[static_cast<size_t>(partner)].size() ||
          (groups[i].size() == groups[static_cast<size_t>(partner)].size() &&
           groups[i].front() < groups[static_cast<size_t>(partner)].front()))
        partner = static_cast<int>(i);
    }
    if (partner < 0) {
      result.warnings.push_back(strf(
          "group of %zu synsets (first %s) is below min_leaf_size %d with no "
          "merge partner",
          groups[static_cast<size_t>(undersized)].size(),
          groups[static_cast<size_t>(undersized)].front().str().c_str(),
          min_leaf_size));
      final_flag[static_cast<size_t>(undersized)] = true;
      continue;
    }
    auto& dst = groups[static_cast<size_t>(partner)];
    auto& src = groups[static_cast<size_t>(undersized)];
    dst.insert(dst.end(), src.begin(), src.end());
    std::sort(dst.begin(), dst.end());
    src.clear();
  }
  groups.erase(std::remove_if(groups.begin(), groups.end(),
                              [](const auto& g) { return g.empty(); }),
               groups.end());

  // RID by descending size (ties by first synset id), LID by sorted
  // order within the group, GID by global sorted order.
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a.front() < b.front();
  });

  LeafPartition& p = result.partition;
  p.leaves = std::move(groups);
  std::vector<SynsetId> all;
  for (size_t g = 0; g < p.leaves.size(); ++g) {
    for (size_t i = 0; i < p.leaves[g].size(); ++i) {
      const SynsetId s = p.leaves[g][i];
      if (p.rid_of.count(s))
        throw Error("internal: synset assigned to two groups");
      p.rid_of[s] = static_cast<int>(g) + 1;
      p.lid_of[s] = static_cast<int>(i) + 1;
      all.push_back(s);
    }
  }
  std::sort(all.begin(), all.end());
  for (size_t i = 0; i < all.size(); ++i)
    p.gid_of[all[i]] = static_cast<int>(i) + 1;
  return result;
}

LeafPartition parse_partition(std::istream& in) {
  LeafPartition p;
  bool saw_format = false;
  std::string line;
  int lineno = 0;
  std::map<int, std::vector<SynsetId>> by_rid;
  std::map<SynsetId, std::tuple<int, int, int>> explicit_ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    if (word == "format") {
      std::string v;
      ss >> v;
      if (v != "partition/1")
        throw ParseError(strf("line %d: unsupported partition format",
                              lineno));
      saw_format = true;
    } else if (word == "group") {
      int rid = 0;
      std::string members_field;
      if (!(ss >> rid >> members_field) ||
          members_field.rfind("members=", 0) != 0)
        throw ParseError(strf("line %d: group expects '<rid> members=<list>'",
                              lineno));
      std::vector<SynsetId> mem;
      const std::string mval = members_field.substr(8);
      size_t start = 0;
      while (start < mval.size()) {
        size_t comma = mval.find(',', start);
        if (comma == std::string::npos) comma = mval.size();
        mem.push_back(SynsetId::parse(
            std::string_view(mval).substr(start, comma - start)));
        start = comma + 1;
      }
      if (mem.empty())
        throw ParseError(strf("line %d: empty group", lineno));
      by_rid[rid] = std::move(mem);
    } else if (word == "synset") {
      std::string id;
      int rid = 0, lid = 0, gid = 0;
      std::string f1, f2, f3;
      if (!(ss >> id >> f1 >> f2 >> f3))
        throw ParseError(strf(
            "line %d: synset expects '<id> rid=<r> lid=<l> gid=<g>'", lineno));
      auto take = [&](const std::string& f, const char* key) {
        const std::string prefix = std::string(key) + "=";
        if (f.rfind(prefix, 0) != 0)
          throw ParseError(strf("line %d: expected %s=", lineno, key));
        try {
          return std::stoi(f.substr(prefix.size()));
        } catch (const std::exception&) {
          throw ParseError(strf("line %d: bad %s value", lineno, key));
        }
      };
      rid = take(f1, "rid");
      lid = take(f2, "lid");
      gid = take(f3, "gid");
      explicit_ids[SynsetId::parse(id)] = {rid, lid, gid};
    } else {
      throw ParseError(strf("line %d: unknown directive '%s'", lineno,
                            word.c_str()));
    }
  }
  if (!saw_format) throw ParseError("missing 'format partition/1' line");
  if (by_rid.empty()) throw ParseError("partition has no groups");
  int expect = 1;
  for (const auto& [rid, mem] : by_rid) {
    if (rid != expect)
      throw ParseError(strf("group RIDs must be 1..N without gaps (saw %d)",
                            rid));
    ++expect;
    p.leaves.push_back(mem);
  }
  std::vector<SynsetId> all;
  for (size_t g = 0; g < p.leaves.size(); ++g)
    for (size_t i = 0; i < p.leaves[g].size(); ++i) {
      const SynsetId s = p.leaves[g][i];
      if (p.rid_of.count(s))
        throw ParseError("synset " + s.str() + " appears in two groups");
      p.rid_of[s] = static_cast<int>(g) + 1;
      p.lid_of[s] = static_cast<int>(i) + 1;
      all.push_back(s);
    }
  std::sort(all.begin(), all.end());
  for (size_t i = 0; i < all.size(); ++i)
    p.gid_of[all[i]] = static_cast<int>(i) + 1;
  // The explicit id lines carry the binding; verify they agree.
  for (const auto& [s, ids] : explicit_ids) {
    const auto [rid, lid, gid] = ids;
    if (!p.rid_of.count(s))
      throw ParseError("synset line without group membership: " + s.str());
    if (p.rid_of[s] != rid || p.lid_of[s] != lid || p.gid_of[s] != gid)
      throw ParseError("synset " + s.str() +
                       " id bindings disagree with group lines");
  }
  return p;
}

LeafPartition load_partition(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open partition file: " + path);
  return parse_partition(in);
}

std::string serialize_partition(const LeafPartition& p) {
  std::ostringstream out;
  out << "format partition/1\n";
  for (size_t g = 0; g < p.leaves.size(); ++g) {
    out << "group " << (g + 1) << " members=";
    for (size_t i = 0; i < p.leaves[g].size(); ++i) {
      if (i) out << ',';
      out << p.leaves[g][i].str();
    }
    out << '\n';
  }
  for (const auto& [s, gid] : p.gid_of)
    out << "synset " << s.str() << " rid=" << p.rid_of.at(s)
        << " lid=" << p.lid_of.at(s) << " gid=" << gid << '\n';
  return out.str();
}

void save_partition(const LeafPartition& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write partition file: " + path);
  out << serialize_partition(p);
}

}  // namespace hdlc
