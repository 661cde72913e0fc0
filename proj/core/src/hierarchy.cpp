#include "hdlc/hierarchy.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "hdlc/dataio.hpp"

namespace fs = std::filesystem;

namespace hdlc {

TopK top_k_from_probs(const std::vector<float>& probs, int k) {
  std::vector<int> idx(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) idx[i] = static_cast<int>(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (probs[static_cast<size_t>(a)] != probs[static_cast<size_t>(b)])
      return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)];
    return a < b;
  });
  TopK out;
  const int n = std::min<int>(k, static_cast<int>(probs.size()));
  out.entries.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    out.entries.emplace_back(idx[static_cast<size_t>(i)],
                             probs[static_cast<size_t>(idx[i])]);
  return out;
}

std::vector<float> model_confidences(const ModelState& model,
                                     const Tensor& image) {
  if (image.rank() != 3)
    throw ShapeError("model_confidences expects a (c, h, w) image");
  Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)});
  batch.data = image.data;
  ForwardOptions opt;
  opt.mode = Mode::infer;
  auto trace = network_forward(model, batch, opt);
  const Tensor& probs = trace.probs();
  return std::vector<float>(probs.data.begin(), probs.data.end());
}

TopK classify_flat(const ModelState& model, const Tensor& image, int k) {
  return top_k_from_probs(model_confidences(model, image), k);
}

TopK classify_hierarchical(const RoutingTable& table, const Tensor& image,
                           int root_k, int leaf_k, int out_k) {
  if (!table.partition) throw ConfigError("routing table has no partition");
  if (root_k < 1 || leaf_k < 1 || out_k < 1)
    throw ConfigError("classification widths must be >= 1");
  const LeafPartition& part = *table.partition;

  const TopK root_top = top_k_from_probs(table.root(image), root_k);

  std::vector<std::pair<int, float>> pooled;  // (gid, confidence)
  for (const auto& [root_label, rconf] : root_top.entries) {
    const int rid = root_label + 1;  // softmax index r-1 <-> RID r
    if (rid < 1 || rid > part.group_count() ||
        static_cast<size_t>(rid) > table.leaves.size() ||
        !table.leaves[static_cast<size_t>(rid - 1)])
      throw ConfigError(strf("no leaf model bound for RID %d", rid));
    const TopK leaf_top =
        top_k_from_probs(table.leaves[static_cast<size_t>(rid - 1)](image),
                         leaf_k);
    for (const auto& [leaf_label, lconf] : leaf_top.entries) {
      const int lid = leaf_label + 1;
      pooled.emplace_back(part.gid(rid, lid), lconf * rconf);
    }
  }
  std::sort(pooled.begin(), pooled.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  TopK out;
  const int n = std::min<int>(out_k, static_cast<int>(pooled.size()));
  out.entries.assign(pooled.begin(), pooled.begin() + n);
  return out;
}

void HierarchyBundle::validate() const {
  if (root.spec.class_count != partition.group_count())
    throw ConfigError(strf("root model has %d classes, partition %d groups",
                           root.spec.class_count, partition.group_count()));
  for (int rid = 1; rid <= partition.group_count(); ++rid) {
    auto it = leaves.find(rid);
    if (it == leaves.end())
      throw ConfigError(strf("no leaf model for RID %d", rid));
    const int group_size =
        static_cast<int>(partition.leaves[static_cast<size_t>(rid - 1)].size());
    if (it->second.spec.class_count != group_size)
      throw ConfigError(strf("leaf model for RID %d has %d classes, group "
                             "has %d synsets",
                             rid, it->second.spec.class_count, group_size));
  }
}

RoutingTable HierarchyBundle::routing() const {
  validate();
  RoutingTable table;
  table.partition = &partition;
  table.root = [this](const Tensor& image) {
    return model_confidences(root, image);
  };
  for (int rid = 1; rid <= partition.group_count(); ++rid) {
    const ModelState& leaf = leaves.at(rid);
    table.leaves.push_back([&leaf](const Tensor& image) {
      return model_confidences(leaf, image);
    });
  }
  return table;
}

namespace {
struct ShardResult {
  int64_t errors = 0;
  std::map<int, std::pair<int64_t, int64_t>> per_rid;
  std::vector<std::string> warnings;
};

ShardResult eval_range(const RoutingTable& table,
                       const std::vector<EvalItem>& items, size_t begin,
                       size_t end) {
  ShardResult r;
  const LeafPartition& part = *table.partition;
  for (size_t i = begin; i < end; ++i) {
    const EvalItem& item = items[i];
    const SynsetId truth = part.synset_of_gid(item.gid);
    const int true_rid = part.rid_of.at(truth);
    if (item.rid != 0 && item.rid != true_rid)
      r.warnings.push_back(strf(
          "item %zu: supplied RID %d conflicts with partition RID %d; using "
          "the partition",
          i, item.rid, true_rid));
    const TopK top = classify_hierarchical(table, item.image, 5, 5, 5);
    bool hit = false;
    for (const auto& [gid, conf] : top.entries)
      if (gid == item.gid) hit = true;
    auto& bucket = r.per_rid[true_rid];
    ++bucket.first;
    if (!hit) {
      ++bucket.second;
      ++r.errors;
    }
  }
  return r;
}
}  // namespace

EvalReport evaluate_top5(const RoutingTable& table,
                         const std::vector<EvalItem>& test_set, int threads) {
  if (!table.partition) throw ConfigError("routing table has no partition");
  for (const EvalItem& item : test_set)
    table.partition->synset_of_gid(item.gid);  // throws on unknown GIDs

  EvalReport report;
  report.total = static_cast<int64_t>(test_set.size());
  if (test_set.empty()) return report;

  const int n = std::max(1, std::min<int>(threads,
                                          static_cast<int>(test_set.size())));
  std::vector<ShardResult> shards(static_cast<size_t>(n));
  if (n == 1) {
    shards[0] = eval_range(table, test_set, 0, test_set.size());
  } else {
    std::vector<std::thread> pool;
    const size_t per = (test_set.size() + n - 1) / n;
    for (int t = 0; t < n; ++t) {
      const size_t begin = static_cast<size_t>(t) * per;
      const size_t end = std::min(test_set.size(), begin + per);
      pool.emplace_back([&, t, begin, end] {
        shards[static_cast<size_t>(t)] = eval_range(table, test_set, begin,
                                                    end);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const ShardResult& s : shards) {
    report.top5_errors += s.errors;
    for (const auto& [rid, counts] : s.per_rid) {
      report.per_rid[rid].first += counts.first;
      report.per_rid[rid].second += counts.second;
    }
    report.warnings.insert(report.warnings.end(), s.warnings.begin(),
                           s.warnings.end());
  }
  report.top5_error_pct =
      100.0 * static_cast<double>(report.top5_errors) / report.total;
  return report;
}

std::string format_eval_report(const EvalReport& report) {
  std::ostringstream out;
  out << strf("total %lld, errors %lld, pct %.4f\n",
              static_cast<long long>(report.total),
              static_cast<long long>(report.top5_errors),
              report.top5_error_pct);
  for (const auto& [rid, counts] : report.per_rid)
    out << strf("rid %d: items %lld, errors %lld\n", rid,
                static_cast<long long>(counts.first),
                static_cast<long long>(counts.second));
  return out.str();
}

BundlePaths parse_bundle_manifest(std::istream& in,
                                  const std::string& base_dir) {
  BundlePaths paths;
  bool saw_format = false;
  std::string line;
  int lineno = 0;
  auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    if (fp.is_absolute() || base_dir.empty()) return p;
    return (fs::path(base_dir) / fp).string();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    if (word == "format") {
      std::string v;
      ss >> v;
      if (v != "bundle/1")
        throw ParseError(strf("line %d: unsupported bundle format", lineno));
      saw_format = true;
    } else if (word == "partition" || word == "root") {
      std::string p;
      if (!(ss >> p))
        throw ParseError(strf("line %d: %s expects a path", lineno,
                              word.c_str()));
      (word == "partition" ? paths.partition : paths.root) = resolve(p);
    } else if (word == "leaf") {
      int rid = 0;
      std::string p;
      if (!(ss >> rid >> p) || rid < 1)
        throw ParseError(strf("line %d: leaf expects '<rid> <path>'", lineno));
      paths.leaves[rid] = resolve(p);
    } else {
      throw ParseError(strf("line %d: unknown directive '%s'", lineno,
                            word.c_str()));
    }
  }
  if (!saw_format) throw ParseError("missing 'format bundle/1' line");
  if (paths.partition.empty()) throw ParseError("bundle missing partition");
  if (paths.root.empty()) throw ParseError("bundle missing root model");
  return paths;
}

BundlePaths load_bundle_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open bundle manifest: " + path);
  return parse_bundle_manifest(in, fs::path(path).parent_path().string());
}

void save_bundle_manifest(const BundlePaths& paths, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write bundle manifest: " + path);
  out << "format bundle/1\n";
  out << "partition " << paths.partition << '\n';
  out << "root " << paths.root << '\n';
  for (const auto& [rid, p] : paths.leaves)
    out << "leaf " << rid << ' ' << p << '\n';
}

HierarchyBundle load_bundle(const std::string& manifest_path) {
  const BundlePaths paths = load_bundle_manifest(manifest_path);
  HierarchyBundle bundle;
  bundle.partition = load_partition(paths.partition);
  bundle.root = load_model(paths.root);
  for (const auto& [rid, p] : paths.leaves)
    bundle.leaves[rid] = load_model(p);
  bundle.validate();
  return bundle;
}

}  // namespace hdlc
