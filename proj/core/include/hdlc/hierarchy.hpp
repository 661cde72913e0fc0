#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hdlc/network.hpp"
#include "hdlc/taxonomy.hpp"

namespace hdlc {

// Ranked (label, confidence) predictions, descending confidence with
// ties broken by lower label id.
struct TopK {
  std::vector<std::pair<int, float>> entries;
};

TopK top_k_from_probs(const std::vector<float>& probs, int k);

// Inference-mode forward pass over one image (c, h, w).
std::vector<float> model_confidences(const ModelState& model,
                                     const Tensor& image);

TopK classify_flat(const ModelState& model, const Tensor& image, int k);

// Classifier-injection seam: routing and evaluation run against any
// confidence provider, so they are testable without trained networks.
using ConfidenceFn = std::function<std::vector<float>(const Tensor&)>;

struct RoutingTable {
  ConfidenceFn root;                 // confidence per RID, index rid-1
  std::vector<ConfidenceFn> leaves;  // leaves[rid-1]: per LID, index lid-1
  const LeafPartition* partition = nullptr;
};

// Two-step classification: root top root_k RIDs; per selected RID the
// leaf's top leaf_k LIDs scaled by that RID's confidence; pooled
// candidates sorted descending and truncated to out_k GIDs.
TopK classify_hierarchical(const RoutingTable& table, const Tensor& image,
                           int root_k, int leaf_k, int out_k);

struct HierarchyBundle {
  ModelState root;
  std::map<int, ModelState> leaves;  // RID -> leaf model
  LeafPartition partition;

  // Checks leaf coverage and class-count consistency with the
  // partition. The returned table references this bundle; keep it
  // alive while routing.
  RoutingTable routing() const;
  void validate() const;
};

struct EvalItem {
  int gid = 0;
  int rid = 0;  // informational; re-derived from gid via the partition
  Tensor image;
};

struct EvalReport {
  int64_t total = 0;
  int64_t top5_errors = 0;
  double top5_error_pct = 0;
  // RID -> (items, errors), keyed by the true synset's group.
  std::map<int, std::pair<int64_t, int64_t>> per_rid;
  std::vector<std::string> warnings;
};

// Fig-9-style evaluation at k = 5 on every level. Parallelizes over
// items when threads > 1 with deterministic aggregation.
EvalReport evaluate_top5(const RoutingTable& table,
                         const std::vector<EvalItem>& test_set,
                         int threads = 1);

std::string format_eval_report(const EvalReport& report);

// Bundle manifest: partition path, root model path, leaf model paths.
struct BundlePaths {
  std::string partition;
  std::string root;
  std::map<int, std::string> leaves;
};

BundlePaths parse_bundle_manifest(std::istream& in,
                                  const std::string& base_dir);
BundlePaths load_bundle_manifest(const std::string& path);
void save_bundle_manifest(const BundlePaths& paths, const std::string& path);
HierarchyBundle load_bundle(const std::string& manifest_path);

}  // namespace hdlc
