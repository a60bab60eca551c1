#pragma once

#include <span>
#include <utility>
#include <vector>

#include "mrg/geometry.hpp"
#include "mrg/scene.hpp"

namespace mrg {

// Directed candidate pair. subject_index != object_index always.
// subgraph_id is -1 until cluster_subgraphs assigns a region.
struct PairEdge {
  int subject_index = 0;
  int object_index = 0;
  int subgraph_id = -1;
};

/**
 * @brief Cluster of candidate pairs sharing one image region.
 *
 * region_box is the union box of the pair that seeded the cluster and does
 * not grow as later pairs join. member_pairs keeps (subject, object) index
 * pairs in the order they joined.
 */
struct SubgraphRegion {
  Box2D region_box;
  std::vector<std::pair<int, int>> member_pairs;
};

// All ordered pairs (i, j), i != j, ascending by subject index then object
// index. N proposals give exactly N*(N-1) edges. Duplicate proposal indices
// are a data error.
std::vector<PairEdge> build_pair_graph(std::span<const ObjectProposal> proposals);

/**
 * @brief Greedy seed-and-absorb clustering of pair union boxes.
 *
 * Pairs are processed in descending order of subject confidence * object
 * confidence, ties broken by (subject, object) index. A pair joins the first
 * existing region whose region_box has IoU >= threshold with the pair's
 * union box, otherwise it seeds a new region. Assigns subgraph_id on the
 * edges in place and returns regions in seeding order.
 *
 * threshold must lie in (0, 1].
 */
std::vector<SubgraphRegion> cluster_subgraphs(std::vector<PairEdge>& edges,
                                              std::span<const ObjectProposal> proposals,
                                              double threshold);

}  // namespace mrg
