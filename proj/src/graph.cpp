#include "mrg/graph.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <string>
#include <unordered_map>

#include "mrg/errors.hpp"

namespace mrg {

std::vector<PairEdge> build_pair_graph(std::span<const ObjectProposal> proposals) {
  std::set<int> seen;
  for (const auto& p : proposals) {
    if (!seen.insert(p.index).second) {
      throw DataError("duplicate proposal index " + std::to_string(p.index));
    }
  }
  std::vector<int> indices(seen.begin(), seen.end());
  std::vector<PairEdge> edges;
  edges.reserve(indices.size() * (indices.size() > 0 ? indices.size() - 1 : 0));
  for (int s : indices) {
    for (int o : indices) {
      if (s != o) {
        edges.push_back(PairEdge{s, o, -1});
      }
    }
  }
  return edges;
}

std::vector<SubgraphRegion> cluster_subgraphs(std::vector<PairEdge>& edges,
                                              std::span<const ObjectProposal> proposals,
                                              double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw DataError("cluster threshold must lie in (0, 1], got " + std::to_string(threshold));
  }
  std::unordered_map<int, const ObjectProposal*> by_index;
  for (const auto& p : proposals) {
    by_index[p.index] = &p;
  }
  struct Item {
    size_t edge_pos;
    double score;
    int subject;
    int object;
  };
  std::vector<Item> order;
  order.reserve(edges.size());
  for (size_t i = 0; i < edges.size(); ++i) {
    auto s = by_index.find(edges[i].subject_index);
    auto o = by_index.find(edges[i].object_index);
    if (s == by_index.end() || o == by_index.end()) {
      throw DataError("pair references unknown proposal index");
    }
    order.push_back(Item{i, s->second->confidence * o->second->confidence,
                         edges[i].subject_index, edges[i].object_index});
  }
  std::sort(order.begin(), order.end(), [](const Item& a, const Item& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.subject != b.subject) return a.subject < b.subject;
    return a.object < b.object;
  });

  std::vector<SubgraphRegion> regions;
  for (const auto& item : order) {
    PairEdge& e = edges[item.edge_pos];
    Box2D ub = union_box(by_index[e.subject_index]->box, by_index[e.object_index]->box);
    int assigned = -1;
    for (size_t r = 0; r < regions.size(); ++r) {
      if (iou(ub, regions[r].region_box) >= threshold) {
        assigned = static_cast<int>(r);
        break;
      }
    }
    if (assigned < 0) {
      regions.push_back(SubgraphRegion{ub, {}});
      assigned = static_cast<int>(regions.size()) - 1;
    }
    regions[static_cast<size_t>(assigned)].member_pairs.emplace_back(e.subject_index,
                                                                     e.object_index);
    e.subgraph_id = assigned;
  }
  return regions;
}

}  // namespace mrg
