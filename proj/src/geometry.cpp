#include "mrg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mrg/errors.hpp"

namespace mrg {

bool box_valid(const Box2D& b) {
  return std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) &&
         std::isfinite(b.y2) && b.x1 < b.x2 && b.y1 < b.y2;
}

void validate_box(const Box2D& b, const char* what) {
  if (!box_valid(b)) {
    throw DataError(std::string(what) + ": invalid box [" + std::to_string(b.x1) + ", " +
                    std::to_string(b.y1) + ", " + std::to_string(b.x2) + ", " +
                    std::to_string(b.y2) + "]");
  }
}

double iou(const Box2D& a, const Box2D& b) {
  double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) {
    return 0.0;
  }
  double inter = iw * ih;
  double uni = a.area() + b.area() - inter;
  return inter / uni;
}

Box2D union_box(const Box2D& a, const Box2D& b) {
  return Box2D{std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
               std::max(a.y2, b.y2)};
}

bool intersects(const Box2D& a, const Box2D& b) {
  return std::min(a.x2, b.x2) - std::max(a.x1, b.x1) > 0.0 &&
         std::min(a.y2, b.y2) - std::max(a.y1, b.y1) > 0.0;
}

}  // namespace mrg
