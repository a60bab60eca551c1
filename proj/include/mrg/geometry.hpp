#pragma once

namespace mrg {

/**
 * @brief Axis-aligned box in corner format, continuous image coordinates.
 *
 * A valid box has x1 < x2, y1 < y2 and finite coordinates. Validity is
 * checked where boxes enter the system (file parsing, generation); the
 * geometric operations below assume it.
 */
struct Box2D {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }

  bool operator==(const Box2D&) const = default;
};

bool box_valid(const Box2D& b);

// Throws DataError naming `what` when the box is degenerate or non-finite.
void validate_box(const Box2D& b, const char* what);

// Intersection over union in [0, 1]. 0 for disjoint or edge-touching boxes.
double iou(const Box2D& a, const Box2D& b);

// Smallest box covering both inputs.
Box2D union_box(const Box2D& a, const Box2D& b);

// True only for positive intersection area; shared edges do not count.
bool intersects(const Box2D& a, const Box2D& b);

}  // namespace mrg
