#pragma once

#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "instformer/geom.hpp"

namespace instformer::cli {

struct ColoredPoint {
  Vec3 position;
  std::size_t part = 0;
};

/// ASCII PLY with x, y, z and an integer `part` property per vertex.
void write_ply(std::ostream& out, std::span<const ColoredPoint> points);

/// Reads back files written by write_ply. Throws FormatError on anything else.
std::vector<ColoredPoint> read_ply(std::istream& in);

/// Every part's points under its pose, tagged with the part index.
std::vector<ColoredPoint> posed_points(std::span<const PartCloud> parts, std::span<const Pose> poses);

}  // namespace instformer::cli
