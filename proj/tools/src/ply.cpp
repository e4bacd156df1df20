#include "ply.hpp"

#include <iomanip>
#include <sstream>
#include <string>

#include "instformer/error.hpp"

namespace instformer::cli {

void write_ply(std::ostream& out, std::span<const ColoredPoint> points) {
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nproperty int part\nend_header\n";
  out << std::setprecision(9);
  for (const auto& p : points)
    out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z() << ' ' << p.part << '\n';
}

std::vector<ColoredPoint> read_ply(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw FormatError("ply: missing magic line");
  std::size_t count = 0;
  bool have_count = false;
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream ls(line);
    std::string word, element;
    ls >> word;
    if (word == "format" && line != "format ascii 1.0") throw FormatError("ply: only ascii 1.0 is supported");
    if (word == "element") {
      ls >> element >> count;
      if (element != "vertex" || !ls) throw FormatError("ply: unexpected element line '" + line + "'");
      have_count = true;
    }
  }
  if (line != "end_header" || !have_count) throw FormatError("ply: incomplete header");
  std::vector<ColoredPoint> points(count);
  for (std::size_t i = 0; i < count; ++i) {
    double x, y, z;
    if (!(in >> x >> y >> z >> points[i].part))
      throw FormatError("ply: vertex " + std::to_string(i) + " of " + std::to_string(count) + " is missing");
    points[i].position = Vec3(x, y, z);
  }
  return points;
}

std::vector<ColoredPoint> posed_points(std::span<const PartCloud> parts, std::span<const Pose> poses) {
  if (parts.size() != poses.size()) throw InvalidArgument("posed_points: parts and poses differ in count");
  std::vector<ColoredPoint> out;
  for (std::size_t i = 0; i < parts.size(); ++i)
    for (const auto& p : apply_pose(poses[i], parts[i].points())) out.push_back({p, i});
  return out;
}

}  // namespace instformer::cli
