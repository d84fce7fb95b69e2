#include <fstream>
#include <sstream>

#include <json.hpp>

#include "evoart/genome.hpp"

namespace evoart {

namespace {

using nlohmann::json;

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

std::string location_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1, column = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(column);
}

double unit_number(const json& j, const std::string& field) {
  if (!j.is_number()) throw SceneParseError(field + ": expected a number");
  const double v = j.get<double>();
  if (!(v >= 0.0 && v <= 1.0)) throw SceneParseError(field + ": value " + j.dump() + " outside [0,1]");
  return v;
}

Vec3 unit_vec(const json& obj, const char* key, const std::string& where) {
  const std::string field = where + "." + key;
  if (!obj.contains(key)) throw SceneParseError(field + ": missing");
  const json& j = obj.at(key);
  if (!j.is_array() || j.size() != 3) throw SceneParseError(field + ": expected an array of 3 numbers");
  return {unit_number(j[0], field + "[0]"), unit_number(j[1], field + "[1]"), unit_number(j[2], field + "[2]")};
}

}  // namespace

std::string scene_to_json(const Scene& scene) {
  json tris = json::array();
  for (const Triangle& t : scene.triangles) {
    tris.push_back({{"v1", vec_json(t.v1)},
                    {"v2", vec_json(t.v2)},
                    {"v3", vec_json(t.v3)},
                    {"color", vec_json(t.color)},
                    {"alpha", t.alpha}});
  }
  return json{{"triangles", tris}}.dump(2);
}

Scene scene_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SceneParseError("malformed JSON at " + location_of(text, e.byte == 0 ? 0 : e.byte - 1) + ": " +
                          e.what());
  }
  if (!doc.is_object() || !doc.contains("triangles")) throw SceneParseError("triangles: missing");
  const json& tris = doc.at("triangles");
  if (!tris.is_array()) throw SceneParseError("triangles: expected an array");

  Scene scene;
  scene.triangles.reserve(tris.size());
  for (std::size_t i = 0; i < tris.size(); ++i) {
    const std::string where = "triangles[" + std::to_string(i) + "]";
    const json& t = tris[i];
    if (!t.is_object()) throw SceneParseError(where + ": expected an object");
    Triangle tri;
    tri.v1 = unit_vec(t, "v1", where);
    tri.v2 = unit_vec(t, "v2", where);
    tri.v3 = unit_vec(t, "v3", where);
    tri.color = unit_vec(t, "color", where);
    if (!t.contains("alpha")) throw SceneParseError(where + ".alpha: missing");
    tri.alpha = unit_number(t.at("alpha"), where + ".alpha");
    scene.triangles.push_back(tri);
  }
  return scene;
}

void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scene file " + path);
  out << scene_to_json(scene) << '\n';
  if (!out) throw std::runtime_error("failed writing scene file " + path);
}

Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return scene_from_json(buffer.str());
  } catch (const SceneParseError& e) {
    throw SceneParseError(path + ": " + e.what());
  }
}

}  // namespace evoart
