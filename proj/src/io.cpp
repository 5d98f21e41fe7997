#include "charm/io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace charm {

std::string hairstyle_to_json(const Hairstyle& style) {
  nlohmann::json cards = nlohmann::json::array();
  for (const auto& card : style.cards) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : card.points)
      pts.push_back({p.position.x(), p.position.y(), p.position.z(), p.width, p.thickness});
    cards.push_back({{"points", pts}});
  }
  return nlohmann::json{{"cards", cards}}.dump(2);
}

Hairstyle hairstyle_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("hairstyle JSON: ") + e.what());
  }
  if (!j.contains("cards") || !j["cards"].is_array())
    throw ParseError("hairstyle JSON: missing \"cards\" array");
  Hairstyle style;
  for (const auto& jc : j["cards"]) {
    HairCard card;
    if (!jc.contains("points")) throw ParseError("hairstyle JSON: card missing \"points\"");
    for (const auto& jp : jc["points"]) {
      if (!jp.is_array() || jp.size() != 5)
        throw ParseError("hairstyle JSON: point is not a 5-tuple");
      ControlPoint cp;
      cp.position = Vec3(jp[0].get<double>(), jp[1].get<double>(), jp[2].get<double>());
      cp.width = jp[3].get<double>();
      cp.thickness = jp[4].get<double>();
      card.points.push_back(cp);
    }
    style.cards.push_back(std::move(card));
  }
  return style;
}

std::string mesh_to_obj(const HairMesh& mesh) {
  std::ostringstream os;
  os.precision(9);
  for (const auto& v : mesh.vertices)
    os << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  std::size_t next_card = 0, next_start = 0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    if (next_card < mesh.card_sizes.size() && f == next_start) {
      os << "o card_" << next_card << '\n';
      const std::size_t n = mesh.card_sizes[next_card];
      next_start += n >= 2 ? 8 * (n - 1) + 4 : 0;
      ++next_card;
    }
    const auto& t = mesh.faces[f];
    os << "f " << t.v[0] + 1 << ' ' << t.v[1] + 1 << ' ' << t.v[2] + 1 << '\n';
  }
  return os.str();
}

HairMesh mesh_from_obj(const std::string& text) {
  HairMesh mesh;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z))
        throw ParseError("OBJ: malformed vertex at line " + std::to_string(lineno));
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<long> idx;
      std::string item;
      while (ls >> item) {
        // accept "i", "i/..", "i//.." forms
        idx.push_back(std::stol(item.substr(0, item.find('/'))));
      }
      if (idx.size() != 3)
        throw ParseError("OBJ: non-triangle face at line " + std::to_string(lineno));
      Triangle t;
      for (int k = 0; k < 3; ++k) {
        long i = idx[k];
        if (i < 0) i = static_cast<long>(mesh.vertices.size()) + i + 1;
        if (i < 1 || i > static_cast<long>(mesh.vertices.size()))
          throw ParseError("OBJ: face index out of range at line " + std::to_string(lineno));
        t.v[k] = static_cast<std::uint32_t>(i - 1);
      }
      mesh.faces.push_back(t);
    } else if (tag == "o" || tag == "g" || tag == "s" || tag == "vn" || tag == "vt" ||
               tag == "usemtl" || tag == "mtllib") {
      continue;
    } else {
      throw ParseError("OBJ: unknown directive '" + tag + "' at line " + std::to_string(lineno));
    }
  }
  if (mesh.vertices.empty()) throw ParseError("OBJ: empty mesh");
  return mesh;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open file: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot write file: " + path);
  f << content;
}

Hairstyle load_hairstyle(const std::string& path) { return hairstyle_from_json(read_file(path)); }
void save_hairstyle(const Hairstyle& style, const std::string& path) {
  write_file(path, hairstyle_to_json(style));
}
HairMesh load_obj(const std::string& path) { return mesh_from_obj(read_file(path)); }
void save_obj(const HairMesh& mesh, const std::string& path) {
  write_file(path, mesh_to_obj(mesh));
}

}  // namespace charm
