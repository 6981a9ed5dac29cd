#include "datforge/pseudo_labels.hpp"

#include <fstream>

#include <json.hpp>

namespace datforge::plabel {

using json = nlohmann::ordered_json;

void save(const std::filesystem::path& path, const PseudoLabels& labels) {
  json doc;
  doc["delta"] = static_cast<double>(labels.delta);
  doc["labeller"] = labels.labeller;
  doc["images"] = json::array();
  for (std::size_t id = 0; id < labels.images.size(); ++id) {
    json boxes = json::array();
    for (const auto& d : labels.images[id]) {
      boxes.push_back({{"class_id", d.box.class_id},
                       {"x_min", static_cast<double>(d.box.x_min)},
                       {"y_min", static_cast<double>(d.box.y_min)},
                       {"x_max", static_cast<double>(d.box.x_max)},
                       {"y_max", static_cast<double>(d.box.y_max)},
                       {"confidence", static_cast<double>(d.confidence)}});
    }
    doc["images"].push_back({{"id", static_cast<int>(id)}, {"boxes", boxes}});
  }
  std::ofstream out(path);
  if (!out) raise(ErrorKind::io, "cannot write pseudo-label file ", path.string());
  out << doc.dump(2) << "\n";
  if (!out) raise(ErrorKind::io, "failed writing pseudo-label file ", path.string());
}

PseudoLabels load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::missing, "pseudo-label file not found: ", path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    raise(ErrorKind::format, "malformed pseudo-label file ", path.string(), ": ", e.what());
  }
  PseudoLabels labels;
  labels.delta = static_cast<float>(doc.at("delta").get<double>());
  labels.labeller = doc.at("labeller").get<std::string>();
  int expected = 0;
  for (const auto& entry : doc.at("images")) {
    const int id = entry.at("id").get<int>();
    if (id != expected)
      raise(ErrorKind::format, "pseudo-label file ", path.string(), ": unexpected image id ", id,
            " (expected ", expected, ")");
    ++expected;
    std::vector<detector::Detection> dets;
    for (const auto& jb : entry.at("boxes")) {
      detector::Detection d;
      d.box.class_id = jb.at("class_id").get<int>();
      d.box.x_min = static_cast<float>(jb.at("x_min").get<double>());
      d.box.y_min = static_cast<float>(jb.at("y_min").get<double>());
      d.box.x_max = static_cast<float>(jb.at("x_max").get<double>());
      d.box.y_max = static_cast<float>(jb.at("y_max").get<double>());
      d.confidence = static_cast<float>(jb.at("confidence").get<double>());
      dets.push_back(d);
    }
    labels.images.push_back(std::move(dets));
  }
  return labels;
}

}  // namespace datforge::plabel
