// Pseudo-label files: thresholded detections per target image, produced
// offline by a labeller and consumed by the student trainer and the audits.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "datforge/detector.hpp"

namespace datforge::plabel {

struct PseudoLabels {
  float delta = 0.8f;
  std::string labeller;
  // indexed by image id; ids are dense 0..N-1
  std::vector<std::vector<detector::Detection>> images;

  const std::vector<detector::Detection>& for_image(int id) const {
    if (id < 0 || id >= static_cast<int>(images.size()))
      raise(ErrorKind::missing, "pseudo-label file has no entry for image id ", id);
    return images[static_cast<std::size_t>(id)];
  }
};

void save(const std::filesystem::path& path, const PseudoLabels& labels);
PseudoLabels load(const std::filesystem::path& path);

}  // namespace datforge::plabel
