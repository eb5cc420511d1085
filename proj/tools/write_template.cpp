// Writes the canonical kinematic template to data/body_template.json.
#include <iostream>

#include "bodyslam/bodymodel.hpp"

int main(int argc, char** argv) {
  const std::string path = argc > 1 ? argv[1] : std::string(BODYSLAM_DATA_DIR) + "/body_template.json";
  bodyslam::write_json_file(path, bodyslam::template_to_json(bodyslam::canonical_template()));
  std::cout << "wrote " << path << "\n";
  return 0;
}
