// Writes a synthetic moving-square dataset and a matching config.json.
#include <iostream>

#include <CLI11.hpp>

#include "lapact/error.hpp"
#include "lapact/fixture.hpp"

int main(int argc, char **argv) {
  CLI::App app{"Generate a synthetic laparoscopic-action fixture", "lapact_fixture"};
  lapact::fixture::FixtureSpec spec;
  std::string root;
  app.add_option("root", root, "Output directory")->required();
  app.add_option("--videos", spec.videos, "Number of videos; the last is the test video");
  app.add_option("--interval-frames", spec.interval_frames, "Frames per annotated interval");
  app.add_option("--height", spec.height);
  app.add_option("--width", spec.width);
  app.add_option("--seed", spec.seed);
  CLI11_PARSE(app, argc, argv);
  try {
    const auto fx = lapact::fixture::generate(spec, root);
    std::cout << "wrote " << fx.manifests.size() << " videos; config: " << fx.config.string() << '\n';
  } catch (const lapact::Error &e) {
    std::cerr << "error [" << e.module() << "]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
