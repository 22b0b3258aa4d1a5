// Thin data-plumbing front end: synthetic scene generation and range/null
// decomposition, same handlers as the matching nukesctl subcommands.
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "nukes/hsicube.hpp"

using namespace nukes;

int main(int argc, char** argv) {
  CLI::App app{"hsic: hyperspectral cube utilities"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic scene");
  uint64_t seed = 0;
  int bands = 31, endmembers = 4;
  double smoothness = 3.0;
  std::string size = "32x32", out_file;
  synth->add_option("--seed", seed);
  synth->add_option("--bands", bands);
  synth->add_option("--size", size, "WxH");
  synth->add_option("--endmembers", endmembers);
  synth->add_option("--smoothness", smoothness);
  synth->add_option("-o,--out", out_file)->required();

  auto* rnd = app.add_subcommand("rnd", "range/null decomposition");
  std::string srf_path, in_file, out_range, out_null;
  rnd->add_option("--srf", srf_path);
  rnd->add_option("--in", in_file)->required();
  rnd->add_option("--range", out_range);
  rnd->add_option("--null", out_null);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  try {
    if (*synth) {
      auto x = size.find('x');
      if (x == std::string::npos) {
        std::fprintf(stderr, "error: size must look like WxH\n");
        return 1;
      }
      SceneSpec spec;
      spec.seed = seed;
      spec.bands = bands;
      spec.width = std::stoi(size.substr(0, x));
      spec.height = std::stoi(size.substr(x + 1));
      spec.n_endmembers = endmembers;
      spec.spatial_smoothness = smoothness;
      save_cube(synth_scene(spec), out_file);
      std::printf("wrote %dx%dx%d cube to %s\n", spec.width, spec.height, bands,
                  out_file.c_str());
      return 0;
    }
    if (*rnd) {
      HsiCube cube = load_cube(in_file);
      SrfOperator srf = srf_path.empty() ? default_srf(cube.bands) : load_srf_csv(srf_path);
      if (!out_range.empty()) save_cube(range_component(cube, srf), out_range);
      if (!out_null.empty()) save_cube(null_component(cube, srf), out_null);
      std::printf("decomposed %s (C=%d)\n", in_file.c_str(), cube.bands);
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
