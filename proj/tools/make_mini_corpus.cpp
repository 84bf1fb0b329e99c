// Writes the bundled phantom mini-corpus: raw/ and seg/ volumes,
// annotations.csv, and a synthetic_external/ split standing in for
// experiment B's externally generated images.
#include <iostream>

#include "CLI11.hpp"
#include "lungsynth/corpus.hpp"
#include "lungsynth/mini_corpus.hpp"
#include "lungsynth/rng.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the phantom mini-corpus", "make_mini_corpus"};
  std::string out = "data/mini";
  int patients = 3;
  std::uint64_t seed = 2024;
  lungsynth::PhantomOptions opts;
  app.add_option("--out", out, "Output directory");
  app.add_option("--patients", patients, "Number of phantom patients");
  app.add_option("--seed", seed, "Generator seed");
  app.add_option("--size", opts.size, "In-plane size");
  app.add_option("--slices", opts.slices, "Slices per volume");
  CLI11_PARSE(app, argc, argv);

  namespace fs = std::filesystem;
  try {
    const fs::path dir(out);
    lungsynth::write_phantom_set(dir, patients, opts, lungsynth::derive_seed(seed, 1));
    std::vector<lungsynth::VolumeInput> volumes;
    for (const auto& e : fs::directory_iterator(dir / "raw")) {
      if (e.path().extension() != ".mhd") continue;
      volumes.push_back({lungsynth::load_volume(e.path()), lungsynth::load_volume(dir / "seg" / e.path().filename())});
    }
    const auto anns = lungsynth::read_annotations(dir / "annotations.csv");
    const auto summary = lungsynth::enumerate_corpus(volumes, anns);
    const auto external = lungsynth::make_external_baseline(summary.pairs, summary.pairs, lungsynth::derive_seed(seed, 2));
    lungsynth::write_split(dir / "synthetic_external", external);
    std::cout << patients << " patients, " << summary.pairs.size() << " lung slices (" << summary.nodule_slices
              << " with nodules)\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
