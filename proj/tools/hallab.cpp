#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hallab/cli.hpp"
#include "hallab/error.hpp"

// exit codes: 0 ok, 1 output validation failed, 2 bad config or input, 3 other failure
int main(int argc, char** argv) {
  CLI::App app{"hallab: spurious-correlation hallucination experiments"};
  app.require_subcommand(1);

  hallab::cli::GlobalOptions opts;
  std::string config, out;
  std::uint64_t seed = 0;
  int jobs = 1;

  const std::pair<const char*, const char*> subs[] = {
      {"sweep", "Confidence-detector sweep over rho on the sphere toy model"},
      {"biosgen", "Generate the synthetic biography datasets"},
      {"trace-eval", "Score hallucination detectors over model traces"},
      {"cooccur", "Entity co-occurrence buckets and confidence aggregates"},
      {"report", "Collect headline numbers from earlier run directories"},
  };
  for (const auto& [name, help] : subs) {
    auto* sc = app.add_subcommand(name, help);
    sc->add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
    sc->add_option("--seed", seed, "Global seed (overrides the config file)");
    sc->add_option("--jobs", jobs, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    sc->add_option("--out", out, "Output directory (HALLAB_OUT overrides)");
  }
  CLI11_PARSE(app, argc, argv);

  auto* sc = app.get_subcommands().front();
  if (sc->count("--config")) opts.config = config;
  if (sc->count("--seed")) opts.seed = seed;
  if (sc->count("--jobs")) opts.jobs = jobs;
  if (sc->count("--out")) opts.out = out;

  try {
    const auto outcome = hallab::cli::run(sc->get_name(), opts);
    for (const auto& f : outcome.files) std::cout << (outcome.out_dir / f).string() << '\n';
    for (const auto& f : outcome.failures) std::cerr << "validation failed: " << f << '\n';
    return outcome.ok() ? 0 : 1;
  } catch (const hallab::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const hallab::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
