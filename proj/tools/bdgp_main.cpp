// Batch front end: one subcommand per pipeline stage, all driven by a JSON
// config. Command-line flags override the matching config entries.
#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "bdgp/error.hpp"
#include "bdgp/parallel.hpp"
#include "bdgp/pipeline.hpp"

namespace {

struct Common {
  std::optional<std::string> config;
  std::optional<unsigned> threads;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file");
  sub->add_option("--threads", c.threads, "worker threads (0 = all cores)");
  sub->add_option("--seed", c.seed, "master random seed");
  sub->add_option("--out", c.out, "output directory");
}

bdgp::PipelineConfig load(const Common& c) {
  bdgp::PipelineConfig cfg = c.config ? bdgp::PipelineConfig::load(*c.config) : bdgp::PipelineConfig{};
  if (c.threads) cfg.threads = *c.threads;
  if (c.seed) cfg.seed = *c.seed;
  // --out is relative to the working directory, not to the config file.
  if (c.out) cfg.out_dir = std::filesystem::absolute(*c.out);
  if (cfg.threads == 0) cfg.threads = bdgp::default_threads();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-diagonal GP downscaling of blurred gridded fields"};
  app.require_subcommand(1);
  Common common;

  auto* refine = app.add_subcommand("refine", "turn overlapping masks into a partition");
  add_common(refine, common);

  auto* fit_mean = app.add_subcommand("fit-mean", "fit per-pixel harmonic means and write residuals");
  add_common(fit_mean, common);
  std::string sensor = "hires";
  fit_mean->add_option("--sensor", sensor, "hires (annual only) or lowres (annual + diurnal)")
      ->check(CLI::IsMember({"hires", "lowres"}));

  auto* fit_params = app.add_subcommand("fit-params", "fit per-region covariance parameters");
  add_common(fit_params, common);

  auto* krige = app.add_subcommand("krige", "reconstruct the latent residual field");
  add_common(krige, common);

  auto* verify = app.add_subcommand("verify", "synthetic blur-and-recover experiment");
  add_common(verify, common);

  auto* render = app.add_subcommand("render", "write a PNG heatmap of a raster file");
  add_common(render, common);
  std::optional<std::string> input, output, palette;
  std::optional<std::size_t> layer;
  render->add_option("--input", input, "raster or layered raster file");
  render->add_option("--layer", layer, "layer index for layered files");
  render->add_option("--palette", palette, "gray, viridis, coolwarm or labels");
  render->add_option("--output", output, "PNG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    bdgp::PipelineConfig cfg = load(common);
    nlohmann::ordered_json summary;
    if (refine->parsed()) {
      summary = bdgp::cmd_refine(cfg);
    } else if (fit_mean->parsed()) {
      summary = bdgp::cmd_fit_mean(cfg, bdgp::sensor_from_name(sensor));
    } else if (fit_params->parsed()) {
      summary = bdgp::cmd_fit_params(cfg);
    } else if (krige->parsed()) {
      summary = bdgp::cmd_krige(cfg);
    } else if (verify->parsed()) {
      summary = bdgp::cmd_verify(cfg);
    } else if (render->parsed()) {
      if (input) cfg.render.input_path = std::filesystem::absolute(*input);
      if (output) cfg.render.output_path = std::filesystem::absolute(*output);
      if (palette) cfg.render.palette = *palette;
      if (layer) cfg.render.layer = *layer;
      summary = bdgp::cmd_render(cfg);
    }
    std::cout << summary.dump(2) << "\n";
    return 0;
  } catch (const bdgp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return bdgp::exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
