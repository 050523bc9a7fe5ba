#include <doctest.h>

#include <filesystem>

#include "nodebench/config.hpp"

using namespace nodebench;
namespace fs = std::filesystem;

TEST_CASE("defaults are materialized on save") {
  const ExperimentConfig c = ExperimentConfig::parse("");
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(c.families.size() == 4);
  CHECK(c.perturbations.empty());
  CHECK(ExperimentConfig::parse(c.serialize()).train.weight_decay == 5e-4);
  const std::string text = c.serialize();
  for (const std::string key : {"name = ", "seeds = 0, 1, 2", "dataset = synthetic", "families = cnn",
                                "scheme = ", "lambda_ss = 0.1", "perturbations ="}) {
    CHECK(text.find(key) != std::string::npos);
  }
}

TEST_CASE("config round trip is lossless") {
  ExperimentConfig c;
  c.name = "sweep";
  c.out_dir = "out/sweep";
  c.seeds = {4, 9};
  c.jobs = 2;
  c.data.dataset = "mnist";
  c.data.root = "/data/mnist";
  c.data.train_size = 1000;
  c.data.test_size = 200;
  c.data.seed = 5;
  c.families = {RmKind::kTisode, RmKind::kResidual};
  c.ode.t_end = 0.5;
  c.ode.step = 0.1;
  c.ode.scheme = Scheme::kRk4;
  c.weight_tied_repeats = 5;
  c.weight_tied_scale = 0.1;
  c.train.epochs = 3;
  c.train.learning_rate = 0.01;
  c.train.lr_milestones.clear();
  c.train.regime = Regime::kGaussian;
  c.train.sigmas = {25.0, 60.5};
  c.train.lambda_ss = 0.0;
  c.train.max_steps = 7;
  c.perturbations = {PerturbationSpec::parse("gaussian(75,clip)"), PerturbationSpec::parse("fgsm(0.15)"),
                     PerturbationSpec::parse("pgd(0.2,40,0.02,rand)")};
  c.eval_seed = 11;

  const std::string text = c.serialize();
  const ExperimentConfig back = ExperimentConfig::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.train.lr_milestones.empty());
  CHECK(back.train.sigmas == std::vector<double>{25.0, 60.5});
  CHECK(back.families == c.families);
  CHECK(back.perturbations.size() == 3);
  CHECK(back.model_config().ode.step == 0.1);

  const auto path = fs::temp_directory_path() / "nodebench_config_round_trip.ini";
  c.save(path);
  CHECK(ExperimentConfig::load(path).serialize() == text);
  fs::remove(path);
}

TEST_CASE("unknown keys and sections are rejected") {
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse("[train]\nepochz = 3\n"), doctest::Contains("epochz"), ConfigError);
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse("[trainer]\nepochs = 3\n"), doctest::Contains("trainer"),
                       ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("epochs = 3\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[train]\nepochs = three\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[train]\nregime = mixup\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[eval]\nperturbations = fgsm(0.1); cw(1)\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[data]\ndataset = cifar\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[experiment]\nseeds =\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.ini"), InputError);
}

TEST_CASE("synthetic data sets the class count") {
  const ExperimentConfig c = ExperimentConfig::parse("[data]\nclasses = 3\n");
  CHECK(c.model_config().num_classes == 3);
  CHECK(ExperimentConfig::parse("[data]\ndataset = mnist\n").model_config().num_classes == 10);
}
