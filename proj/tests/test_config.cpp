#include <gtest/gtest.h>

#include <fstream>

#include "qpi/config.hpp"
#include "test_support.hpp"

using namespace qpi;

TEST(Config, Defaults) {
  const Config c;
  const auto t = c.training(TrainMode::step1);
  EXPECT_EQ(t.loss.alpha, 0.75);
  EXPECT_EQ(t.loss.beta, 0.0);
  EXPECT_EQ(t.learning_rate, 1e-4);
  EXPECT_EQ(t.batch_size, 8);
  EXPECT_EQ(t.epochs, 350);
  EXPECT_EQ(c.training(TrainMode::step2).epochs, 40);
  const auto g = c.generation();
  EXPECT_EQ(g.kernel_count, 100);
  EXPECT_EQ(g.observations_per_kernel, 500);
  EXPECT_EQ(g.kernel_train_fraction, 0.8);
  const auto e = c.evaluation();
  EXPECT_EQ(e.tikhonov.lambda, 1e-8);
  EXPECT_EQ(e.deconv_support, 64);
  EXPECT_FALSE(e.per_image);
}

TEST(Config, OverridesAndFiles) {
  Config c;
  c.apply("alpha=0");
  c.apply(" learning_rate = 3e-4 ");
  EXPECT_EQ(c.training(TrainMode::step1).loss.alpha, 0.0);
  EXPECT_EQ(c.training(TrainMode::step1).learning_rate, 3e-4);

  qpi::testing::TempDir dir("config");
  {
    std::ofstream out(dir.str("run.cfg"));
    out << "# desk run\nkernels = 20\nobs = 50  # per kernel\n\nbatch_size=4\n";
  }
  const Config f = load_config(dir.str("run.cfg"), {"batch_size=16"});
  EXPECT_EQ(f.generation().kernel_count, 20);
  EXPECT_EQ(f.generation().observations_per_kernel, 50);
  EXPECT_EQ(f.training(TrainMode::step1).batch_size, 16);
  EXPECT_THROW(load_config(dir.str("missing.cfg"), {}), ConfigError);
}

TEST(Config, NamedErrors) {
  auto message = [](const std::string& assignment) -> std::string {
    try {
      Config c;
      c.apply(assignment);
      c.validate();
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message("alpha=-1").find("alpha"), std::string::npos);
  EXPECT_NE(message("alphaa=1").find("unknown config key 'alphaa'"), std::string::npos);
  EXPECT_NE(message("batch_size=0").find("batch_size"), std::string::npos);
  EXPECT_NE(message("learning_rate=abc").find("learning_rate"), std::string::npos);
  EXPECT_NE(message("kernels=7").find("kernels"), std::string::npos);
  EXPECT_NE(message("lambda=-1").find("lambda"), std::string::npos);
  EXPECT_NE(message("sample_latent=maybe").find("sample_latent"), std::string::npos);
  EXPECT_NE(message("encoder_y_init=zeros").find("encoder_y_init"), std::string::npos);
  EXPECT_NE(message("support=32").find("support"), std::string::npos);
  EXPECT_EQ(message("alpha=0"), "");
  Config c;
  EXPECT_THROW(c.apply("no equals sign"), ConfigError);
  EXPECT_THROW(c.parse("alpha = 1\nbogus = 2\n", "f.cfg"), ConfigError);
}

TEST(Config, EpochLimit) {
  Config c;
  c.apply("epochs=351");
  EXPECT_THROW(c.training(TrainMode::step1), ConfigError);
  c.apply("epochs=41");
  EXPECT_NO_THROW(c.training(TrainMode::step1));
  EXPECT_THROW(c.training(TrainMode::step2), ConfigError);
  c.apply("enforce_epoch_limit=false");
  EXPECT_EQ(c.training(TrainMode::step2).epochs, 41);
}

TEST(Config, EchoRoundTrip) {
  Config c;
  c.apply("alpha=0.5");
  c.apply("seed=42");
  c.resolve(TrainMode::step2);
  const std::string text = c.echo();
  EXPECT_NE(text.find("epochs = 40\n"), std::string::npos);
  EXPECT_EQ(text.rfind("seed = 42\n", 0), 0u);
  Config back;
  back.parse(text);
  EXPECT_EQ(back.values(), c.values());
  EXPECT_EQ(back.echo(), text);
}
