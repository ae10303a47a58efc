#include <gtest/gtest.h>

#include <cstdlib>

#include "qpi/dataset.hpp"
#include "qpi/diffnet/gradcheck.hpp"
#include "qpi/training.hpp"
#include "test_support.hpp"

using namespace qpi;

namespace {

Architecture tiny_arch() {
  Architecture a;
  a.encoder_widths = {3, 4, 4};
  a.decoder_widths = {4, 4, 3, 2};
  return a;
}

const Dataset& tiny_dataset() {
  static const Dataset ds = [] {
    GenerationConfig g;
    g.kernel_count = 10;
    g.observations_per_kernel = 10;
    g.master_seed = 5;
    return generate_dataset(g);
  }();
  return ds;
}

TrainConfig tiny_config(TrainMode mode, int epochs) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = epochs;
  c.batch_size = 4;
  c.learning_rate = 3e-3;
  c.seed = 9;
  c.arch = tiny_arch();
  return c;
}

std::string checkpoint_bytes(const TrainResult& r, TrainMode m) {
  return diffnet::serialize_checkpoint(result_checkpoint(r, m));
}

class ThreadEnv {
public:
  explicit ThreadEnv(const char* n) { ::setenv("QPI_NUM_THREADS", n, 1); }
  ~ThreadEnv() { ::unsetenv("QPI_NUM_THREADS"); }
};

double mean_train_loss(const TrainResult& r, int epoch) {
  for (const auto& e : r.log)
    if (e.epoch == epoch && e.split == "train") return e.loss;
  return -1.0;
}

} // namespace

TEST(Training, Step1IsBitReproducible) {
  const auto cfg = tiny_config(TrainMode::step1, 2);
  std::string a, b;
  {
    ThreadEnv one("1");
    a = checkpoint_bytes(train_step1(tiny_dataset(), cfg), TrainMode::step1);
  }
  {
    ThreadEnv three("3");
    b = checkpoint_bytes(train_step1(tiny_dataset(), cfg), TrainMode::step1);
  }
  EXPECT_TRUE(a == b) << "checkpoints differ between 1 and 3 threads";
  auto other = cfg;
  other.seed = 10;
  EXPECT_FALSE(a == checkpoint_bytes(train_step1(tiny_dataset(), other), TrainMode::step1));
}

TEST(Training, Step1LossDecreases) {
  auto cfg = tiny_config(TrainMode::step1, 25);
  cfg.sample_latent = false;
  const auto r = train_step1(tiny_dataset(), cfg);
  EXPECT_EQ(r.epochs_run, 25);
  EXPECT_LT(mean_train_loss(r, 25), mean_train_loss(r, 1));
  EXPECT_TRUE(r.log.front().mse.has_value());
  const std::string csv = metrics_csv(r.log);
  EXPECT_EQ(csv.rfind("epoch,split,loss,mse,sym\n", 0), 0u);
}

TEST(Training, AlphaZeroLossIsReconstructionOnly) {
  const auto& ds = tiny_dataset();
  auto model = ModelBundle::create(tiny_arch(), true, true, false);
  Rng r(1);
  model.encoder_k->initialize(r);
  model.decoder_k->initialize(r);
  const auto& k = ds.kernels[2];
  const auto pass = autoencoder_pass(*model.encoder_k, *model.decoder_k, image_tensor(k.image), k.image,
                                     k.params.fold_count, {0.0, 0.0, 4}, nullptr, nullptr, nullptr);
  EXPECT_EQ(pass.parts.total, loss_mse(pass.recon, k.image));
  const auto with_sym = autoencoder_pass(*model.encoder_k, *model.decoder_k, image_tensor(k.image), k.image,
                                         k.params.fold_count, {0.75, 0.0, 4}, nullptr, nullptr, nullptr);
  EXPECT_DOUBLE_EQ(with_sym.parts.total, with_sym.parts.mse + 0.75 * with_sym.parts.sym);
}

TEST(Training, AutoencoderGradientCheck) {
  const auto& ds = tiny_dataset();
  auto model = ModelBundle::create(tiny_arch(), true, true, false);
  Rng init(4);
  model.encoder_k->initialize(init);
  model.decoder_k->initialize(init);
  const auto& k = ds.kernels[3];  // fold 4
  const Tensor in = image_tensor(k.image);
  for (double beta : {0.0, 1.0}) {
    const Step1Weights w{0.75, beta, 4};
    auto objective = [&](std::vector<diffnet::Gradients>* g) {
      Rng noise(77);
      return autoencoder_pass(*model.encoder_k, *model.decoder_k, in, k.image, k.params.fold_count, w, &noise,
                              g ? &(*g)[0] : nullptr, g ? &(*g)[1] : nullptr)
          .parts.total;
    };
    const auto rep = diffnet::check_gradients({&model.encoder_k->params(), &model.decoder_k->params()}, objective);
    EXPECT_GT(rep.checked, 200u);
    EXPECT_LE(rep.max_relative_error, 1e-4) << "beta " << beta << " worst " << rep.worst_block;
  }
}

TEST(Training, Step2FreezesKernelNetworks) {
  const auto& ds = tiny_dataset();
  const auto s1 = train_step1(ds, tiny_config(TrainMode::step1, 2));
  const auto s2 = train_step2(ds, s1.model, tiny_config(TrainMode::step2, 3));
  EXPECT_EQ(s2.model.encoder_k->params().size(), s1.model.encoder_k->params().size());
  for (std::size_t i = 0; i < s1.model.encoder_k->params().size(); ++i)
    EXPECT_EQ(s2.model.encoder_k->params()[i].value, s1.model.encoder_k->params()[i].value);
  for (std::size_t i = 0; i < s1.model.decoder_k->params().size(); ++i)
    EXPECT_EQ(s2.model.decoder_k->params()[i].value, s1.model.decoder_k->params()[i].value);
  EXPECT_TRUE(s2.model.encoder_k->frozen());
  EXPECT_TRUE(s2.model.decoder_k->frozen());
  EXPECT_FALSE(s2.model.encoder_y->frozen());
  EXPECT_TRUE(std::isfinite(s2.log.front().loss));
  const auto ck = result_checkpoint(s2, TrainMode::step2);
  ASSERT_TRUE(ck.optimizer.has_value());
  for (const auto& e : ck.optimizer->entries) EXPECT_EQ(e.key.rfind("encoder_y/", 0), 0u) << e.key;
}

TEST(Training, Step2ReducesAlignmentLoss) {
  const auto& ds = tiny_dataset();
  auto c1 = tiny_config(TrainMode::step1, 5);
  const auto s1 = train_step1(ds, c1);
  auto c2 = tiny_config(TrainMode::step2, 8);
  c2.validation_fraction = 0.0;
  const auto s2 = train_step2(ds, s1.model, c2);
  EXPECT_LT(mean_train_loss(s2, 8), mean_train_loss(s2, 1));
}

TEST(Training, ObservationEncoderInitSplitsInputFilters) {
  const auto a = tiny_arch();
  auto ek = make_encoder(a, 1);
  Rng r(2);
  ek.initialize(r);
  const auto ey = observation_encoder_from_kernel(a, ek);
  const auto& src = ek.params()[0].value;
  const auto& dst = ey.params()[0].value;
  ASSERT_EQ(dst.dims[1], 2);
  EXPECT_EQ(dst.values[9], 0.5 * src.values[0]);
  EXPECT_EQ(dst.values[0], 0.5 * src.values[0]);
  // identical Y and M channels reproduce the kernel encoder up to the split
  for (std::size_t i = 1; i < ek.params().size(); ++i) EXPECT_EQ(ey.params()[i].value, ek.params()[i].value);
}

TEST(Training, OneStepRunsAndImproves) {
  auto cfg = tiny_config(TrainMode::onestep, 6);
  cfg.sample_latent = false;
  const auto r = train_onestep(tiny_dataset(), cfg);
  EXPECT_TRUE(r.model.encoder_y.has_value());
  EXPECT_TRUE(r.model.decoder_k.has_value());
  EXPECT_FALSE(r.model.encoder_k.has_value());
  EXPECT_LT(mean_train_loss(r, 6), mean_train_loss(r, 1));
}

TEST(Training, PatienceStopsEarly) {
  auto cfg = tiny_config(TrainMode::step1, 30);
  cfg.learning_rate = 0.05;
  cfg.patience = 2;
  const auto r = train_step1(tiny_dataset(), cfg);
  EXPECT_LT(r.epochs_run, 30);
  EXPECT_EQ(r.epochs_run, r.best_epoch + cfg.patience);
}

TEST(Training, ConfigErrors) {
  auto cfg = tiny_config(TrainMode::step1, 0);
  EXPECT_THROW(train_step1(tiny_dataset(), cfg), ConfigError);
  cfg.epochs = 1;
  cfg.loss.alpha = -1.0;
  EXPECT_THROW(train_step1(tiny_dataset(), cfg), ConfigError);
  const auto no_kernel = ModelBundle::create(tiny_arch(), false, true, false);
  EXPECT_THROW(train_step2(tiny_dataset(), no_kernel, tiny_config(TrainMode::step2, 1)), InvalidArgument);
  EXPECT_EQ(max_epochs(TrainMode::step1), 350);
  EXPECT_EQ(max_epochs(TrainMode::step2), 40);
  EXPECT_EQ(max_epochs(TrainMode::onestep), 350);
}
