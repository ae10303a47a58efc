#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "qpi/dataset.hpp"
#include "qpi/evaluation.hpp"
#include "test_support.hpp"

using namespace qpi;
using qpi::testing::image_from;
using qpi::testing::pattern_a;
using qpi::testing::pattern_b;

namespace {

const Dataset& small_dataset() {
  static const Dataset ds = [] {
    GenerationConfig g;
    g.kernel_count = 5;
    g.observations_per_kernel = 10;
    g.master_seed = 21;
    return generate_dataset(g);
  }();
  return ds;
}

ModelBundle random_model(const Architecture& arch) {
  auto b = ModelBundle::create(arch, true, true, true);
  Rng r(3);
  b.encoder_k->initialize(r);
  b.decoder_k->initialize(r);
  b.encoder_y->initialize(r);
  return b;
}

Architecture tiny_arch() {
  Architecture a;
  a.encoder_widths = {2, 2, 2};
  a.decoder_widths = {2, 2, 2, 2};
  return a;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  return out;
}

} // namespace

TEST(Metrics, IdentityAndOffset) {
  const Image a = image_from(pattern_a);
  const auto m = compute_metrics({a, a}, {a, a});
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.count, 2u);
  Image b = a;
  for (double& v : b.storage()) v += 0.5;
  const auto o = compute_metrics({b}, {a});
  EXPECT_DOUBLE_EQ(o.mae, 0.5);
  EXPECT_DOUBLE_EQ(o.mse, 0.25);
  EXPECT_DOUBLE_EQ(o.rmse, 0.5);
}

TEST(Metrics, PinnedPooledValues) {
  const std::vector<Image> preds = {image_from(pattern_a), image_from(pattern_b)};
  const std::vector<Image> targets = {image_from(pattern_b),
                                      image_from([](int y, int x) { return 0.1 * pattern_a(x, y); })};
  const auto m = compute_metrics(preds, targets);
  EXPECT_NEAR(m.mae, 0.35660271729907805, 1e-15);
  EXPECT_NEAR(m.mse, 0.2116318633313363, 1e-15);
  EXPECT_NEAR(m.rmse, 0.46003463275207473, 1e-15);
  // equal-size images: per-image averaging gives the same MAE and MSE
  const auto p = compute_metrics(preds, targets, true);
  EXPECT_NEAR(p.mae, m.mae, 1e-15);
  EXPECT_NEAR(p.mse, m.mse, 1e-15);
}

TEST(Metrics, OrderInvariantAndConsistent) {
  std::vector<Image> preds, targets;
  for (int k = 0; k < 7; ++k) {
    preds.push_back(image_from([k](int y, int x) { return std::sin(0.1 * k * y + 0.03 * x) * 1e3 * (k % 2 ? 1 : 1e-6); }));
    targets.push_back(image_from([k](int y, int x) { return std::cos(0.07 * x - k) * 0.1; }));
  }
  const auto m = compute_metrics(preds, targets);
  std::vector<std::size_t> order = {6, 2, 4, 0, 5, 1, 3};
  std::vector<Image> p2, t2;
  for (auto i : order) {
    p2.push_back(preds[i]);
    t2.push_back(targets[i]);
  }
  const auto m2 = compute_metrics(p2, t2);
  EXPECT_EQ(m.mae, m2.mae);
  EXPECT_EQ(m.mse, m2.mse);
  EXPECT_EQ(m.rmse, std::sqrt(m.mse));
  EXPECT_LE(m.mae, m.rmse);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(compute_metrics({}, {}), InvalidArgument);
  EXPECT_THROW(compute_metrics({Image(64, 64)}, {}), DimensionError);
  EXPECT_THROW(compute_metrics({Image(64, 64)}, {Image(32, 32)}), DimensionError);
  EXPECT_THROW(compute_metrics({Image(8, 8), Image(4, 4)}, {Image(8, 8), Image(4, 4)}), DimensionError);
  EXPECT_THROW(parse_method("two-step"), InvalidArgument);
  EXPECT_EQ(parse_method("one_step"), Method::one_step);
}

TEST(Evaluate, DeconvNearExactAndCsvReaggregates) {
  const auto& ds = small_dataset();
  const auto ev = evaluate_model(Method::deconv, nullptr, ds, SampleSplit::ood_test);
  EXPECT_EQ(ev.summary.method, "deconv");
  EXPECT_EQ(ev.summary.split, "ood_test");
  EXPECT_EQ(ev.rows.size(), ds.split(SampleSplit::ood_test).size());
  EXPECT_LE(ev.summary.rmse, 1e-3);

  const std::string csv = per_sample_csv(ev);
  std::stringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "kernel_id,sample_id,mae,mse,rmse");
  double mae = 0.0, mse = 0.0;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto f = split_fields(line);
    ASSERT_EQ(f.size(), 5u);
    mae += std::stod(f[2]);
    mse += std::stod(f[3]);
    ++n;
  }
  ASSERT_EQ(n, ev.rows.size());
  EXPECT_NEAR(mae / static_cast<double>(n), ev.summary.mae, 1e-12 + 1e-9 * ev.summary.mae);
  EXPECT_NEAR(mse / static_cast<double>(n), ev.summary.mse, 1e-15 + 1e-9 * ev.summary.mse);
}

TEST(Evaluate, LearnedMethodUsesObservationEncoder) {
  const auto& ds = small_dataset();
  const auto model = random_model(tiny_arch());
  const auto ev = evaluate_model(Method::two_step, &model, ds, SampleSplit::id_test);
  const auto samples = ds.split(SampleSplit::id_test);
  ASSERT_EQ(ev.rows.size(), samples.size());
  const Image pred = infer_kernel(model, samples[0]->observation_image(), samples[0]->activation_image());
  const auto e = image_error(pred, ds.kernel(samples[0]->kernel_id).image);
  EXPECT_EQ(ev.rows[0].error.mse, e.mse);

  auto no_y = model;
  no_y.encoder_y.reset();
  EXPECT_THROW(evaluate_model(Method::one_step, &no_y, ds, SampleSplit::id_test), InvalidArgument);
  EXPECT_THROW(evaluate_model(Method::two_step, nullptr, ds, SampleSplit::id_test), InvalidArgument);
}

TEST(Evaluate, SummaryTable) {
  MetricsRecord a;
  a.split = "ood_test";
  a.method = "two_step";
  a.mae = 0.01;
  a.mse = 0.0004;
  a.rmse = 0.02;
  a.count = 7;
  const std::string t = summary_table({a});
  EXPECT_NE(t.find("setting"), std::string::npos);
  EXPECT_NE(t.find("ood_test"), std::string::npos);
  EXPECT_NE(t.find("0.0200"), std::string::npos);
}

TEST(Latents, KernelAndObservationExports) {
  const auto& ds = small_dataset();
  const auto model = random_model(Architecture{});
  const std::string k = export_latents(model, ds, SampleSplit::train, false);
  std::stringstream in(k);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(split_fields(line).size(), 2u + 256u);
  EXPECT_EQ(line.rfind("kernel_id,fold_count,z0,", 0), 0u);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(split_fields(line).size(), 258u);
    ++rows;
  }
  EXPECT_EQ(rows, ds.kernels_in(KernelSplit::train).size());

  const std::string ood = export_latents(model, ds, SampleSplit::ood_test, false);
  EXPECT_EQ(static_cast<std::size_t>(std::count(ood.begin(), ood.end(), '\n')),
            1 + ds.kernels_in(KernelSplit::test).size());

  const std::string y = export_latents(model, ds, SampleSplit::id_test, true);
  EXPECT_EQ(y.rfind("kernel_id,sample_id,fold_count,z0,", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(y.begin(), y.end(), '\n')), 1 + ds.split(SampleSplit::id_test).size());

  auto no_k = model;
  no_k.encoder_k.reset();
  EXPECT_THROW(export_latents(no_k, ds, SampleSplit::train, false), InvalidArgument);
}
