// qpi: dataset generation, training, inference, deconvolution, evaluation
// and latent export from one binary.
//
// Exit status: 0 success, 1 domain error, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qpi/qpi.hpp"

namespace fs = std::filesystem;

#ifndef QPI_VERSION_STRING
#define QPI_VERSION_STRING "unknown"
#endif

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
};

struct Args {
  Common common;
  std::string data;
  std::string checkpoint;
  std::string step1;
  std::string split = "ood_test";
  std::string method;
  std::string encoder = "k";
  int kernel_id = -1;
  // gen shortcuts, forwarded as overrides
  std::optional<int> kernels, obs;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c, bool out_required = true) {
  sub->add_option("-c,--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  sub->add_option("-s,--set", c.overrides, "override as key=value (repeatable)");
  auto* o = sub->add_option("-o,--out", c.out, "output directory");
  if (out_required) o->required();
}

void write_text(const fs::path& p, const std::string& text) { qpi::detail::write_file(p.string(), text); }

void write_run_record(const fs::path& dir, const std::string& command, const std::vector<std::string>& argv,
                      const qpi::Config& cfg, const nlohmann::ordered_json& inputs) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["argv"] = argv;
  j["version"] = QPI_VERSION_STRING;
  j["seed"] = cfg.raw("seed");
  nlohmann::ordered_json snap;
  for (const auto& [k, v] : cfg.values()) snap[k] = v;
  j["config"] = snap;
  j["inputs"] = inputs;
  write_text(dir / "run.json", j.dump(2) + "\n");
  write_text(dir / "config.txt", cfg.echo());
}

qpi::KernelSplit kernel_split_for(qpi::SampleSplit s) {
  return s == qpi::SampleSplit::ood_test ? qpi::KernelSplit::test : qpi::KernelSplit::train;
}

qpi::Blob images_blob(const std::vector<qpi::Image>& imgs) {
  qpi::Blob b;
  const auto h = imgs.empty() ? 0 : imgs[0].height(), w = imgs.empty() ? 0 : imgs[0].width();
  b.dims = {static_cast<std::uint32_t>(imgs.size()), static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w)};
  for (const auto& im : imgs)
    for (double v : im.storage()) b.values.push_back(static_cast<float>(v));
  return b;
}

qpi::ModelBundle load_model(const std::string& path) {
  if (path.empty()) throw qpi::InvalidArgument("--checkpoint is required");
  if (!fs::exists(path)) throw qpi::IoError("checkpoint not found: " + path);
  return qpi::from_checkpoint(qpi::diffnet::load_checkpoint(path));
}

int run(const std::string& command, const Args& a, const std::vector<std::string>& argv) {
  qpi::Config cfg = qpi::load_config(a.common.config_path, {});
  if (a.kernels) cfg.set("kernels", std::to_string(*a.kernels));
  if (a.obs) cfg.set("obs", std::to_string(*a.obs));
  if (a.seed) cfg.set("seed", std::to_string(*a.seed));
  for (const auto& o : a.common.overrides) cfg.apply(o);
  cfg.validate(command == "train-step2" ? qpi::TrainMode::step2 : qpi::TrainMode::step1);

  const fs::path out = a.common.out;
  if (!out.empty()) fs::create_directories(out);
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
  if (!a.data.empty()) inputs["data"] = a.data;

  if (command == "gen") {
    const auto g = cfg.generation();
    std::cout << cfg.echo();
    const auto ds = qpi::generate_dataset(g);
    qpi::write_dataset(ds, out.string());
    write_run_record(out, command, argv, cfg, inputs);
    std::cout << "kernels: " << ds.kernels.size() << " samples: " << ds.samples.size() << "\n";
    return 0;
  }

  if (command == "train-step1" || command == "train-step2" || command == "train-onestep") {
    const qpi::TrainMode mode = command == "train-step1"   ? qpi::TrainMode::step1
                                : command == "train-step2" ? qpi::TrainMode::step2
                                                           : qpi::TrainMode::onestep;
    cfg.resolve(mode);
    const auto tc = cfg.training(mode);
    std::optional<qpi::ModelBundle> step1;
    if (mode == qpi::TrainMode::step2) {
      if (a.step1.empty()) throw qpi::InvalidArgument("train-step2 needs a step-1 checkpoint (--step1 PATH)");
      if (!fs::exists(a.step1)) throw qpi::IoError("step-1 checkpoint not found: " + a.step1);
      step1 = qpi::from_checkpoint(qpi::diffnet::load_checkpoint(a.step1));
      inputs["step1"] = a.step1;
    }
    std::cout << cfg.echo();
    const auto ds = qpi::load_dataset(a.data);
    qpi::TrainResult r = mode == qpi::TrainMode::step1   ? qpi::train_step1(ds, tc)
                         : mode == qpi::TrainMode::step2 ? qpi::train_step2(ds, *step1, tc)
                                                         : qpi::train_onestep(ds, tc);
    qpi::diffnet::save_checkpoint((out / "checkpoint.qpiw").string(), qpi::result_checkpoint(r, mode));
    write_text(out / "metrics.csv", qpi::metrics_csv(r.log));
    write_run_record(out, command, argv, cfg, inputs);
    std::printf("epochs run: %d, best epoch: %d, best validation loss: %.6g\n", r.epochs_run, r.best_epoch,
                r.best_validation);
    return 0;
  }

  if (command == "infer") {
    const auto model = load_model(a.checkpoint);
    if (!model.encoder_y || !model.decoder_k)
      throw qpi::InvalidArgument("inference needs a checkpoint with encoder_y and decoder_k");
    const auto ds = qpi::load_dataset(a.data);
    const auto split = qpi::parse_sample_split(a.split);
    const auto samples = ds.split(split);
    std::vector<qpi::Image> preds(samples.size());
    qpi::parallel_for(samples.size(), [&](std::size_t i) {
      preds[i] = qpi::infer_kernel(model, samples[i]->observation_image(), samples[i]->activation_image());
    });
    qpi::write_blob((out / ("predictions_" + a.split + ".qpi")).string(), images_blob(preds));
    inputs["checkpoint"] = a.checkpoint;
    inputs["split"] = a.split;
    write_run_record(out, command, argv, cfg, inputs);
    std::cout << "inferred " << preds.size() << " kernels\n";
    return 0;
  }

  if (command == "deconv") {
    const auto opt = cfg.evaluation();
    std::cout << cfg.echo();
    const auto ds = qpi::load_dataset(a.data);
    const auto split = qpi::parse_sample_split(a.split);
    std::vector<const qpi::KernelEntry*> kernels;
    for (const auto* k : ds.kernels_in(kernel_split_for(split)))
      if (a.kernel_id < 0 || k->id == a.kernel_id) kernels.push_back(k);
    if (kernels.empty()) throw qpi::InvalidArgument("no kernels selected in split " + a.split);
    std::vector<qpi::Image> recovered;
    std::string report;
    bool all_converged = true;
    for (const auto* k : kernels) {
      std::vector<std::vector<qpi::PixelCoord>> maps;
      std::vector<qpi::Image> obs;
      for (const auto* s : ds.split(split)) {
        if (s->kernel_id != k->id || static_cast<int>(obs.size()) >= opt.deconv_observations) continue;
        maps.push_back(s->defects);
        obs.push_back(s->observation_image());
      }
      if (obs.empty()) throw qpi::InvalidArgument("kernel " + std::to_string(k->id) + " has no observations in split");
      const auto op = qpi::make_forward_operator(std::move(maps), opt.deconv_support);
      auto res = qpi::solve_tikhonov_cg(op, obs, opt.tikhonov);
      all_converged = all_converged && res.report.converged;
      report += "kernel_id: " + std::to_string(k->id) + "\nobservations: " + std::to_string(obs.size()) + "\n" +
                qpi::format_report(res.report, opt.tikhonov) + "\n";
      recovered.push_back(opt.deconv_support == qpi::kImageSize ? res.kernel : qpi::center_crop(res.kernel));
    }
    qpi::write_blob((out / ("deconv_" + a.split + ".qpi")).string(), images_blob(recovered));
    write_text(out / "deconv_report.txt", report);
    inputs["split"] = a.split;
    write_run_record(out, command, argv, cfg, inputs);
    std::cout << report;
    if (!all_converged) {
      std::cerr << "error: CG did not reach cg_tol within cg_max_iter for at least one kernel\n";
      return 1;
    }
    return 0;
  }

  if (command == "eval") {
    const auto method = qpi::parse_method(a.method);
    const auto opt = cfg.evaluation();
    std::optional<qpi::ModelBundle> model;
    if (method != qpi::Method::deconv) {
      model = load_model(a.checkpoint);
      inputs["checkpoint"] = a.checkpoint;
    }
    const auto ds = qpi::load_dataset(a.data);
    std::vector<qpi::MetricsRecord> records;
    std::vector<qpi::SampleSplit> splits;
    if (a.split == "all")
      splits = {qpi::SampleSplit::id_test, qpi::SampleSplit::ood_test};
    else
      splits = {qpi::parse_sample_split(a.split)};
    for (auto s : splits) {
      const auto ev = qpi::evaluate_model(method, model ? &*model : nullptr, ds, s, opt);
      write_text(out / (std::string("per_sample_") + qpi::to_string(s) + ".csv"), qpi::per_sample_csv(ev));
      records.push_back(ev.summary);
    }
    const std::string table = qpi::summary_table(records);
    write_text(out / "summary.txt", table);
    inputs["method"] = a.method;
    inputs["split"] = a.split;
    write_run_record(out, command, argv, cfg, inputs);
    std::cout << table;
    return 0;
  }

  if (command == "export-latents") {
    const auto model = load_model(a.checkpoint);
    if (a.encoder != "k" && a.encoder != "y") throw qpi::InvalidArgument("--encoder must be k or y");
    const auto ds = qpi::load_dataset(a.data);
    const auto split = qpi::parse_sample_split(a.split);
    write_text(out / ("latents_" + a.split + ".csv"), qpi::export_latents(model, ds, split, a.encoder == "y"));
    inputs["checkpoint"] = a.checkpoint;
    inputs["split"] = a.split;
    inputs["encoder"] = a.encoder;
    write_run_record(out, command, argv, cfg, inputs);
    return 0;
  }
  throw qpi::InvalidArgument("unhandled command " + command);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"QPI kernel extraction toolkit"};
  app.set_version_flag("--version", QPI_VERSION_STRING);
  app.require_subcommand(1);
  Args a;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, a.common);
  gen->add_option("--kernels", a.kernels, "kernel count (multiple of 5)");
  gen->add_option("--obs", a.obs, "observations per kernel");
  gen->add_option("--seed", a.seed, "master seed");

  auto* t1 = app.add_subcommand("train-step1", "train the kernel autoencoder");
  auto* t2 = app.add_subcommand("train-step2", "align the observation encoder");
  auto* t3 = app.add_subcommand("train-onestep", "train the direct baseline");
  for (auto* t : {t1, t2, t3}) {
    add_common(t, a.common);
    t->add_option("-d,--data", a.data, "dataset directory")->required();
    t->add_option("--seed", a.seed, "training seed");
  }
  t2->add_option("--step1", a.step1, "step-1 checkpoint");

  auto* inf = app.add_subcommand("infer", "infer kernels for every sample of a split");
  add_common(inf, a.common);
  inf->add_option("-d,--data", a.data, "dataset directory")->required();
  inf->add_option("-k,--checkpoint", a.checkpoint, "checkpoint with encoder_y and decoder_k");
  inf->add_option("--split", a.split, "train, id_test or ood_test");

  auto* dec = app.add_subcommand("deconv", "Tikhonov deconvolution per kernel");
  add_common(dec, a.common);
  dec->add_option("-d,--data", a.data, "dataset directory")->required();
  dec->add_option("--split", a.split, "train, id_test or ood_test");
  dec->add_option("--kernel-id", a.kernel_id, "restrict to one kernel");

  auto* ev = app.add_subcommand("eval", "evaluate a method on a split");
  add_common(ev, a.common);
  ev->add_option("-d,--data", a.data, "dataset directory")->required();
  ev->add_option("-m,--method", a.method, "two_step, one_step or deconv")->required();
  ev->add_option("-k,--checkpoint", a.checkpoint, "checkpoint (learned methods)");
  ev->add_option("--split", a.split, "id_test, ood_test, train or all");

  auto* ex = app.add_subcommand("export-latents", "write mean latents as CSV");
  add_common(ex, a.common);
  ex->add_option("-d,--data", a.data, "dataset directory")->required();
  ex->add_option("-k,--checkpoint", a.checkpoint, "checkpoint");
  ex->add_option("--split", a.split, "train, id_test or ood_test");
  ex->add_option("--encoder", a.encoder, "k (kernel encoder) or y (observation encoder)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  std::string command;
  for (auto* sub : app.get_subcommands()) command = sub->get_name();
  const std::vector<std::string> args(argv, argv + argc);
  try {
    return run(command, a, args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
