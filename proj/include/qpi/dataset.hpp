#pragma once

// Reproducible dataset generation with kernel-level (train/test) and
// sample-level (train/id_test/ood_test) splits, persisted as manifest.json
// plus QPI1 blobs.

#include <array>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qpi/blob.hpp"
#include "qpi/error.hpp"
#include "qpi/image.hpp"
#include "qpi/parallel.hpp"
#include "qpi/rng.hpp"
#include "qpi/simulator.hpp"

namespace qpi {

enum class KernelSplit { train, test };
enum class SampleSplit { train, id_test, ood_test };

inline const char* to_string(KernelSplit s) { return s == KernelSplit::train ? "train" : "test"; }

inline const char* to_string(SampleSplit s) {
  switch (s) {
  case SampleSplit::train: return "train";
  case SampleSplit::id_test: return "id_test";
  case SampleSplit::ood_test: return "ood_test";
  }
  return "?";
}

inline SampleSplit parse_sample_split(const std::string& s) {
  if (s == "train") return SampleSplit::train;
  if (s == "id_test") return SampleSplit::id_test;
  if (s == "ood_test") return SampleSplit::ood_test;
  throw InvalidArgument("unknown split '" + s + "' (expected train, id_test or ood_test)");
}

inline KernelSplit parse_kernel_split(const std::string& s) {
  if (s == "train") return KernelSplit::train;
  if (s == "test") return KernelSplit::test;
  throw InvalidArgument("unknown kernel split '" + s + "'");
}

inline constexpr std::array<SampleSplit, 3> kSampleSplits = {SampleSplit::train, SampleSplit::id_test,
                                                             SampleSplit::ood_test};

struct KernelEntry {
  int id = 0;
  KernelParams params;
  Image image;  // float32-rounded, as stored on disk
  KernelSplit split = KernelSplit::train;
};

// Observations are held at blob precision (float32) so a dataset in memory is
// identical to one reloaded from disk.
struct Sample {
  int id = 0;
  int kernel_id = 0;
  int sample_index = 0;
  SampleSplit split = SampleSplit::train;
  std::vector<PixelCoord> defects;
  std::vector<float> observation;

  Image observation_image() const {
    Image img;
    for (std::size_t i = 0; i < observation.size(); ++i) img.storage()[i] = observation[i];
    return img;
  }

  Image activation_image() const {
    Image img;
    for (const auto& d : defects) img(d.row, d.col) = 1.0;
    return img;
  }
};

struct GenerationConfig {
  int kernel_count = 100;
  int observations_per_kernel = 500;
  std::uint64_t master_seed = 0;
  double kernel_train_fraction = 0.8;
  double observation_train_fraction = 0.8;

  void validate() const {
    if (kernel_count <= 0 || kernel_count % 5 != 0)
      throw InvalidArgument("kernel count must be a positive multiple of 5");
    if (observations_per_kernel <= 0) throw InvalidArgument("observations per kernel must be positive");
    if (!(kernel_train_fraction > 0.0 && kernel_train_fraction < 1.0) ||
        !(observation_train_fraction > 0.0 && observation_train_fraction < 1.0))
      throw InvalidArgument("split fractions must lie in (0, 1)");
  }
};

struct Dataset {
  GenerationConfig config;
  std::vector<KernelEntry> kernels;
  std::vector<Sample> samples;

  const KernelEntry& kernel(int id) const { return kernels.at(static_cast<std::size_t>(id)); }

  std::vector<const Sample*> split(SampleSplit s) const {
    std::vector<const Sample*> out;
    for (const auto& smp : samples)
      if (smp.split == s) out.push_back(&smp);
    return out;
  }

  std::vector<const KernelEntry*> kernels_in(KernelSplit s) const {
    std::vector<const KernelEntry*> out;
    for (const auto& k : kernels)
      if (k.split == s) out.push_back(&k);
    return out;
  }
};

namespace detail {

inline Image round_to_float(Image img) {
  for (double& v : img.storage()) v = static_cast<float>(v);
  return img;
}

// Seeded permutation of [0, n); the first `keep` entries are flagged.
inline std::vector<bool> seeded_selection(std::uint64_t seed, int n, int keep) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  std::vector<bool> flag(static_cast<std::size_t>(n), false);
  for (int i = 0; i < keep; ++i) flag[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
  return flag;
}

inline int split_count(int n, double fraction) {
  return static_cast<int>(std::llround(fraction * n));
}

} // namespace detail

inline Dataset generate_dataset(const GenerationConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  const int nk = config.kernel_count;
  const auto train_kernel =
      detail::seeded_selection(derive_seed(config.master_seed, 0x53504C54ull), nk,
                               detail::split_count(nk, config.kernel_train_fraction));
  for (int k = 0; k < nk; ++k) {
    KernelEntry e;
    e.id = k;
    e.params = sample_kernel_params(config.master_seed, k, nk);
    e.image = detail::round_to_float(rasterize_kernel(e.params));
    e.split = train_kernel[static_cast<std::size_t>(k)] ? KernelSplit::train : KernelSplit::test;
    ds.kernels.push_back(std::move(e));
  }

  const int per = config.observations_per_kernel;
  const int per_train = detail::split_count(per, config.observation_train_fraction);
  ds.samples.resize(static_cast<std::size_t>(nk) * static_cast<std::size_t>(per));
  parallel_for(static_cast<std::size_t>(nk), [&](std::size_t k) {
    const KernelEntry& kern = ds.kernels[k];
    const OffsetTable table(kern.params);
    const auto obs_train = detail::seeded_selection(
        derive_seed(config.master_seed, 0x4F425350ull, k), per, per_train);
    for (int i = 0; i < per; ++i) {
      Sample& s = ds.samples[k * static_cast<std::size_t>(per) + static_cast<std::size_t>(i)];
      s.id = static_cast<int>(k) * per + i;
      s.kernel_id = static_cast<int>(k);
      s.sample_index = i;
      if (kern.split == KernelSplit::test)
        s.split = SampleSplit::ood_test;
      else
        s.split = obs_train[static_cast<std::size_t>(i)] ? SampleSplit::train : SampleSplit::id_test;
      s.defects = sample_defects(derive_seed(config.master_seed, k, static_cast<std::uint64_t>(i)));
      const auto pair = synthesize_observation(table, s.defects);
      s.observation.assign(pair.observation.storage().begin(), pair.observation.storage().end());
    }
  });
  return ds;
}

inline std::string manifest_name() { return "manifest.json"; }
inline std::string kernels_blob_name() { return "kernels.qpi"; }
inline std::string observations_blob_name(SampleSplit s) { return std::string("observations_") + to_string(s) + ".qpi"; }
inline std::string activations_blob_name(SampleSplit s) { return std::string("activations_") + to_string(s) + ".qpi"; }

inline nlohmann::ordered_json params_to_json(const KernelParams& p) {
  return {{"fold_count", p.fold_count}, {"A", p.selector()}, {"phi1", p.phi1},
          {"B", p.frequency},           {"phi2", p.phi2},    {"C", p.decay}};
}

inline KernelParams params_from_json(const nlohmann::json& j) {
  KernelParams p;
  p.fold_count = j.at("fold_count").get<int>();
  p.phi1 = j.at("phi1").get<double>();
  p.frequency = j.at("B").get<double>();
  p.phi2 = j.at("phi2").get<double>();
  p.decay = j.at("C").get<double>();
  p.validate();
  return p;
}

inline void write_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());

  nlohmann::ordered_json m;
  m["format"] = "qpi-dataset";
  m["version"] = 1;
  m["master_seed"] = ds.config.master_seed;
  m["kernel_count"] = ds.config.kernel_count;
  m["observations_per_kernel"] = ds.config.observations_per_kernel;
  m["kernel_train_fraction"] = ds.config.kernel_train_fraction;
  m["observation_train_fraction"] = ds.config.observation_train_fraction;
  m["image_size"] = kImageSize;

  Blob kb;
  kb.dims = {static_cast<std::uint32_t>(ds.kernels.size()), kImageSize, kImageSize};
  auto& kj = m["kernels"] = nlohmann::ordered_json::array();
  for (const auto& k : ds.kernels) {
    kj.push_back({{"id", k.id}, {"split", to_string(k.split)}, {"params", params_to_json(k.params)}});
    for (double v : k.image.storage()) kb.values.push_back(static_cast<float>(v));
  }
  write_blob((fs::path(dir) / kernels_blob_name()).string(), kb);

  auto& sj = m["samples"] = nlohmann::ordered_json::object();
  for (SampleSplit split : kSampleSplits) {
    const auto members = ds.split(split);
    Blob ob, ab;
    const auto n = static_cast<std::uint32_t>(members.size());
    ob.dims = ab.dims = {n, kImageSize, kImageSize};
    ob.values.reserve(static_cast<std::size_t>(n) * kImageSize * kImageSize);
    ab.values.reserve(ob.values.capacity());
    auto& arr = sj[to_string(split)] = nlohmann::ordered_json::array();
    for (const Sample* s : members) {
      nlohmann::ordered_json coords = nlohmann::ordered_json::array();
      for (const auto& d : s->defects) coords.push_back({d.row, d.col});
      arr.push_back({{"id", s->id}, {"kernel_id", s->kernel_id}, {"sample_index", s->sample_index},
                     {"defects", std::move(coords)}});
      ob.values.insert(ob.values.end(), s->observation.begin(), s->observation.end());
      const Image act = s->activation_image();
      for (double v : act.storage()) ab.values.push_back(static_cast<float>(v));
    }
    write_blob((fs::path(dir) / observations_blob_name(split)).string(), ob);
    write_blob((fs::path(dir) / activations_blob_name(split)).string(), ab);
  }
  detail::write_file((fs::path(dir) / manifest_name()).string(), m.dump(1) + "\n");
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto manifest_path = fs::path(dir) / manifest_name();
  if (!fs::exists(manifest_path)) throw IoError("no dataset manifest at " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(detail::read_file(manifest_path.string()));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile("manifest parse error: " + std::string(e.what()));
  }
  Dataset ds;
  try {
    ds.config.master_seed = m.at("master_seed").get<std::uint64_t>();
    ds.config.kernel_count = m.at("kernel_count").get<int>();
    ds.config.observations_per_kernel = m.at("observations_per_kernel").get<int>();
    ds.config.kernel_train_fraction = m.at("kernel_train_fraction").get<double>();
    ds.config.observation_train_fraction = m.at("observation_train_fraction").get<double>();

    const Blob kb = read_blob((fs::path(dir) / kernels_blob_name()).string());
    const auto& kj = m.at("kernels");
    constexpr std::size_t px = static_cast<std::size_t>(kImageSize) * kImageSize;
    if (kb.dims.size() != 3 || kb.dims[0] != kj.size()) throw CorruptFile("kernel blob does not match manifest");
    for (std::size_t i = 0; i < kj.size(); ++i) {
      KernelEntry e;
      e.id = kj[i].at("id").get<int>();
      if (e.id != static_cast<int>(i)) throw CorruptFile("kernel ids must be dense and ordered");
      e.split = parse_kernel_split(kj[i].at("split").get<std::string>());
      e.params = params_from_json(kj[i].at("params"));
      for (std::size_t p = 0; p < px; ++p) e.image.storage()[p] = kb.values[i * px + p];
      ds.kernels.push_back(std::move(e));
    }

    for (SampleSplit split : kSampleSplits) {
      const auto& arr = m.at("samples").at(to_string(split));
      const Blob ob = read_blob((fs::path(dir) / observations_blob_name(split)).string());
      const Blob ab = read_blob((fs::path(dir) / activations_blob_name(split)).string());
      auto image_stack = [&](const Blob& b) {
        return b.dims.size() == 3 && b.dims[0] == arr.size() && b.dims[1] == kImageSize && b.dims[2] == kImageSize;
      };
      if (!image_stack(ob)) throw CorruptFile("observation blob does not match manifest");
      if (!image_stack(ab)) throw CorruptFile("activation blob does not match manifest");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Sample s;
        s.id = arr[i].at("id").get<int>();
        s.kernel_id = arr[i].at("kernel_id").get<int>();
        s.sample_index = arr[i].at("sample_index").get<int>();
        s.split = split;
        for (const auto& c : arr[i].at("defects")) s.defects.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
        validate_defects(s.defects);
        const Image act = s.activation_image();
        for (std::size_t p = 0; p < px; ++p)
          if (ab.values[i * px + p] != static_cast<float>(act.storage()[p]))
            throw CorruptFile("activation blob disagrees with defect list of sample " + std::to_string(s.id));
        s.observation.assign(ob.values.begin() + static_cast<std::ptrdiff_t>(i * px),
                             ob.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * px));
        ds.samples.push_back(std::move(s));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile("manifest field error: " + std::string(e.what()));
  }
  std::sort(ds.samples.begin(), ds.samples.end(), [](const Sample& a, const Sample& b) { return a.id < b.id; });
  return ds;
}

} // namespace qpi
