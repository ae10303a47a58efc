#pragma once

// Network definitions: kernel encoder/decoder and the two-channel
// observation encoder, all sharing a 4x8x8 latent.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qpi/diffnet/checkpoint.hpp"
#include "qpi/diffnet/network.hpp"
#include "qpi/error.hpp"
#include "qpi/image.hpp"
#include "qpi/losses.hpp"

namespace qpi {

using diffnet::Sequential;

// Channel plan. Each encoder stage is conv3x3/s2 + SiLU; the head is a
// conv3x3/s1 producing mean and logvar. The decoder starts with conv3x3 +
// SiLU at latent resolution, then one [upsample2x, conv3x3, SiLU] stage per
// remaining width, then a linear conv3x3 to one channel.
struct Architecture {
  int image_size = kImageSize;
  std::vector<int> encoder_widths = {16, 32, 64};
  int latent_channels = kLatentChannels;
  std::vector<int> decoder_widths = {64, 32, 16, 8};

  int latent_side() const { return image_size >> encoder_widths.size(); }

  void validate() const {
    if (encoder_widths.empty() || decoder_widths.size() != encoder_widths.size() + 1)
      throw ConfigError("decoder needs exactly one more width than the encoder");
    if (latent_side() < 1 || (latent_side() << encoder_widths.size()) != image_size)
      throw ConfigError("image size must be divisible by 2^(encoder stages)");
    for (int w : encoder_widths)
      if (w <= 0) throw ConfigError("encoder widths must be positive");
    for (int w : decoder_widths)
      if (w <= 0) throw ConfigError("decoder widths must be positive");
    if (latent_channels <= 0) throw ConfigError("latent channel count must be positive");
  }

  bool is_standard() const { return *this == Architecture{}; }

  std::string id() const {
    std::ostringstream s;
    s << "qpi-conv-vae/v1 img=" << image_size << " enc=";
    for (std::size_t i = 0; i < encoder_widths.size(); ++i) s << (i ? "," : "") << encoder_widths[i];
    s << " lat=" << latent_channels << " dec=";
    for (std::size_t i = 0; i < decoder_widths.size(); ++i) s << (i ? "," : "") << decoder_widths[i];
    return s.str();
  }

  static Architecture parse_id(const std::string& id) {
    std::istringstream in(id);
    std::string tag, img, enc, lat, dec;
    in >> tag >> img >> enc >> lat >> dec;
    auto list = [](const std::string& field, const char* key) {
      const std::string prefix = std::string(key) + "=";
      if (field.rfind(prefix, 0) != 0) throw CorruptFile("bad architecture id field: " + field);
      std::vector<int> out;
      std::stringstream ss(field.substr(prefix.size()));
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
      return out;
    };
    if (tag != "qpi-conv-vae/v1") throw CorruptFile("unknown architecture '" + id + "'");
    Architecture a;
    try {
      a.image_size = list(img, "img").at(0);
      a.encoder_widths = list(enc, "enc");
      a.latent_channels = list(lat, "lat").at(0);
      a.decoder_widths = list(dec, "dec");
    } catch (const std::logic_error&) {
      throw CorruptFile("malformed architecture id '" + id + "'");
    }
    a.validate();
    return a;
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

inline Sequential make_encoder(const Architecture& arch, int in_channels) {
  arch.validate();
  Sequential net;
  int ch = in_channels;
  for (std::size_t i = 0; i < arch.encoder_widths.size(); ++i) {
    net.conv("down" + std::to_string(i), ch, arch.encoder_widths[i], 3, 2, 1).silu();
    ch = arch.encoder_widths[i];
  }
  net.conv("head", ch, 2 * arch.latent_channels, 3, 1, 1);
  return net;
}

inline Sequential make_decoder(const Architecture& arch) {
  arch.validate();
  Sequential net;
  net.conv("stem", arch.latent_channels, arch.decoder_widths[0], 3, 1, 1).silu();
  for (std::size_t i = 1; i < arch.decoder_widths.size(); ++i)
    net.upsample2x()
        .conv("up" + std::to_string(i), arch.decoder_widths[i - 1], arch.decoder_widths[i], 3, 1, 1)
        .silu();
  net.conv("out", arch.decoder_widths.back(), 1, 3, 1, 1);
  return net;
}

inline std::vector<int> latent_dims(const Architecture& arch) {
  return {arch.latent_channels, arch.latent_side(), arch.latent_side()};
}

// ---------------------------------------------------------------------------
// Input adapters.

inline Tensor image_tensor(const Image& img) {
  return Tensor({1, img.height(), img.width()}, img.storage());
}

inline Image tensor_image(const Tensor& t) {
  if (t.dims.size() != 3 || t.dims[0] != 1) throw DimensionError("expected a single-channel (1, H, W) block");
  return Image(t.dims[1], t.dims[2], t.values);
}

// Two-channel (Y, M) encoder input. Y is divided by the defect count so the
// input scale does not grow with scatterer density; M is passed unchanged.
inline Tensor observation_tensor(const Image& obs, const Image& map) {
  require_same_shape(obs, map, "observation input");
  double defects = 0.0;
  for (double v : map.storage()) {
    if (v != 0.0 && v != 1.0) throw InvalidArgument("activation map must be binary");
    defects += v;
  }
  if (defects == 0.0) throw InvalidArgument("activation map has no defects");
  Tensor t({2, obs.height(), obs.width()});
  const std::size_t n = obs.size();
  for (std::size_t i = 0; i < n; ++i) {
    t.values[i] = obs.storage()[i] / defects;
    t.values[n + i] = map.storage()[i];
  }
  return t;
}

inline LatentCode latent_from_head(const Tensor& head, bool keep_logvar) {
  auto [mean, logvar] = diffnet::split_latent(head);
  LatentCode code{std::move(mean), std::nullopt};
  if (keep_logvar) code.logvar = std::move(logvar);
  return code;
}

inline LatentCode encode_kernel(const Sequential& encoder, const Image& kernel, bool with_logvar = false) {
  if (encoder.layers().empty() || encoder.layers().front().in_channels != 1)
    throw DimensionError("kernel encoder must take one input channel");
  return latent_from_head(encoder.forward(image_tensor(kernel)), with_logvar);
}

inline Image decode_kernel(const Sequential& decoder, const LatentCode& code) {
  if (decoder.layers().empty() || decoder.layers().front().in_channels != code.mean.dims.at(0))
    throw DimensionError("latent channel count does not match decoder");
  return tensor_image(decoder.forward(code.mean));
}

inline LatentCode encode_observation(const Sequential& encoder, const Image& obs, const Image& map) {
  if (encoder.layers().empty() || encoder.layers().front().in_channels != 2)
    throw DimensionError("observation encoder must take two input channels");
  return latent_from_head(encoder.forward(observation_tensor(obs, map)), false);
}

// ---------------------------------------------------------------------------
// Bundle of the three networks plus checkpoint conversion.

inline constexpr const char* kEncoderK = "encoder_k";
inline constexpr const char* kDecoderK = "decoder_k";
inline constexpr const char* kEncoderY = "encoder_y";

struct ModelBundle {
  Architecture arch;
  std::optional<Sequential> encoder_k;
  std::optional<Sequential> decoder_k;
  std::optional<Sequential> encoder_y;

  static ModelBundle create(const Architecture& arch, bool with_kernel_encoder, bool with_decoder,
                            bool with_observation_encoder) {
    ModelBundle b;
    b.arch = arch;
    if (with_kernel_encoder) b.encoder_k = make_encoder(arch, 1);
    if (with_decoder) b.decoder_k = make_decoder(arch);
    if (with_observation_encoder) b.encoder_y = make_encoder(arch, 2);
    return b;
  }

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

namespace detail {

inline void load_component(const diffnet::Checkpoint& ck, const char* name, Sequential& net) {
  const auto* c = ck.find(name);
  if (!c) throw CorruptFile(std::string("checkpoint has no component '") + name + "'");
  if (c->blocks.size() != net.params().size())
    throw CorruptFile(std::string("component '") + name + "' block count does not match architecture");
  for (std::size_t i = 0; i < c->blocks.size(); ++i) {
    auto& p = net.params()[i];
    if (c->blocks[i].name != p.name || c->blocks[i].value.dims != p.value.dims)
      throw CorruptFile("block '" + c->blocks[i].name + "' does not match architecture block '" + p.name + "'");
    p.value = c->blocks[i].value;
  }
  net.set_frozen(c->frozen);
}

} // namespace detail

inline diffnet::Checkpoint to_checkpoint(const ModelBundle& b) {
  diffnet::Checkpoint ck;
  ck.architecture = b.arch.id();
  auto add = [&](const char* name, const std::optional<Sequential>& net) {
    if (!net) return;
    ck.components.push_back({name, net->frozen(), net->params()});
  };
  add(kEncoderK, b.encoder_k);
  add(kDecoderK, b.decoder_k);
  add(kEncoderY, b.encoder_y);
  return ck;
}

inline ModelBundle from_checkpoint(const diffnet::Checkpoint& ck) {
  ModelBundle b;
  b.arch = Architecture::parse_id(ck.architecture);
  if (ck.find(kEncoderK)) {
    b.encoder_k = make_encoder(b.arch, 1);
    detail::load_component(ck, kEncoderK, *b.encoder_k);
  }
  if (ck.find(kDecoderK)) {
    b.decoder_k = make_decoder(b.arch);
    detail::load_component(ck, kDecoderK, *b.decoder_k);
  }
  if (ck.find(kEncoderY)) {
    b.encoder_y = make_encoder(b.arch, 2);
    detail::load_component(ck, kEncoderY, *b.encoder_y);
  }
  return b;
}

inline std::string serialize_weights(const ModelBundle& b) {
  return diffnet::serialize_checkpoint(to_checkpoint(b));
}

inline ModelBundle deserialize_weights(const std::string& bytes) {
  return from_checkpoint(diffnet::deserialize_checkpoint(bytes));
}

} // namespace qpi
