#include "sparseattn/embedding.hpp"

#include "sparseattn/errors.hpp"

namespace sparseattn {

Embedder::Embedder(const EmbedderConfig& config, Rng& rng) : config_(config) {
  if (config.dim == 0 || config.hidden == 0) throw ConfigError("embedder widths must be positive");
  w1 = {"embed.w1", fan_in_uniform({3, config.hidden}, 3, rng)};
  b1 = {"embed.b1", Tensor({config.hidden})};
  w2 = {"embed.w2", fan_in_uniform({config.hidden, config.dim}, config.hidden, rng)};
  b2 = {"embed.b2", Tensor({config.dim})};
  cls_token = {"embed.cls", Tensor({config.dim})};
}

ParameterRefs Embedder::parameters() { return {&w1, &b1, &w2, &b2, &cls_token}; }

ConstParameterRefs Embedder::parameters() const { return {&w1, &b1, &w2, &b2, &cls_token}; }

Tensor pixel_features(std::span<const SparsePixel> pixels) {
  Tensor t({pixels.size(), 3});
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    t[3 * i] = pixels[i].x;
    t[3 * i + 1] = pixels[i].y;
    t[3 * i + 2] = pixels[i].v;
  }
  return t;
}

Var embed_points(const Embedder& emb, Var points) {
  if (points.value().rank() != 2 || points.value().dim(1) != 3) {
    throw DimensionError("embed_points: expected [n x 3], got " + shape_str(points.shape()));
  }
  Tape& t = points.tape();
  Var h = relu(affine(points, t.param(emb.w1), t.param(emb.b1)));
  return affine(h, t.param(emb.w2), t.param(emb.b2));
}

Var append_cls(const Embedder& emb, Var embedded) {
  Tape& t = embedded.tape();
  Var cls = reshape(t.param(emb.cls_token), {1, emb.config().dim});
  return concat_rows(embedded, cls);
}

Var embed_pixels(Tape& tape, const Embedder& emb, std::span<const SparsePixel> pixels) {
  if (pixels.empty()) throw ArgumentError("embed_pixels: empty pixel list");
  Var pts = tape.constant(pixel_features(pixels));
  return append_cls(emb, embed_points(emb, pts));
}

}  // namespace sparseattn
