#pragma once

// Tiny diffusion transformer predicting the noise of a 16x16x3 image.
//
// Images are split into 16 patches of 4x4x3. Patch tokens get a learned
// position table and a timestep embedding, then pass through blocks of
// self-attention, cross-attention to the prompt, and a GELU MLP (all pre-norm
// residual). The prompt encoder adds a position table to the raw token rows
// and gives the END row an extra learned summary of the content rows.

#include "bemem/autodiff.hpp"
#include "bemem/dataset.hpp"
#include "bemem/params.hpp"
#include "bemem/rng.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace bemem {

inline constexpr int kPatchSide = 4;
inline constexpr int kGridSide = kImageSide / kPatchSide;
inline constexpr int kPatches = kGridSide * kGridSide;
inline constexpr int kPatchDim = kPatchSide * kPatchSide * kChannels;
inline constexpr int kWidth = 64;
inline constexpr int kHeads = 4;
inline constexpr int kBlocks = 2;
inline constexpr int kMlpWidth = 4 * kWidth;
inline constexpr int kSummaryWidth = 2 * kWidth;

/// Flat pixel row of element `f` of patch `p`.
inline int patch_pixel(int p, int f) {
  const int py = p / kGridSide, px = p % kGridSide;
  const int inner = f / kChannels;
  const int yy = inner / kPatchSide, xx = inner % kPatchSide;
  return (py * kPatchSide + yy) * kImageSide + px * kPatchSide + xx;
}

/// [kPixels x 3] image -> [kPatches x kPatchDim].
template <typename Derived>
Matrix<typename Derived::Scalar> patchify(const Eigen::MatrixBase<Derived>& img) {
  if (img.rows() != kPixels || img.cols() != kChannels)
    throw ShapeError("patchify: expected image [256x3], got " + shape_str(img.rows(), img.cols()));
  Matrix<typename Derived::Scalar> out(kPatches, kPatchDim);
  for (int p = 0; p < kPatches; ++p)
    for (int f = 0; f < kPatchDim; ++f) out(p, f) = img(patch_pixel(p, f), f % kChannels);
  return out;
}

template <typename Derived>
Matrix<typename Derived::Scalar> unpatchify(const Eigen::MatrixBase<Derived>& patches) {
  if (patches.rows() != kPatches || patches.cols() != kPatchDim)
    throw ShapeError("unpatchify: expected [16x48], got " + shape_str(patches.rows(), patches.cols()));
  Matrix<typename Derived::Scalar> out(kPixels, kChannels);
  for (int p = 0; p < kPatches; ++p)
    for (int f = 0; f < kPatchDim; ++f) out(patch_pixel(p, f), f % kChannels) = patches(p, f);
  return out;
}

/// All learnable weights. Linear weights are stored [in x out].
template <typename Scalar>
struct DenoiserParams {
  int vocab_size = 0;
  ParamSet<Scalar> set;

  const Matrix<Scalar>& token_table() const { return set.at("tok.table"); }

  template <typename Other>
  DenoiserParams<Other> cast() const {
    return {vocab_size, set.template cast<Other>()};
  }
};

template <typename Scalar>
DenoiserParams<Scalar> init_denoiser(int vocab_size, std::uint64_t seed) {
  if (vocab_size < 3) throw ShapeError("init_denoiser: vocabulary too small");
  Rng rng(derive_seed(seed, "init"));
  DenoiserParams<Scalar> p;
  p.vocab_size = vocab_size;
  auto& s = p.set;
  auto uniform = [&](Index r, Index c, double bound) {
    Matrix<Scalar> m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    return m;
  };
  auto normal = [&](Index r, Index c, double sd) {
    Matrix<Scalar> m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(sd * rng.normal());
    return m;
  };
  auto lin = [&](const std::string& w, const std::string& b, int in, int out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    s.add(w, uniform(in, out, bound));
    s.add(b, uniform(1, out, bound));
  };
  auto ln = [&](const std::string& pre) {
    s.add(pre + ".g", Matrix<Scalar>::Ones(1, kWidth));
    s.add(pre + ".b", Matrix<Scalar>::Zero(1, kWidth));
  };
  auto attn = [&](const std::string& pre) {
    for (const char* n : {"q", "k", "v", "o"}) lin(pre + ".w" + n, pre + ".b" + n, kWidth, kWidth);
  };

  s.add("tok.table", normal(vocab_size, kWidth, 0.3));
  s.add("tok.pos", normal(kTokens, kWidth, 0.02));
  ln("sum.ln");
  lin("sum.w1", "sum.b1", kWidth, kSummaryWidth);
  lin("sum.w2", "sum.b2", kSummaryWidth, kWidth);
  lin("patch.w", "patch.b", kPatchDim, kWidth);
  s.add("patch.pos", normal(kPatches, kWidth, 0.02));
  lin("time.w1", "time.b1", kWidth, kWidth);
  lin("time.w2", "time.b2", kWidth, kWidth);
  for (int b = 0; b < kBlocks; ++b) {
    const std::string pre = "blk" + std::to_string(b);
    ln(pre + ".ln1");
    attn(pre + ".sa");
    ln(pre + ".ln2");
    attn(pre + ".ca");
    ln(pre + ".ln3");
    lin(pre + ".mlp.w1", pre + ".mlp.b1", kWidth, kMlpWidth);
    lin(pre + ".mlp.w2", pre + ".mlp.b2", kMlpWidth, kWidth);
  }
  ln("out.ln");
  lin("out.w", "out.b", kWidth, kPatchDim);
  return p;
}

/// Continuous prompt conditioning: the token-table rows of a sequence before
/// the prompt encoder runs. The layout decides which rows are content and
/// which row is END.
template <typename Scalar>
struct PromptEmbedding {
  Matrix<Scalar> rows;  // [kTokens x kWidth]
  TokenSeq layout;
  bool is_unconditional = false;
};

template <typename Scalar>
PromptEmbedding<Scalar> embed_prompt(const DenoiserParams<Scalar>& p, const TokenSeq& tokens) {
  const auto& table = p.token_table();
  PromptEmbedding<Scalar> e;
  e.rows.resize(kTokens, kWidth);
  for (int i = 0; i < kTokens; ++i) {
    const int id = tokens.ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= table.rows()) throw ShapeError("embed_prompt: token id out of range");
    e.rows.row(i) = table.row(id);
  }
  e.layout = tokens;
  e.is_unconditional = tokens == unconditional_tokens();
  return e;
}

/// The fixed unconditional embedding (all padding).
template <typename Scalar>
PromptEmbedding<Scalar> unconditional_embedding(const DenoiserParams<Scalar>& p) {
  return embed_prompt(p, unconditional_tokens());
}

/// Parameters placed on a tape, looked up by name.
template <typename Scalar>
class BoundParams {
 public:
  BoundParams(Tape<Scalar>& tape, const ParamSet<Scalar>& set, bool trainable) : set_(&set) {
    vars_.reserve(set.size());
    for (const auto& t : set) vars_.push_back(trainable ? tape.variable(t.value) : tape.constant(t.value));
  }

  const Var<Scalar>& operator()(const std::string& name) const { return vars_[set_->index_of(name)]; }
  const std::vector<Var<Scalar>>& vars() const { return vars_; }

  std::vector<Matrix<Scalar>> grads() const {
    std::vector<Matrix<Scalar>> g;
    g.reserve(vars_.size());
    for (const auto& v : vars_) g.push_back(v.grad());
    return g;
  }

 private:
  const ParamSet<Scalar>* set_;
  std::vector<Var<Scalar>> vars_;
};

/// Result of one batched forward pass. cross_weights[block] stacks the
/// per-item per-head [kPatches x kTokens] maps, row ((item * kHeads + head) *
/// kPatches + patch).
template <typename Scalar>
struct ForwardPass {
  Var<Scalar> eps;  // [items*kPatches x kPatchDim]
  std::vector<Matrix<Scalar>> cross_weights;
};

inline Matrix<double> timestep_features(const std::vector<int>& t) {
  constexpr int half = kWidth / 2;
  Matrix<double> f(static_cast<Index>(t.size()), kWidth);
  for (std::size_t b = 0; b < t.size(); ++b)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double a = static_cast<double>(t[b]) * freq;
      f(static_cast<Index>(b), i) = std::sin(a);
      f(static_cast<Index>(b), half + i) = std::cos(a);
    }
  return f;
}

namespace detail {

template <typename Scalar>
Var<Scalar> ln_apply(const BoundParams<Scalar>& p, const std::string& pre, const Var<Scalar>& x) {
  return layer_norm(x, p(pre + ".g"), p(pre + ".b"));
}

// Products run per item (row_block rows) so an item's output never depends
// on what else is in the batch.
template <typename Scalar>
Var<Scalar> lin_apply(const BoundParams<Scalar>& p, const std::string& w, const std::string& b,
                      const Var<Scalar>& x, Index row_block) {
  return linear(x, p(w), p(b), row_block);
}

template <typename Scalar>
AttentionOutput<Scalar> mha(const BoundParams<Scalar>& p, const std::string& pre, const Var<Scalar>& x,
                            const Var<Scalar>& ctx, Index groups) {
  const Index xb = x.rows() / groups, cb = ctx.rows() / groups;
  auto q = lin_apply(p, pre + ".wq", pre + ".bq", x, xb);
  auto k = lin_apply(p, pre + ".wk", pre + ".bk", ctx, cb);
  auto v = lin_apply(p, pre + ".wv", pre + ".bv", ctx, cb);
  auto a = attention(q, k, v, groups, kHeads);
  return {lin_apply(p, pre + ".wo", pre + ".bo", a.out, xb), std::move(a.weights)};
}

}  // namespace detail

/// Prompt encoder: rows + position table, END row += MLP(LN(mean of content rows)).
template <typename Scalar>
Var<Scalar> encode_prompt(const BoundParams<Scalar>& p, const Var<Scalar>& rows,
                          const std::vector<TokenSeq>& layouts) {
  const Index items = static_cast<Index>(layouts.size());
  if (rows.rows() != items * kTokens || rows.cols() != kWidth)
    throw ShapeError("encode_prompt: rows " + shape_str(rows.rows(), rows.cols()));
  auto x = add_tiled(rows, p("tok.pos"));
  std::vector<RowTerm> pool, place;
  for (Index b = 0; b < items; ++b) {
    const auto& ids = layouts[static_cast<std::size_t>(b)].ids;
    int content = 0;
    for (int id : ids) content += (id != kPadId && id != kEndId) ? 1 : 0;
    for (int i = 0; i < kTokens; ++i) {
      const int id = ids[static_cast<std::size_t>(i)];
      if (id != kPadId && id != kEndId) pool.push_back({b, b * kTokens + i, 1.0 / content});
      if (id == kEndId) place.push_back({b * kTokens + i, b, 1.0});
    }
  }
  if (place.empty()) return x;
  auto pooled = combine_rows(x, std::move(pool), items);
  auto h = detail::ln_apply(p, "sum.ln", pooled);
  h = gelu(detail::lin_apply(p, "sum.w1", "sum.b1", h, 1));
  h = detail::lin_apply(p, "sum.w2", "sum.b2", h, 1);
  return add(x, combine_rows(h, std::move(place), items * kTokens));
}

/// Noise prediction for `t.size()` stacked items.
template <typename Scalar>
ForwardPass<Scalar> denoiser_forward(const BoundParams<Scalar>& p, const Var<Scalar>& x_patches,
                                     const std::vector<int>& t, const Var<Scalar>& prompt_rows,
                                     const std::vector<TokenSeq>& layouts) {
  const Index items = static_cast<Index>(t.size());
  if (items == 0 || static_cast<Index>(layouts.size()) != items || x_patches.rows() != items * kPatches ||
      x_patches.cols() != kPatchDim)
    throw ShapeError("denoiser_forward: inconsistent batch");
  auto& tape = *x_patches.tape;

  auto temb = tape.constant(timestep_features(t).template cast<Scalar>());
  temb = detail::lin_apply(p, "time.w2", "time.b2", silu(detail::lin_apply(p, "time.w1", "time.b1", temb, 1)), 1);

  auto h = detail::lin_apply(p, "patch.w", "patch.b", x_patches, kPatches);
  h = add_group(add_tiled(h, p("patch.pos")), temb);

  const auto ctx = encode_prompt(p, prompt_rows, layouts);

  ForwardPass<Scalar> out;
  for (int b = 0; b < kBlocks; ++b) {
    const std::string pre = "blk" + std::to_string(b);
    auto n1 = detail::ln_apply(p, pre + ".ln1", h);
    h = add(h, detail::mha(p, pre + ".sa", n1, n1, items).out);
    auto ca = detail::mha(p, pre + ".ca", detail::ln_apply(p, pre + ".ln2", h), ctx, items);
    h = add(h, ca.out);
    out.cross_weights.push_back(std::move(ca.weights));
    auto m = gelu(detail::lin_apply(p, pre + ".mlp.w1", pre + ".mlp.b1", detail::ln_apply(p, pre + ".ln3", h), kPatches));
    h = add(h, detail::lin_apply(p, pre + ".mlp.w2", pre + ".mlp.b2", m, kPatches));
  }
  out.eps = detail::lin_apply(p, "out.w", "out.b", detail::ln_apply(p, "out.ln", h), kPatches);
  return out;
}

/// Token-table rows for a batch of sequences, differentiable into the table.
template <typename Scalar>
Var<Scalar> gather_tokens(const BoundParams<Scalar>& p, const std::vector<TokenSeq>& seqs) {
  const auto& table = p("tok.table");
  std::vector<RowTerm> terms;
  terms.reserve(seqs.size() * kTokens);
  for (std::size_t b = 0; b < seqs.size(); ++b)
    for (int i = 0; i < kTokens; ++i)
      terms.push_back({static_cast<Index>(b) * kTokens + i, seqs[b].ids[static_cast<std::size_t>(i)], 1.0});
  return combine_rows(table, std::move(terms), static_cast<Index>(seqs.size()) * kTokens);
}

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Little-endian checkpoint: "BEMCKPT1", u32 version, u32 arch constants
/// (image side, channels, patch side, tokens, width, heads, blocks, mlp width,
/// vocab), u32 tensor count, then per tensor u32 name length, name bytes,
/// u32 rank, u32 extents, float32 payload.
void save_checkpoint(const DenoiserParams<float>& p, const std::filesystem::path& path);
DenoiserParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace bemem
