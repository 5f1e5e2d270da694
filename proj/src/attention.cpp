#include "cloudattn/attention.h"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cloudattn {

namespace {

void check_params(const MhaParams& p, std::size_t query_width, std::size_t source_width) {
  if (p.heads == 0 || p.wq->value.cols() % p.heads != 0) {
    throw DimensionError("mha: projection width " + std::to_string(p.wq->value.cols()) +
                         " is not divisible by " + std::to_string(p.heads) + " heads");
  }
  if (query_width != p.wq->value.rows()) {
    throw DimensionError("mha: query width " + std::to_string(query_width) +
                         " does not match W_Q " + shape_str(p.wq->value.shape()));
  }
  if (source_width != p.wk->value.rows() || source_width != p.wv->value.rows()) {
    throw DimensionError("mha: source width " + std::to_string(source_width) +
                         " does not match W_K " + shape_str(p.wk->value.shape()) + " / W_V " +
                         shape_str(p.wv->value.shape()));
  }
  if (p.wk->value.cols() != p.wq->value.cols() || p.wv->value.cols() != p.wq->value.cols() ||
      p.wo->value.rows() != p.wq->value.cols()) {
    throw DimensionError("mha: inconsistent projection shapes W_K " +
                         shape_str(p.wk->value.shape()) + ", W_V " +
                         shape_str(p.wv->value.shape()) + ", W_O " +
                         shape_str(p.wo->value.shape()));
  }
}

ad::Var maybe_norm(const ad::Var& x, bool prenorm) { return prenorm ? ad::layer_norm(x) : x; }

}  // namespace

void AttentionConfig::validate() const {
  if (heads < 1 || d_model < 1 || d_ff < 1 || k_neighbors < 1) {
    throw std::invalid_argument("attention config values must all be positive");
  }
  if (d_model % heads != 0) {
    throw std::invalid_argument("d_model " + std::to_string(d_model) +
                                " must be divisible by heads " + std::to_string(heads));
  }
}

ad::Var feed_forward(const FeedForward& ff, const ad::Var& x) {
  return affine(ff.fc2, ad::relu(affine(ff.fc1, x)));
}

ad::Var mha(const ad::Var& query, const ad::Var& source, const MhaParams& params,
            std::vector<Tensor>* weights) {
  check_params(params, query->value.cols(), source->value.cols());
  const std::size_t h = params.heads, dh = params.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  ad::Var q = ad::matmul(query, params.wq);
  ad::Var k = ad::matmul(source, params.wk);
  ad::Var v = ad::matmul(source, params.wv);
  if (weights) weights->clear();
  std::vector<ad::Var> heads;
  heads.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    ad::Var qh = h == 1 ? q : ad::slice(q, 1, i * dh, (i + 1) * dh);
    ad::Var kh = h == 1 ? k : ad::slice(k, 1, i * dh, (i + 1) * dh);
    ad::Var vh = h == 1 ? v : ad::slice(v, 1, i * dh, (i + 1) * dh);
    ad::Var attn = ad::softmax(ad::scale(ad::matmul_nt(qh, kh), scale), 1);
    if (weights) weights->push_back(attn->value);
    heads.push_back(ad::matmul(attn, vh));
  }
  ad::Var joined = h == 1 ? heads.front() : ad::concat(heads, 1);
  return ad::matmul(joined, params.wo);
}

ad::Var mha_neighbors(const ad::Var& query, const ad::Var& source,
                      std::span<const std::size_t> neighbors, std::size_t kn,
                      const MhaParams& params, std::vector<Tensor>* weights) {
  check_params(params, query->value.cols(), source->value.cols());
  const std::size_t h = params.heads, dh = params.d_head();
  const std::size_t m = query->value.rows(), s = source->value.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  ad::Var q = ad::matmul(query, params.wq);
  ad::Var k = ad::matmul(source, params.wk);
  ad::Var v = ad::matmul(source, params.wv);
  if (weights) weights->clear();
  std::vector<ad::Var> heads;
  heads.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    ad::Var qh = h == 1 ? q : ad::slice(q, 1, i * dh, (i + 1) * dh);
    ad::Var kh = h == 1 ? k : ad::slice(k, 1, i * dh, (i + 1) * dh);
    ad::Var vh = h == 1 ? v : ad::slice(v, 1, i * dh, (i + 1) * dh);
    Tensor local;
    heads.push_back(
        ad::neighbor_attention(qh, kh, vh, neighbors, kn, scale, weights ? &local : nullptr));
    if (weights) {
      Tensor dense = Tensor::matrix(m, s);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < kn; ++j) dense.at(r, neighbors[r * kn + j]) += local.at(r, j);
      weights->push_back(std::move(dense));
    }
  }
  ad::Var joined = h == 1 ? heads.front() : ad::concat(heads, 1);
  return ad::matmul(joined, params.wo);
}

TokenSet lau_forward(const TokenSet& tokens, const MhaParams& params, const AttentionConfig& cfg,
                     std::vector<Tensor>* weights) {
  cfg.validate();
  const std::size_t m = tokens.size();
  const std::size_t kn = cfg.k_neighbors;
  if (kn > m) {
    throw std::invalid_argument("lau_forward: k_neighbors " + std::to_string(kn) +
                                " exceeds token count " + std::to_string(m));
  }
  const NeighborIndex nbr = knn(tokens.anchors, tokens.anchors, kn);
  std::vector<std::size_t> flat;
  flat.reserve(m * kn);
  for (const auto& row : nbr.neighbor_ids) flat.insert(flat.end(), row.begin(), row.end());

  const ad::Var x = tokens.feats;
  const ad::Var xn = maybe_norm(x, cfg.prenorm);
  const ad::Var s = ad::add(x, mha_neighbors(xn, xn, flat, kn, params, weights));
  const ad::Var out = ad::add(s, feed_forward(params.ff, maybe_norm(s, cfg.prenorm)));
  return TokenSet{out, tokens.anchors};
}

TokenSet gau_forward(const TokenSet& tokens, const ad::Var& cloud_embed, const MhaParams& params,
                     const AttentionConfig& cfg) {
  cfg.validate();
  const ad::Var t = tokens.feats;
  const ad::Var tn = maybe_norm(t, cfg.prenorm);
  const ad::Var pn = maybe_norm(cloud_embed, cfg.prenorm);
  const ad::Var c = ad::add(t, mha(tn, pn, params));
  const ad::Var out = ad::add(c, feed_forward(params.ff, maybe_norm(c, cfg.prenorm)));
  return TokenSet{out, tokens.anchors};
}

}  // namespace cloudattn
