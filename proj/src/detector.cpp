#include "owodlab/detector.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace owodlab {

const char* to_string(DecodingMode mode) {
  switch (mode) {
    case DecodingMode::coupled: return "coupled";
    case DecodingMode::fully_decoupled: return "fully_decoupled";
    case DecodingMode::cascade: return "cascade";
  }
  return "?";
}

DecodingMode decoding_mode_from_string(const std::string& s) {
  if (s == "coupled") return DecodingMode::coupled;
  if (s == "fully_decoupled") return DecodingMode::fully_decoupled;
  if (s == "cascade") return DecodingMode::cascade;
  throw std::invalid_argument("unknown decoding mode: " + s);
}

void DetectorConfig::validate() const {
  if (embed_dim == 0 || num_queries == 0 || encoder_layers == 0 || decoder_layers == 0 ||
      heads == 0 || patch_size == 0 || image_size == 0)
    throw std::invalid_argument("detector config: counts must be >= 1");
  if (embed_dim % heads != 0)
    throw std::invalid_argument("detector config: embed_dim must divide by heads");
  if (image_size % patch_size != 0)
    throw std::invalid_argument("detector config: image_size must divide by patch_size");
}

void DetectorParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("patch_proj.w", patch_proj_w);
  fn("patch_proj.b", patch_proj_b);
  fn("pos_encoding", pos_encoding);
  fn("query_pos", query_pos);
  fn("location_queries", location_queries);
  if (!class_queries.v.empty()) fn("class_queries", class_queries);
  auto visit_linear = [&](const std::string& p, LinearParams& l) {
    fn(p + ".w", l.w);
    fn(p + ".b", l.b);
  };
  auto visit_attn = [&](const std::string& p, AttentionParams& a) {
    visit_linear(p + ".q", a.q);
    visit_linear(p + ".k", a.k);
    visit_linear(p + ".v", a.v);
    visit_linear(p + ".o", a.o);
  };
  auto visit_norm = [&](const std::string& p, LayerNormParams& n) {
    fn(p + ".gamma", n.gamma);
    fn(p + ".beta", n.beta);
  };
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i);
    visit_attn(p + ".self_attn", encoder[i].self_attn);
    visit_norm(p + ".norm1", encoder[i].norm1);
    visit_norm(p + ".norm2", encoder[i].norm2);
    visit_linear(p + ".ffn1", encoder[i].ffn1);
    visit_linear(p + ".ffn2", encoder[i].ffn2);
  }
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string p = "decoder." + std::to_string(i);
    visit_attn(p + ".self_attn", decoder[i].self_attn);
    visit_attn(p + ".cross_attn", decoder[i].cross_attn);
    visit_norm(p + ".norm1", decoder[i].norm1);
    visit_norm(p + ".norm2", decoder[i].norm2);
    visit_norm(p + ".norm3", decoder[i].norm3);
    visit_linear(p + ".ffn1", decoder[i].ffn1);
    visit_linear(p + ".ffn2", decoder[i].ffn2);
  }
  visit_linear("head.reg1", reg1);
  visit_linear("head.reg2", reg2);
  visit_linear("head.reg3", reg3);
  visit_linear("head.cls", cls);
  visit_linear("head.obj", obj);
}

std::size_t DetectorParams::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

void DetectorParams::zero_grads() {
  visit([](const std::string&, Tensor& t) { t.zero_grad(); });
}

namespace {

Tensor uniform_init(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  Tensor t(rows, cols);
  // fixed 53-bit mapping instead of std::uniform_real_distribution so that
  // initialization is identical across standard library implementations
  for (double& x : t.v) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    x = (2.0 * u - 1.0) * bound;
  }
  return t;
}

}  // namespace

DetectorParams init_params(const DetectorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.embed_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t ffn_dim = 4 * d;

  DetectorParams p;
  const std::size_t patch_dim = cfg.patch_size * cfg.patch_size * 3;
  p.patch_proj_w = uniform_init(patch_dim, d, 1.0 / std::sqrt(static_cast<double>(patch_dim)), rng);
  p.patch_proj_b = Tensor(1, d);
  p.pos_encoding = uniform_init(cfg.token_count(), d, bound, rng);
  p.query_pos = uniform_init(cfg.num_queries, d, bound, rng);
  p.location_queries = uniform_init(cfg.num_queries, d, bound, rng);
  if (cfg.mode == DecodingMode::fully_decoupled)
    p.class_queries = uniform_init(cfg.num_queries, d, bound, rng);

  auto linear = [&](std::size_t in, std::size_t out) {
    LinearParams l;
    l.w = uniform_init(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    l.b = Tensor(1, out);
    return l;
  };
  auto attn = [&] {
    AttentionParams a;
    a.q = linear(d, d);
    a.k = linear(d, d);
    a.v = linear(d, d);
    a.o = linear(d, d);
    return a;
  };
  auto norm = [&] {
    LayerNormParams n;
    n.gamma = Tensor(1, d, 1.0);
    n.beta = Tensor(1, d);
    return n;
  };

  p.encoder.resize(cfg.encoder_layers);
  for (EncoderLayerParams& l : p.encoder) {
    l.self_attn = attn();
    l.norm1 = norm();
    l.norm2 = norm();
    l.ffn1 = linear(d, ffn_dim);
    l.ffn2 = linear(ffn_dim, d);
  }
  p.decoder.resize(cfg.decoder_layers);
  for (DecoderLayerParams& l : p.decoder) {
    l.self_attn = attn();
    l.cross_attn = attn();
    l.norm1 = norm();
    l.norm2 = norm();
    l.norm3 = norm();
    l.ffn1 = linear(d, ffn_dim);
    l.ffn2 = linear(ffn_dim, d);
  }
  p.reg1 = linear(d, d);
  p.reg2 = linear(d, d);
  p.reg3 = linear(d, 4);
  p.cls = linear(d, cfg.class_logits());
  p.obj = linear(d, 1);
  return p;
}

namespace {

Graph::Ref linear(Graph& g, Graph::Ref x, LinearParams& l) {
  return g.add_rowvec(g.matmul(x, g.leaf(l.w)), g.leaf(l.b));
}

// Standard multi-head scaled dot-product attention over explicit q/k/v inputs.
Graph::Ref attention(Graph& g, Graph::Ref q_in, Graph::Ref k_in, Graph::Ref v_in,
                     AttentionParams& p, std::size_t heads) {
  const std::size_t d = g.at(q_in).cols();
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Graph::Ref q = linear(g, q_in, p.q);
  Graph::Ref k = linear(g, k_in, p.k);
  Graph::Ref v = linear(g, v_in, p.v);
  std::vector<Graph::Ref> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Graph::Ref qh = g.slice_cols(q, h * dh, dh);
    Graph::Ref kh = g.slice_cols(k, h * dh, dh);
    Graph::Ref vh = g.slice_cols(v, h * dh, dh);
    Graph::Ref scores = g.scale(g.matmul(qh, g.transpose(kh)), scale);
    Graph::Ref weights = g.softmax_rows(scores);
    head_out.push_back(g.matmul(weights, vh));
  }
  return linear(g, g.concat_cols(head_out), p.o);
}

Graph::Ref layer_norm(Graph& g, Graph::Ref x, LayerNormParams& p) {
  return g.layer_norm_rows(x, g.leaf(p.gamma), g.leaf(p.beta));
}

Graph::Ref ffn(Graph& g, Graph::Ref x, LinearParams& l1, LinearParams& l2) {
  return linear(g, g.relu(linear(g, x, l1)), l2);
}

Graph::Ref three_layer_ffn(Graph& g, Graph::Ref x, LinearParams& l1, LinearParams& l2,
                           LinearParams& l3) {
  return linear(g, g.relu(linear(g, g.relu(linear(g, x, l1)), l2)), l3);
}

}  // namespace

Graph::Ref extract_and_encode(Graph& g, const RasterImage& img, DetectorParams& params,
                              const DetectorConfig& cfg) {
  if (img.width % cfg.patch_size != 0 || img.height % cfg.patch_size != 0)
    throw std::invalid_argument("extract_and_encode: image not divisible by patch size");
  const std::size_t px = img.width / cfg.patch_size;
  const std::size_t py = img.height / cfg.patch_size;
  const std::size_t tokens = px * py;
  if (tokens != cfg.token_count())
    throw std::invalid_argument("extract_and_encode: token count does not match config");

  const std::size_t patch_dim = cfg.patch_size * cfg.patch_size * 3;
  Tensor patches(tokens, patch_dim);
  for (std::size_t ty = 0; ty < py; ++ty)
    for (std::size_t tx = 0; tx < px; ++tx) {
      double* row = patches.v.data() + (ty * px + tx) * patch_dim;
      std::size_t o = 0;
      for (std::size_t dy = 0; dy < cfg.patch_size; ++dy)
        for (std::size_t dx = 0; dx < cfg.patch_size; ++dx) {
          const std::uint8_t* pix = img.at(tx * cfg.patch_size + dx, ty * cfg.patch_size + dy);
          row[o++] = pix[0] / 255.0;
          row[o++] = pix[1] / 255.0;
          row[o++] = pix[2] / 255.0;
        }
    }

  Graph::Ref x = g.add_rowvec(g.matmul(g.input(std::move(patches)), g.leaf(params.patch_proj_w)),
                              g.leaf(params.patch_proj_b));
  x = g.add(x, g.leaf(params.pos_encoding));
  for (EncoderLayerParams& l : params.encoder) {
    Graph::Ref a = attention(g, x, x, x, l.self_attn, cfg.heads);
    x = layer_norm(g, g.add(x, a), l.norm1);
    Graph::Ref f = ffn(g, x, l.ffn1, l.ffn2);
    x = layer_norm(g, g.add(x, f), l.norm2);
  }
  return x;
}

Graph::Ref decode(Graph& g, Graph::Ref memory, Graph::Ref queries, DetectorParams& params,
                  const DetectorConfig& cfg) {
  if (g.at(queries).cols() != cfg.embed_dim || g.at(memory).cols() != cfg.embed_dim)
    throw std::invalid_argument("decode: embedding width mismatch");
  Graph::Ref x = queries;
  for (DecoderLayerParams& l : params.decoder) {
    Graph::Ref pos = g.leaf(params.query_pos);
    Graph::Ref qk = g.add(x, pos);
    Graph::Ref a = attention(g, qk, qk, x, l.self_attn, cfg.heads);
    x = layer_norm(g, g.add(x, a), l.norm1);
    Graph::Ref c = attention(g, g.add(x, pos), memory, memory, l.cross_attn, cfg.heads);
    x = layer_norm(g, g.add(x, c), l.norm2);
    Graph::Ref f = ffn(g, x, l.ffn1, l.ffn2);
    x = layer_norm(g, g.add(x, f), l.norm3);
  }
  return x;
}

ForwardRefs forward_graph(Graph& g, const RasterImage& img, DetectorParams& params,
                          const DetectorConfig& cfg) {
  cfg.validate();
  ForwardRefs out;
  out.encoder_out = extract_and_encode(g, img, params, cfg);

  Graph::Ref loc_embed = -1, cls_embed = -1;
  switch (cfg.mode) {
    case DecodingMode::coupled: {
      Graph::Ref e = decode(g, out.encoder_out, g.leaf(params.location_queries), params, cfg);
      loc_embed = e;
      cls_embed = e;
      break;
    }
    case DecodingMode::fully_decoupled: {
      loc_embed = decode(g, out.encoder_out, g.leaf(params.location_queries), params, cfg);
      cls_embed = decode(g, out.encoder_out, g.leaf(params.class_queries), params, cfg);
      break;
    }
    case DecodingMode::cascade: {
      loc_embed = decode(g, out.encoder_out, g.leaf(params.location_queries), params, cfg);
      // second pass through the same decoder weights, location embeddings as queries
      cls_embed = decode(g, out.encoder_out, loc_embed, params, cfg);
      break;
    }
  }

  out.boxes = g.sigmoid(three_layer_ffn(g, loc_embed, params.reg1, params.reg2, params.reg3));
  out.class_logits = linear(g, cls_embed, params.cls);
  out.objectness = linear(g, cls_embed, params.obj);
  return out;
}

DetectorOutput read_output(const Graph& g, const ForwardRefs& refs, const DetectorConfig& cfg) {
  DetectorOutput out;
  const Tensor& boxes = g.at(refs.boxes);
  for (std::size_t i = 0; i < boxes.rows(); ++i) {
    BoundingBox b;
    b.cx = boxes.v[i * 4 + 0];
    b.cy = boxes.v[i * 4 + 1];
    b.w = boxes.v[i * 4 + 2];
    b.h = boxes.v[i * 4 + 3];
    out.boxes.push_back(b);
  }
  out.class_logits = g.at(refs.class_logits).v;
  out.objectness = g.at(refs.objectness).v;

  const Tensor& enc = g.at(refs.encoder_out);
  out.map_h = cfg.tokens_per_side();
  out.map_w = cfg.tokens_per_side();
  out.encoder_activation.assign(enc.rows(), 0.0);
  for (std::size_t i = 0; i < enc.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < enc.cols(); ++j) acc += std::fabs(enc.v[i * enc.cols() + j]);
    out.encoder_activation[i] = acc / static_cast<double>(enc.cols());
  }
  return out;
}

DetectorOutput forward(const RasterImage& img, DetectorParams& params, const DetectorConfig& cfg) {
  Graph g;
  ForwardRefs refs = forward_graph(g, img, params, cfg);
  return read_output(g, refs, cfg);
}

// ---- checkpoint I/O ------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'O', 'W', 'O', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u64(std::ostream& out, std::uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return x;
}

void write_f64(std::ostream& out, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &x[i], 8);
    write_u64(out, bits);
  }
}

void read_f64(std::istream& in, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t bits = read_u64(in);
    std::memcpy(&x[i], &bits, 8);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const DetectorConfig& cfg, DetectorParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, 8);
  write_u64(out, kVersion);
  write_u64(out, cfg.embed_dim);
  write_u64(out, cfg.num_queries);
  write_u64(out, cfg.encoder_layers);
  write_u64(out, cfg.decoder_layers);
  write_u64(out, cfg.heads);
  write_u64(out, cfg.patch_size);
  write_u64(out, cfg.image_size);
  write_u64(out, cfg.num_known_classes);
  write_u64(out, static_cast<std::uint64_t>(cfg.mode));

  params.visit([&](const std::string& name, Tensor& t) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, t.shape.size());
    for (std::size_t d : t.shape) write_u64(out, d);
    write_f64(out, t.v.data(), t.size());
  });
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  if (read_u64(in) != kVersion) throw std::runtime_error("checkpoint: unsupported version");

  Checkpoint ckpt;
  DetectorConfig& cfg = ckpt.config;
  cfg.embed_dim = read_u64(in);
  cfg.num_queries = read_u64(in);
  cfg.encoder_layers = read_u64(in);
  cfg.decoder_layers = read_u64(in);
  cfg.heads = read_u64(in);
  cfg.patch_size = read_u64(in);
  cfg.image_size = read_u64(in);
  cfg.num_known_classes = read_u64(in);
  cfg.mode = static_cast<DecodingMode>(read_u64(in));

  ckpt.params = init_params(cfg, 0);
  ckpt.params.visit([&](const std::string& name, Tensor& t) {
    const std::uint64_t name_len = read_u64(in);
    std::string stored(name_len, '\0');
    in.read(stored.data(), static_cast<std::streamsize>(name_len));
    if (stored != name)
      throw std::runtime_error("checkpoint: parameter order mismatch at " + stored);
    const std::uint64_t rank = read_u64(in);
    std::vector<std::size_t> shape(rank);
    for (std::uint64_t i = 0; i < rank; ++i) shape[i] = read_u64(in);
    if (shape != t.shape) throw std::runtime_error("checkpoint: shape mismatch at " + name);
    read_f64(in, t.v.data(), t.size());
  });
  if (!in) throw std::runtime_error("checkpoint: truncated file: " + path);
  return ckpt;
}

}  // namespace owodlab
