#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "owodlab/geometry.hpp"
#include "owodlab/image.hpp"
#include "owodlab/tensor.hpp"

namespace owodlab {

enum class DecodingMode { coupled, fully_decoupled, cascade };

const char* to_string(DecodingMode mode);
DecodingMode decoding_mode_from_string(const std::string& s);

struct DetectorConfig {
  std::size_t embed_dim = 32;
  std::size_t num_queries = 10;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  std::size_t patch_size = 8;
  std::size_t image_size = 64;   // square inputs; fixes the token grid for P_n
  std::size_t num_known_classes = 3;  // C; class logit C is "unknown"
  DecodingMode mode = DecodingMode::cascade;

  std::size_t tokens_per_side() const { return image_size / patch_size; }
  std::size_t token_count() const { return tokens_per_side() * tokens_per_side(); }
  std::size_t class_logits() const { return num_known_classes + 1; }
  void validate() const;
};

struct LinearParams {
  Tensor w;  // [in, out]
  Tensor b;  // [1, out]
};

struct AttentionParams {
  LinearParams q, k, v, o;
};

struct LayerNormParams {
  Tensor gamma;  // [1, D]
  Tensor beta;   // [1, D]
};

struct EncoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams norm1, norm2;
  LinearParams ffn1, ffn2;
};

struct DecoderLayerParams {
  AttentionParams self_attn, cross_attn;
  LayerNormParams norm1, norm2, norm3;
  LinearParams ffn1, ffn2;
};

struct DetectorParams {
  Tensor patch_proj_w;  // [patch*patch*3, D]
  Tensor patch_proj_b;  // [1, D]
  Tensor pos_encoding;  // P_n, [tokens, D]
  Tensor query_pos;     // P_m, [M_q, D]
  Tensor location_queries;  // [M_q, D]
  Tensor class_queries;     // [M_q, D]; allocated only in fully_decoupled mode
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;  // one set, reused by both cascade passes
  LinearParams reg1, reg2, reg3;  // 3-layer regression FFN -> 4
  LinearParams cls;               // -> C+1
  LinearParams obj;               // -> 1

  // Enumerates every parameter tensor with a stable name; the order defines
  // the checkpoint layout.
  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  std::size_t parameter_count();
  void zero_grads();
};

DetectorParams init_params(const DetectorConfig& cfg, std::uint64_t seed);

struct DetectorOutput {
  std::vector<BoundingBox> boxes;        // M_q, center-size in (0,1)
  std::vector<double> class_logits;      // [M_q, C+1] row-major
  std::vector<double> objectness;        // M_q logits
  std::vector<double> encoder_activation;  // [H', W'] mean |encoder output| per token
  std::size_t map_h = 0, map_w = 0;
};

// Graph refs for the differentiable outputs of one forward pass.
struct ForwardRefs {
  Graph::Ref boxes = -1;         // [M_q, 4] sigmoid-squashed center-size
  Graph::Ref class_logits = -1;  // [M_q, C+1]
  Graph::Ref objectness = -1;    // [M_q, 1]
  Graph::Ref encoder_out = -1;   // [tokens, D]
};

// Patch embedding + encoder stack.
Graph::Ref extract_and_encode(Graph& g, const RasterImage& img, DetectorParams& params,
                              const DetectorConfig& cfg);

// One full decoder stack pass over a query set.
Graph::Ref decode(Graph& g, Graph::Ref memory, Graph::Ref queries, DetectorParams& params,
                  const DetectorConfig& cfg);

// Full forward in the configured decoding mode, recorded on the graph.
ForwardRefs forward_graph(Graph& g, const RasterImage& img, DetectorParams& params,
                          const DetectorConfig& cfg);

// Value-only forward.
DetectorOutput forward(const RasterImage& img, DetectorParams& params, const DetectorConfig& cfg);

DetectorOutput read_output(const Graph& g, const ForwardRefs& refs, const DetectorConfig& cfg);

// Flat binary checkpoint: header with config, then named parameter blobs.
void save_checkpoint(const std::string& path, const DetectorConfig& cfg, DetectorParams& params);
struct Checkpoint {
  DetectorConfig config;
  DetectorParams params;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace owodlab
