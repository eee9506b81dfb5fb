#ifndef UVQ_STORAGE_HPP
#define UVQ_STORAGE_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uvq/assignment.hpp"
#include "uvq/net.hpp"

namespace uvq {

// Everything on disk is little-endian; tensors are stored as 32-bit floats
// (in-memory values are fp32-snapped wherever they cross this boundary, so
// round-trips are bit-identical).

// --- bit-packed assignment streams ---------------------------------------

// ceil(log2 k): bits needed per codeword index. k == 1 needs none.
std::size_t bits_per_index(std::size_t k);

// LSB-first packing at bits_per_index(k) bits per index.
std::vector<std::uint8_t> pack_assignments(std::span<const std::uint32_t> indices,
                                           std::size_t k);
std::vector<std::uint32_t> unpack_assignments(std::span<const std::uint8_t> bytes,
                                              std::size_t count, std::size_t k);

// --- weight bundles (magic "UVQW") ---------------------------------------

std::vector<std::uint8_t> encode_bundle(const TinyNet& net);
TinyNet decode_bundle(std::span<const std::uint8_t> bytes);
void save_bundle(const std::filesystem::path& path, const TinyNet& net);
TinyNet load_bundle(const std::filesystem::path& path);

// --- standalone codebooks (magic "UVQK") ---------------------------------

struct CodebookFile {
    Codebook codebook;
    double bandwidth = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t quota_per_net = 0;
    std::string sources;  // comma-joined source net names
};

std::vector<std::uint8_t> encode_codebook(const CodebookFile& cf);
CodebookFile decode_codebook(std::span<const std::uint8_t> bytes);
void save_codebook(const std::filesystem::path& path, const CodebookFile& cf);
CodebookFile load_codebook(const std::filesystem::path& path);

// --- compressed models (magic "UVQC") ------------------------------------

struct CompressedLayerRecord {
    std::size_t layer_index = 0;
    CodebookRefKind ref = CodebookRefKind::universal;
    std::size_t per_layer_cb = 0;
    std::size_t k = 0, d = 0;
    std::size_t rows = 0, cols = 0, src_cols = 0, valid_tail = 0;
    std::vector<std::uint32_t> indices;  // absolute codeword indices, row-major grid

    std::size_t weight_count() const { return rows * src_cols; }
    std::size_t stream_bits() const { return rows * cols * bits_per_index(k); }
};

struct CompressedModel {
    std::string net_name;
    TaskKind task = TaskKind::classification;
    std::vector<std::size_t> input_shape;
    std::vector<LayerSpec> skeleton;  // compressed layers carry zeroed weights
    std::vector<BlockSpec> blocks;
    std::optional<Codebook> universal;
    std::vector<Codebook> per_layer;
    std::vector<CompressedLayerRecord> layers;
};

// Captures the hard state of a finished compression run.
CompressedModel build_compressed_model(const TinyNet& net_hard,
                                       const AssignmentSet& set);

std::vector<std::uint8_t> encode_model(const CompressedModel& model);
CompressedModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const CompressedModel& model);
CompressedModel load_model(const std::filesystem::path& path);

// Hard-reconstructs every compressed layer and returns the runnable net.
TinyNet reconstruct_net(const CompressedModel& model);

// Decode-time inference: bit-identical to forwarding the in-memory hard net.
Tensor decode_and_run(const CompressedModel& model, const Tensor& x);

// --- compression accounting ----------------------------------------------

enum class CodebookSharing : std::uint8_t { universal = 0, per_layer = 1 };

struct CompressionReport {
    std::string net_name;
    double weight_mse = 0.0;        // compressed layers vs originals
    double bits_per_weight = 0.0;   // assignment stream bits / compressed weights
    double rate_weights_only = 0.0;      // 32 / bits_per_weight
    long rate_weights_only_rounded = 0;  // paper-style rounding
    double ratio_total = 0.0;            // whole model, codebook fully counted
    double ratio_total_amortized = 0.0;  // universal codebook cost shared
    std::size_t original_bytes = 0;
    std::size_t compressed_bytes = 0;
    std::size_t stream_bytes = 0;
    std::size_t residual_bytes = 0;  // uncompressed tensors
    std::size_t codebook_bytes = 0;  // universal + per-layer heads
    std::size_t compressed_weights = 0;
    std::size_t io_loads = 0;  // codebook loads across the resident suite
};

// Weights-only rate for a (k, d) configuration: 32 * d / bits_per_index(k).
double weights_only_rate(std::size_t k, std::size_t d);

// resident_layers: compressed layers across every network resident on the
// device (per-layer sharing loads one codebook per such layer; universal
// sharing loads exactly one codebook). sharing_networks amortizes the
// universal codebook's storage cost.
CompressionReport account(const CompressedModel& model, const TinyNet& original,
                          CodebookSharing sharing, std::size_t resident_layers,
                          std::size_t sharing_networks = 1);

// --- misc -----------------------------------------------------------------

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);

}  // namespace uvq

#endif
