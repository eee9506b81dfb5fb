#include "uvq/storage.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace uvq {

namespace {

struct ByteWriter {
    std::vector<std::uint8_t> bytes;

    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
    void raw(std::span<const std::uint8_t> s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
    void tensor_f32(const Tensor& t) {
        u8(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t e : t.shape) u64(e);
        for (double v : t.data) f32(static_cast<float>(v));
    }
};

struct ByteReader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw DataError("truncated file");
    }
    std::uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
    std::span<const std::uint8_t> raw(std::size_t n) {
        need(n);
        auto s = bytes.subspan(pos, n);
        pos += n;
        return s;
    }
    // Caps decoded element counts so corrupt dimension fields fail as data
    // errors instead of allocation failures.
    static constexpr std::size_t kMaxDecodedElems = std::size_t{1} << 28;

    std::size_t dim() {
        const std::uint64_t v = u64();
        if (v > kMaxDecodedElems) throw DataError("implausible dimension in file");
        return static_cast<std::size_t>(v);
    }

    Tensor tensor_f32() {
        const std::uint8_t rank = u8();
        std::vector<std::size_t> shape(rank);
        std::size_t elems = 1;
        for (auto& e : shape) {
            e = dim();
            elems *= std::max<std::size_t>(e, 1);
            if (elems > kMaxDecodedElems) throw DataError("implausible tensor size");
        }
        Tensor t(std::move(shape));
        for (double& v : t.data) v = static_cast<double>(f32());
        return t;
    }
    void done() const {
        if (pos != bytes.size()) throw DataError("trailing bytes in file");
    }
};

void check_magic(ByteReader& r, const char* magic) {
    const auto m = r.raw(4);
    if (std::memcmp(m.data(), magic, 4) != 0) {
        throw DataError(std::string("bad magic, expected ") + magic);
    }
    const std::uint32_t version = r.u32();
    if (version != 1) {
        throw DataError(std::string(magic) + ": unknown version " +
                        std::to_string(version));
    }
}

void put_magic(ByteWriter& w, const char* magic) {
    w.raw({reinterpret_cast<const std::uint8_t*>(magic), 4});
    w.u32(1);
}

}  // namespace

std::size_t bits_per_index(std::size_t k) {
    if (k == 0) throw UsageError("bits_per_index: k must be >= 1");
    std::size_t bits = 0;
    std::size_t cap = 1;
    while (cap < k) {
        cap <<= 1;
        ++bits;
    }
    return bits;
}

std::vector<std::uint8_t> pack_assignments(std::span<const std::uint32_t> indices,
                                           std::size_t k) {
    const std::size_t bits = bits_per_index(k);
    std::vector<std::uint8_t> out(((indices.size() * bits) + 7) / 8, 0);
    std::size_t bitpos = 0;
    for (std::uint32_t idx : indices) {
        if (idx >= k) throw DataError("pack_assignments: index out of range");
        for (std::size_t b = 0; b < bits; ++b, ++bitpos) {
            if ((idx >> b) & 1u) out[bitpos / 8] |= static_cast<std::uint8_t>(1u << (bitpos % 8));
        }
    }
    return out;
}

std::vector<std::uint32_t> unpack_assignments(std::span<const std::uint8_t> bytes,
                                              std::size_t count, std::size_t k) {
    const std::size_t bits = bits_per_index(k);
    if (bytes.size() != ((count * bits) + 7) / 8) {
        throw DataError("unpack_assignments: stream length mismatch");
    }
    std::vector<std::uint32_t> out(count, 0);
    std::size_t bitpos = 0;
    for (std::uint32_t& idx : out) {
        for (std::size_t b = 0; b < bits; ++b, ++bitpos) {
            if ((bytes[bitpos / 8] >> (bitpos % 8)) & 1u) idx |= 1u << b;
        }
        if (idx >= k) throw DataError("unpack_assignments: decoded index out of range");
    }
    return out;
}

// --- weight bundles -------------------------------------------------------

namespace {

void write_layer(ByteWriter& w, const LayerSpec& l) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    std::uint8_t flags = 0;
    if (l.compressible) flags |= 1;
    if (l.output_head) flags |= 2;
    w.u8(flags);
    switch (l.kind) {
        case LayerKind::dense:
        case LayerKind::conv3x3:
            w.tensor_f32(l.weight);
            w.tensor_f32(l.bias);
            break;
        case LayerKind::batchnorm:
            w.f64(l.bn_eps);
            w.tensor_f32(l.gamma);
            w.tensor_f32(l.beta);
            w.tensor_f32(l.running_mean);
            w.tensor_f32(l.running_var);
            break;
        default:
            break;
    }
}

LayerSpec read_layer(ByteReader& r) {
    LayerSpec l;
    const std::uint8_t kind = r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::softmax_output)) {
        throw DataError("unknown layer kind");
    }
    l.kind = static_cast<LayerKind>(kind);
    const std::uint8_t flags = r.u8();
    l.compressible = flags & 1;
    l.output_head = flags & 2;
    switch (l.kind) {
        case LayerKind::dense:
        case LayerKind::conv3x3:
            l.weight = r.tensor_f32();
            l.bias = r.tensor_f32();
            break;
        case LayerKind::batchnorm:
            l.bn_eps = r.f64();
            l.gamma = r.tensor_f32();
            l.beta = r.tensor_f32();
            l.running_mean = r.tensor_f32();
            l.running_var = r.tensor_f32();
            break;
        default:
            break;
    }
    return l;
}

void write_header(ByteWriter& w, const std::string& name, TaskKind task,
                  const std::vector<std::size_t>& input_shape) {
    w.str(name);
    w.u8(static_cast<std::uint8_t>(task));
    w.u8(static_cast<std::uint8_t>(input_shape.size()));
    for (std::size_t e : input_shape) w.u64(e);
}

void read_header(ByteReader& r, std::string& name, TaskKind& task,
                 std::vector<std::size_t>& input_shape) {
    name = r.str();
    task = static_cast<TaskKind>(r.u8());
    input_shape.resize(r.u8());
    for (std::size_t& e : input_shape) e = static_cast<std::size_t>(r.u64());
}

void write_blocks(ByteWriter& w, const std::vector<BlockSpec>& blocks) {
    w.u32(static_cast<std::uint32_t>(blocks.size()));
    for (const BlockSpec& b : blocks) {
        w.str(b.name);
        w.u32(static_cast<std::uint32_t>(b.first));
        w.u32(static_cast<std::uint32_t>(b.last));
    }
}

std::vector<BlockSpec> read_blocks(ByteReader& r) {
    std::vector<BlockSpec> blocks(r.u32());
    for (BlockSpec& b : blocks) {
        b.name = r.str();
        b.first = r.u32();
        b.last = r.u32();
    }
    return blocks;
}

}  // namespace

std::vector<std::uint8_t> encode_bundle(const TinyNet& net) {
    ByteWriter w;
    put_magic(w, "UVQW");
    write_header(w, net.name, net.task, net.input_shape);
    w.u32(static_cast<std::uint32_t>(net.layers.size()));
    for (const LayerSpec& l : net.layers) write_layer(w, l);
    write_blocks(w, net.blocks);
    return std::move(w.bytes);
}

TinyNet decode_bundle(std::span<const std::uint8_t> bytes) {
    ByteReader r{bytes};
    check_magic(r, "UVQW");
    TinyNet net;
    read_header(r, net.name, net.task, net.input_shape);
    net.layers.resize(r.u32());
    for (LayerSpec& l : net.layers) l = read_layer(r);
    net.blocks = read_blocks(r);
    r.done();
    net.check_blocks();
    return net;
}

// --- codebook files -------------------------------------------------------

std::vector<std::uint8_t> encode_codebook(const CodebookFile& cf) {
    ByteWriter w;
    put_magic(w, "UVQK");
    w.u64(cf.codebook.k);
    w.u64(cf.codebook.d);
    for (double v : cf.codebook.words) w.f32(static_cast<float>(v));
    w.f64(cf.bandwidth);
    w.u64(cf.seed);
    w.u64(cf.quota_per_net);
    w.str(cf.sources);
    return std::move(w.bytes);
}

CodebookFile decode_codebook(std::span<const std::uint8_t> bytes) {
    ByteReader r{bytes};
    check_magic(r, "UVQK");
    CodebookFile cf;
    cf.codebook.k = r.dim();
    cf.codebook.d = r.dim();
    if (cf.codebook.k * std::max<std::size_t>(cf.codebook.d, 1) >
        ByteReader::kMaxDecodedElems) {
        throw DataError("implausible codebook size");
    }
    cf.codebook.words.resize(cf.codebook.k * cf.codebook.d);
    for (double& v : cf.codebook.words) v = static_cast<double>(r.f32());
    cf.bandwidth = r.f64();
    cf.seed = r.u64();
    cf.quota_per_net = r.u64();
    cf.sources = r.str();
    r.done();
    return cf;
}

// --- compressed models ----------------------------------------------------

CompressedModel build_compressed_model(const TinyNet& net_hard,
                                       const AssignmentSet& set) {
    CompressedModel m;
    m.net_name = net_hard.name;
    m.task = net_hard.task;
    m.input_shape = net_hard.input_shape;
    m.skeleton = net_hard.layers;
    m.blocks = net_hard.blocks;
    if (!set.layers.empty()) {
        bool any_universal = false;
        for (const LayerAssignment& la : set.layers) {
            if (la.codebook_ref == CodebookRefKind::universal) any_universal = true;
        }
        if (any_universal) m.universal = set.universal;
    }
    m.per_layer = set.per_layer;

    for (const LayerAssignment& la : set.layers) {
        CompressedLayerRecord rec;
        rec.layer_index = la.layer_index;
        rec.ref = la.codebook_ref;
        rec.per_layer_cb = la.per_layer_cb;
        rec.k = la.k;
        rec.d = la.d;
        rec.rows = la.rows;
        rec.cols = la.cols;
        rec.src_cols = la.src_cols;
        rec.valid_tail = la.valid_tail;
        rec.indices = hard_indices(la);
        m.layers.push_back(std::move(rec));
        m.skeleton[la.layer_index].weight.fill(0.0);  // not stored raw
    }
    return m;
}

std::vector<std::uint8_t> encode_model(const CompressedModel& model) {
    ByteWriter w;
    put_magic(w, "UVQC");
    write_header(w, model.net_name, model.task, model.input_shape);

    w.u8(model.universal.has_value() ? 1 : 0);
    if (model.universal) {
        w.u64(model.universal->k);
        w.u64(model.universal->d);
        for (double v : model.universal->words) w.f32(static_cast<float>(v));
    }
    w.u32(static_cast<std::uint32_t>(model.per_layer.size()));
    for (const Codebook& cb : model.per_layer) {
        w.u64(cb.k);
        w.u64(cb.d);
        for (double v : cb.words) w.f32(static_cast<float>(v));
    }

    w.u32(static_cast<std::uint32_t>(model.skeleton.size()));
    for (std::size_t li = 0; li < model.skeleton.size(); ++li) {
        const CompressedLayerRecord* rec = nullptr;
        for (const CompressedLayerRecord& cr : model.layers) {
            if (cr.layer_index == li) rec = &cr;
        }
        if (!rec) {
            w.u8(0);  // stored raw
            write_layer(w, model.skeleton[li]);
            continue;
        }
        w.u8(1);  // assignment stream
        const LayerSpec& l = model.skeleton[li];
        w.u8(static_cast<std::uint8_t>(l.kind));
        std::uint8_t flags = 0;
        if (l.compressible) flags |= 1;
        if (l.output_head) flags |= 2;
        w.u8(flags);
        w.u8(static_cast<std::uint8_t>(l.weight.rank()));
        for (std::size_t e : l.weight.shape) w.u64(e);
        w.tensor_f32(l.bias);
        w.u8(static_cast<std::uint8_t>(rec->ref));
        w.u32(static_cast<std::uint32_t>(rec->per_layer_cb));
        w.u64(rec->k);
        w.u64(rec->d);
        w.u64(rec->rows);
        w.u64(rec->cols);
        w.u64(rec->src_cols);
        w.u64(rec->valid_tail);
        const std::vector<std::uint8_t> packed = pack_assignments(rec->indices, rec->k);
        w.u64(packed.size());
        w.raw(packed);
    }
    write_blocks(w, model.blocks);
    return std::move(w.bytes);
}

namespace {

Codebook read_codebook_body(ByteReader& r) {
    Codebook cb;
    cb.k = r.dim();
    cb.d = r.dim();
    if (cb.k * std::max<std::size_t>(cb.d, 1) > ByteReader::kMaxDecodedElems) {
        throw DataError("implausible codebook size");
    }
    cb.words.resize(cb.k * cb.d);
    for (double& v : cb.words) v = static_cast<double>(r.f32());
    return cb;
}

}  // namespace

CompressedModel decode_model(std::span<const std::uint8_t> bytes) {
    ByteReader r{bytes};
    check_magic(r, "UVQC");
    CompressedModel m;
    read_header(r, m.net_name, m.task, m.input_shape);

    if (r.u8()) {
        m.universal = read_codebook_body(r);
    }
    m.per_layer.resize(r.u32());
    for (Codebook& cb : m.per_layer) cb = read_codebook_body(r);

    m.skeleton.resize(r.u32());
    for (std::size_t li = 0; li < m.skeleton.size(); ++li) {
        const std::uint8_t stored = r.u8();
        if (stored == 0) {
            m.skeleton[li] = read_layer(r);
            continue;
        }
        if (stored != 1) throw DataError("bad layer storage marker");
        LayerSpec l;
        l.kind = static_cast<LayerKind>(r.u8());
        const std::uint8_t flags = r.u8();
        l.compressible = flags & 1;
        l.output_head = flags & 2;
        std::vector<std::size_t> wshape(r.u8());
        std::size_t elems = 1;
        for (std::size_t& e : wshape) {
            e = r.dim();
            elems *= std::max<std::size_t>(e, 1);
            if (elems > ByteReader::kMaxDecodedElems) {
                throw DataError("implausible tensor size");
            }
        }
        l.weight = Tensor::zeros(std::move(wshape));
        l.bias = r.tensor_f32();

        CompressedLayerRecord rec;
        rec.layer_index = li;
        rec.ref = static_cast<CodebookRefKind>(r.u8());
        rec.per_layer_cb = r.u32();
        rec.k = r.dim();
        rec.d = r.dim();
        rec.rows = r.dim();
        rec.cols = r.dim();
        rec.src_cols = r.dim();
        rec.valid_tail = r.dim();
        if (rec.rows * std::max<std::size_t>(rec.cols, 1) >
            ByteReader::kMaxDecodedElems) {
            throw DataError("implausible assignment grid");
        }
        const std::uint64_t nbytes = r.u64();
        rec.indices = unpack_assignments(r.raw(nbytes), rec.rows * rec.cols, rec.k);

        if (rec.ref == CodebookRefKind::universal && !m.universal) {
            throw DataError("layer references a missing universal codebook");
        }
        if (rec.ref == CodebookRefKind::per_layer &&
            rec.per_layer_cb >= m.per_layer.size()) {
            throw DataError("layer references a missing per-layer codebook");
        }
        m.skeleton[li] = std::move(l);
        m.layers.push_back(std::move(rec));
    }
    m.blocks = read_blocks(r);
    r.done();
    return m;
}

TinyNet reconstruct_net(const CompressedModel& model) {
    TinyNet net;
    net.name = model.net_name;
    net.task = model.task;
    net.input_shape = model.input_shape;
    net.layers = model.skeleton;
    net.blocks = model.blocks;

    for (const CompressedLayerRecord& rec : model.layers) {
        const Codebook& cb = rec.ref == CodebookRefKind::universal
                                 ? *model.universal
                                 : model.per_layer[rec.per_layer_cb];
        if (cb.d != rec.d || cb.k != rec.k) {
            throw DataError("codebook shape mismatch in compressed model");
        }
        SubVectorGrid grid;
        grid.rows = rec.rows;
        grid.cols = rec.cols;
        grid.d = rec.d;
        grid.src_cols = rec.src_cols;
        grid.valid_tail = rec.valid_tail;
        grid.data.assign(grid.count() * grid.d, 0.0);
        for (std::size_t sv = 0; sv < grid.count(); ++sv) {
            std::copy_n(cb.word(rec.indices[sv]).begin(), rec.d,
                        grid.data.begin() + sv * rec.d);
        }
        set_canonical_weight(net.layers[rec.layer_index], reassemble(grid));
    }
    return net;
}

Tensor decode_and_run(const CompressedModel& model, const Tensor& x) {
    return forward(reconstruct_net(model), x).output;
}

// --- accounting -----------------------------------------------------------

double weights_only_rate(std::size_t k, std::size_t d) {
    return 32.0 * static_cast<double>(d) / static_cast<double>(bits_per_index(k));
}

namespace {

std::size_t tensor_bytes_f32(const Tensor& t) { return t.numel() * 4; }

std::size_t layer_param_bytes(const LayerSpec& l) {
    return tensor_bytes_f32(l.weight) + tensor_bytes_f32(l.bias) +
           tensor_bytes_f32(l.gamma) + tensor_bytes_f32(l.beta) +
           tensor_bytes_f32(l.running_mean) + tensor_bytes_f32(l.running_var);
}

}  // namespace

CompressionReport account(const CompressedModel& model, const TinyNet& original,
                          CodebookSharing sharing, std::size_t resident_layers,
                          std::size_t sharing_networks) {
    if (original.layers.size() != model.skeleton.size()) {
        throw DataError("account: original net does not match compressed model");
    }
    CompressionReport rep;
    rep.net_name = model.net_name;

    for (const LayerSpec& l : original.layers) rep.original_bytes += layer_param_bytes(l);

    const TinyNet hard = reconstruct_net(model);

    std::size_t stream_bits = 0;
    double sq = 0.0;
    for (const CompressedLayerRecord& rec : model.layers) {
        stream_bits += rec.stream_bits();
        rep.compressed_weights += rec.weight_count();
        sq += sum_sq_diff(canonical_weight(original.layers[rec.layer_index]),
                          canonical_weight(hard.layers[rec.layer_index]));
    }
    rep.stream_bytes = (stream_bits + 7) / 8;
    rep.weight_mse = rep.compressed_weights
                         ? sq / static_cast<double>(rep.compressed_weights)
                         : 0.0;
    rep.bits_per_weight =
        rep.compressed_weights
            ? static_cast<double>(stream_bits) / static_cast<double>(rep.compressed_weights)
            : 0.0;
    rep.rate_weights_only = rep.bits_per_weight > 0.0 ? 32.0 / rep.bits_per_weight : 0.0;
    rep.rate_weights_only_rounded = std::lround(rep.rate_weights_only);

    // Residuals: every tensor that is not an assignment stream.
    for (std::size_t li = 0; li < model.skeleton.size(); ++li) {
        const LayerSpec& l = model.skeleton[li];
        bool compressed = false;
        for (const CompressedLayerRecord& rec : model.layers) {
            if (rec.layer_index == li) compressed = true;
        }
        rep.residual_bytes += layer_param_bytes(l);
        if (compressed) rep.residual_bytes -= tensor_bytes_f32(l.weight);
    }

    std::size_t universal_bytes = 0, head_bytes = 0;
    if (model.universal) universal_bytes = model.universal->k * model.universal->d * 4;
    for (const Codebook& cb : model.per_layer) head_bytes += cb.k * cb.d * 4;
    rep.codebook_bytes = universal_bytes + head_bytes;

    rep.compressed_bytes = rep.stream_bytes + rep.residual_bytes + rep.codebook_bytes;
    rep.ratio_total = static_cast<double>(rep.original_bytes) /
                      static_cast<double>(rep.compressed_bytes);
    const double amortized =
        static_cast<double>(rep.stream_bytes + rep.residual_bytes + head_bytes) +
        static_cast<double>(universal_bytes) /
            static_cast<double>(std::max<std::size_t>(sharing_networks, 1));
    rep.ratio_total_amortized = static_cast<double>(rep.original_bytes) / amortized;

    rep.io_loads = sharing == CodebookSharing::universal
                       ? 1
                       : std::max<std::size_t>(resident_layers, 1);
    return rep;
}

// --- files ------------------------------------------------------------------

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void save_bundle(const std::filesystem::path& path, const TinyNet& net) {
    const auto bytes = encode_bundle(net);
    write_file(path, bytes);
}

TinyNet load_bundle(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return decode_bundle(bytes);
}

void save_codebook(const std::filesystem::path& path, const CodebookFile& cf) {
    const auto bytes = encode_codebook(cf);
    write_file(path, bytes);
}

CodebookFile load_codebook(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return decode_codebook(bytes);
}

void save_model(const std::filesystem::path& path, const CompressedModel& model) {
    const auto bytes = encode_model(model);
    write_file(path, bytes);
}

CompressedModel load_model(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return decode_model(bytes);
}

}  // namespace uvq
