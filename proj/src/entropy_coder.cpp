#include "rdcomm/entropy_coder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <queue>
#include <tuple>

namespace rdcomm
{

void BitWriter::put(std::uint64_t value, int nbits)
{
    require(nbits >= 0 && nbits <= 64, "bit count out of range");
    for (int i = nbits - 1; i >= 0; --i) {
        if (nbits_ % 8 == 0) bytes_.push_back(0);
        if ((value >> i) & 1u) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (nbits_ % 8));
        ++nbits_;
    }
}

void BitWriter::append(const BitWriter& other)
{
    BitReader r(other);
    while (r.remaining() >= 32) put(r.get(32), 32);
    const int rest = static_cast<int>(r.remaining());
    put(r.get(rest), rest);
}

bool BitReader::get_bit()
{
    if (pos_ >= nbits_) throw FormatError("truncated bitstream");
    const bool b = (data_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
    ++pos_;
    return b;
}

std::uint64_t BitReader::get(int nbits)
{
    if (static_cast<std::size_t>(nbits) > remaining()) throw FormatError("truncated bitstream");
    std::uint64_t v = 0;
    for (int i = 0; i < nbits; ++i) v = (v << 1) | (get_bit() ? 1u : 0u);
    return v;
}

double PrefixCode::kraft_sum() const
{
    double s = 0.0;
    for (int l : lengths) s += std::ldexp(1.0, -l);
    return s;
}

std::string PrefixCode::codeword_string(int symbol) const
{
    const auto i = static_cast<std::size_t>(symbol);
    std::string s;
    for (int b = lengths[i] - 1; b >= 0; --b) s += ((codewords[i] >> b) & 1u) ? '1' : '0';
    return s;
}

void PrefixCode::write(BitWriter& out, int symbol) const
{
    if (symbol < 0 || symbol >= size()) throw InvalidArgument("symbol " + std::to_string(symbol) + " outside code range");
    const auto i = static_cast<std::size_t>(symbol);
    out.put(codewords[i], lengths[i]);
}

int PrefixCode::read(BitReader& in) const
{
    // At each length the canonical codewords form one contiguous block.
    std::uint64_t code = 0;
    std::size_t k = 0;
    for (int len = 1; len <= kMaxCodeLength && k < order.size(); ++len) {
        code = (code << 1) | (in.get_bit() ? 1u : 0u);
        std::size_t end = k;
        while (end < order.size() && lengths[static_cast<std::size_t>(order[end])] == len) ++end;
        if (end > k) {
            const std::uint64_t first = codewords[static_cast<std::size_t>(order[k])];
            if (code >= first && code - first < end - k) return order[k + (code - first)];
        }
        k = end;
    }
    throw FormatError("invalid codeword");
}

PrefixCode canonical_code(std::vector<int> lengths)
{
    require(!lengths.empty(), "code needs at least one symbol");
    for (int l : lengths)
        if (l < 1 || l > kMaxCodeLength) throw InvalidArgument("code length out of range");
    PrefixCode c;
    c.lengths = std::move(lengths);
    require(c.kraft_sum() <= 1.0 + 1e-12, "lengths violate the Kraft inequality");
    c.codewords.assign(c.lengths.size(), 0);
    auto& order = c.order;
    order.resize(c.lengths.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return c.lengths[a] < c.lengths[b]; });
    std::uint64_t code = 0;
    int prev = c.lengths[static_cast<std::size_t>(order[0])];
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto s = static_cast<std::size_t>(order[k]);
        if (k > 0) {
            ++code;
            code <<= (c.lengths[s] - prev);
        }
        prev = c.lengths[s];
        c.codewords[s] = code;
    }
    return c;
}

PrefixCode build_code(const Vec& weights)
{
    const auto n = static_cast<int>(weights.size());
    require(n >= 1, "code needs at least one symbol");
    require((weights.array() >= 0.0).all() && weights.allFinite(), "weights must be finite and nonnegative");
    require(weights.sum() > 0.0, "all weights are zero");
    if (n == 1) return canonical_code({1});

    // Node = (weight, tiebreak id). Leaves use their symbol index, internal
    // nodes get increasing ids after all leaves.
    using Node = std::tuple<double, int>;
    std::priority_queue<Node, std::vector<Node>, std::greater<>> pq;
    std::vector<int> parent(static_cast<std::size_t>(2 * n - 1), -1);
    for (int i = 0; i < n; ++i) pq.emplace(weights[i], i);
    int next = n;
    while (pq.size() > 1) {
        const auto [wa, a] = pq.top();
        pq.pop();
        const auto [wb, b] = pq.top();
        pq.pop();
        parent[static_cast<std::size_t>(a)] = next;
        parent[static_cast<std::size_t>(b)] = next;
        pq.emplace(wa + wb, next++);
    }
    std::vector<int> depth(parent.size(), 0);
    for (int v = next - 2; v >= 0; --v) depth[static_cast<std::size_t>(v)] = depth[static_cast<std::size_t>(parent[static_cast<std::size_t>(v)])] + 1;
    std::vector<int> lengths(depth.begin(), depth.begin() + n);
    if (*std::max_element(lengths.begin(), lengths.end()) > kMaxCodeLength)
        throw InvalidArgument("Huffman code exceeds 64 bits");
    return canonical_code(std::move(lengths));
}

int fixed_length_bits(int n_symbols)
{
    require(n_symbols >= 1, "need at least one symbol");
    if (n_symbols == 1) return 1;
    return static_cast<int>(std::bit_width(static_cast<unsigned>(n_symbols - 1)));
}

PrefixCode fixed_code(int n_symbols)
{
    return canonical_code(std::vector<int>(static_cast<std::size_t>(n_symbols), fixed_length_bits(n_symbols)));
}

double expected_length(const PrefixCode& code, const Vec& weights)
{
    require(weights.size() == code.size(), "weight count does not match the code");
    double s = 0.0;
    for (int i = 0; i < code.size(); ++i) s += weights[i] * code.lengths[static_cast<std::size_t>(i)];
    return s / weights.sum();
}

std::string_view to_string(CoderVariant v)
{
    switch (v) {
    case CoderVariant::TaskEntropy: return "task_entropy";
    case CoderVariant::Occurrence: return "occurrence";
    case CoderVariant::Fixed: return "fixed";
    }
    return "fixed";
}

CoderVariant coder_variant_from_string(std::string_view s)
{
    if (s == "task_entropy") return CoderVariant::TaskEntropy;
    if (s == "occurrence") return CoderVariant::Occurrence;
    if (s == "fixed") return CoderVariant::Fixed;
    throw InvalidArgument("unknown coder variant '" + std::string(s) + "'");
}

namespace
{

// A codebook that saw no confidence mass at all still needs a decodable code.
PrefixCode weighted_or_fixed(const Vec& w, int n)
{
    if (w.size() != n || w.sum() <= 0.0) return fixed_code(n);
    return build_code(w);
}

} // namespace

CodeTables make_code_tables(const LayeredCodebook& cb, CoderVariant variant)
{
    CodeTables t;
    t.variant = variant;
    switch (variant) {
    case CoderVariant::TaskEntropy:
        t.base = weighted_or_fixed(cb.base.conf_freq, cb.base.size());
        t.res = weighted_or_fixed(cb.res.conf_freq, cb.res.size());
        break;
    case CoderVariant::Occurrence:
        t.base = weighted_or_fixed(cb.base.occ_freq, cb.base.size());
        t.res = weighted_or_fixed(cb.res.occ_freq, cb.res.size());
        break;
    case CoderVariant::Fixed:
        t.base = fixed_code(cb.base.size());
        t.res = fixed_code(cb.res.size());
        break;
    }
    return t;
}

std::size_t EncodedMessage::mask_bits() const
{
    const auto cells = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    return (has_conf_mask ? cells : 0u) + (has_redund_mask ? static_cast<std::size_t>(conf_mask.count()) : 0u);
}

EncodedMessage encode(const IndexGrid& idx, const Mask& conf_mask, const Mask& redund_mask, const CodeTables& codes,
                      const EncodeOptions& opt)
{
    const auto shape_ok = [&](const Mask& m) { return m.rows() == idx.h && m.cols() == idx.w; };
    require(!opt.send_conf_mask || shape_ok(conf_mask), "confidence mask shape does not match the grid");
    require(!opt.send_redund_mask || shape_ok(redund_mask), "redundancy mask shape does not match the grid");
    require(idx.h <= 0xffff && idx.w <= 0xffff, "grid too large for the header");

    EncodedMessage m;
    m.h = idx.h;
    m.w = idx.w;
    m.variant = codes.variant;
    m.has_conf_mask = opt.send_conf_mask;
    m.has_redund_mask = opt.send_redund_mask;
    m.has_abstract = opt.send_abstract;
    m.conf_mask = opt.send_conf_mask ? conf_mask : Mask::Constant(idx.h, idx.w, true);
    m.redund_mask = (opt.send_redund_mask ? redund_mask : Mask::Constant(idx.h, idx.w, true)) && m.conf_mask;

    for (int u = 0; u < idx.h; ++u)
        for (int v = 0; v < idx.w; ++v) {
            if (!m.conf_mask(u, v)) continue;
            if (m.has_abstract) codes.base.write(m.base_payload, idx.base_idx(u, v));
            if (m.redund_mask(u, v)) {
                codes.base.write(m.full_payload, idx.base_idx(u, v));
                codes.res.write(m.full_payload, idx.res_idx(u, v));
            }
        }
    return m;
}

DecodedMessage decode(const EncodedMessage& msg, const CodeTables& codes)
{
    DecodedMessage d;
    d.idx = IndexGrid(msg.h, msg.w);
    d.idx.base_idx.setConstant(-1);
    d.idx.res_idx.setConstant(-1);
    d.has_base = Mask::Constant(msg.h, msg.w, false);
    d.has_full = Mask::Constant(msg.h, msg.w, false);

    BitReader base(msg.base_payload), full(msg.full_payload);
    for (int u = 0; u < msg.h; ++u)
        for (int v = 0; v < msg.w; ++v) {
            if (!msg.conf_mask(u, v)) continue;
            if (msg.has_abstract) {
                d.idx.base_idx(u, v) = codes.base.read(base);
                d.has_base(u, v) = true;
            }
            if (msg.redund_mask(u, v)) {
                const int b = codes.base.read(full);
                if (msg.has_abstract && b != d.idx.base_idx(u, v)) throw FormatError("base index mismatch between payloads");
                d.idx.base_idx(u, v) = b;
                d.idx.res_idx(u, v) = codes.res.read(full);
                d.has_base(u, v) = true;
                d.has_full(u, v) = true;
            }
        }
    if (base.remaining() != 0 || full.remaining() != 0) throw FormatError("trailing payload bits");
    return d;
}

namespace
{

constexpr std::uint8_t kVersion = 1;

// Bits of `m` at the cells where `within` is set, raster order.
void write_mask(BitWriter& out, const Mask& m, const Mask& within)
{
    for (int u = 0; u < m.rows(); ++u)
        for (int v = 0; v < m.cols(); ++v)
            if (within(u, v)) out.put_bit(m(u, v));
}

Mask read_mask(BitReader& in, const Mask& within)
{
    Mask m = Mask::Constant(within.rows(), within.cols(), false);
    for (int u = 0; u < m.rows(); ++u)
        for (int v = 0; v < m.cols(); ++v)
            if (within(u, v)) m(u, v) = in.get_bit();
    return m;
}

BitWriter read_payload(BitReader& in)
{
    const auto n = in.get(32);
    BitWriter p;
    std::uint64_t left = n;
    while (left >= 32) {
        p.put(in.get(32), 32);
        left -= 32;
    }
    p.put(in.get(static_cast<int>(left)), static_cast<int>(left));
    return p;
}

} // namespace

std::vector<std::uint8_t> serialize(const EncodedMessage& msg)
{
    BitWriter out;
    for (char c : std::string_view("RDCM")) out.put(static_cast<std::uint8_t>(c), 8);
    out.put(kVersion, 8);
    out.put(static_cast<std::uint64_t>(msg.h), 16);
    out.put(static_cast<std::uint64_t>(msg.w), 16);
    const std::uint8_t ids = static_cast<std::uint8_t>((static_cast<unsigned>(msg.variant) << 4) | (msg.has_conf_mask ? 1u : 0u) |
                                                       (msg.has_redund_mask ? 2u : 0u) | (msg.has_abstract ? 4u : 0u));
    out.put(ids, 8);
    if (msg.has_conf_mask) write_mask(out, msg.conf_mask, Mask::Constant(msg.h, msg.w, true));
    if (msg.has_redund_mask) write_mask(out, msg.redund_mask, msg.conf_mask);
    require(msg.base_payload.size() <= 0xffffffffu && msg.full_payload.size() <= 0xffffffffu, "payload too large");
    out.put(msg.base_payload.size(), 32);
    out.append(msg.base_payload);
    out.put(msg.full_payload.size(), 32);
    out.append(msg.full_payload);
    return out.bytes();
}

EncodedMessage deserialize(const std::vector<std::uint8_t>& bytes)
{
    BitReader in(bytes.data(), bytes.size() * 8);
    std::string magic;
    for (int i = 0; i < 4; ++i) magic += static_cast<char>(in.get(8));
    if (magic != "RDCM") throw FormatError("bad magic");
    if (in.get(8) != kVersion) throw FormatError("unsupported bitstream version");
    EncodedMessage m;
    m.h = static_cast<int>(in.get(16));
    m.w = static_cast<int>(in.get(16));
    const auto ids = in.get(8);
    if ((ids >> 4) > 2 || (ids & 0x8u)) throw FormatError("bad code-table byte");
    m.variant = static_cast<CoderVariant>(ids >> 4);
    m.has_conf_mask = ids & 1u;
    m.has_redund_mask = ids & 2u;
    m.has_abstract = ids & 4u;
    const Mask all = Mask::Constant(m.h, m.w, true);
    m.conf_mask = m.has_conf_mask ? read_mask(in, all) : all;
    m.redund_mask = m.has_redund_mask ? read_mask(in, m.conf_mask) : Mask(m.conf_mask);
    m.base_payload = read_payload(in);
    m.full_payload = read_payload(in);
    if (in.remaining() >= 8) throw FormatError("trailing bytes after message");
    if (in.get(static_cast<int>(in.remaining())) != 0) throw FormatError("nonzero padding");
    return m;
}

} // namespace rdcomm
