#ifndef RDCOMM_ENTROPY_CODER_HPP_
#define RDCOMM_ENTROPY_CODER_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rdcomm/types.hpp"
#include "rdcomm/vq_codec.hpp"

namespace rdcomm
{

class BitWriter
{
public:
    void put(std::uint64_t value, int nbits);
    void put_bit(bool b) { put(b ? 1u : 0u, 1); }
    void append(const BitWriter& other);

    [[nodiscard]] std::size_t size() const { return nbits_; }
    [[nodiscard]] const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t nbits_ = 0;
};

class BitReader
{
public:
    BitReader(const std::uint8_t* data, std::size_t nbits) : data_(data), nbits_(nbits) {}
    explicit BitReader(const BitWriter& w) : BitReader(w.bytes().data(), w.size()) {}

    bool get_bit();
    std::uint64_t get(int nbits);

    [[nodiscard]] std::size_t position() const { return pos_; }
    [[nodiscard]] std::size_t remaining() const { return nbits_ - pos_; }

private:
    const std::uint8_t* data_;
    std::size_t nbits_;
    std::size_t pos_ = 0;
};

inline constexpr int kMaxCodeLength = 64;

/// Canonical prefix code. Codewords are right-aligned in `codewords`.
struct PrefixCode
{
    std::vector<int> lengths;
    std::vector<std::uint64_t> codewords;
    std::vector<int> order;  // symbols by (length, index)

    [[nodiscard]] int size() const { return static_cast<int>(lengths.size()); }
    [[nodiscard]] double kraft_sum() const;
    [[nodiscard]] std::string codeword_string(int symbol) const;

    void write(BitWriter& out, int symbol) const;
    int read(BitReader& in) const;

    bool operator==(const PrefixCode&) const = default;
};

/// Canonical code for the given lengths: shorter codewords first, ties by
/// symbol index.
PrefixCode canonical_code(std::vector<int> lengths);

/// Huffman code for nonnegative weights. Zero-weight symbols stay encodable
/// and end up with the longest lengths.
PrefixCode build_code(const Vec& weights);

int fixed_length_bits(int n_symbols);
PrefixCode fixed_code(int n_symbols);

/// Sum w_i l_i / sum w_i.
double expected_length(const PrefixCode& code, const Vec& weights);

enum class CoderVariant : std::uint8_t
{
    TaskEntropy = 0,  // confidence-frequency weights
    Occurrence = 1,
    Fixed = 2
};

std::string_view to_string(CoderVariant v);
CoderVariant coder_variant_from_string(std::string_view s);

struct CodeTables
{
    CoderVariant variant = CoderVariant::Fixed;
    PrefixCode base;
    PrefixCode res;
};

CodeTables make_code_tables(const LayeredCodebook& cb, CoderVariant variant);

struct EncodedMessage
{
    int h = 0;
    int w = 0;
    CoderVariant variant = CoderVariant::Fixed;
    bool has_conf_mask = false;
    bool has_redund_mask = false;
    bool has_abstract = false;
    Mask conf_mask;    // all true when absent
    Mask redund_mask;  // equals conf_mask when absent; always false outside conf_mask
    BitWriter base_payload;
    BitWriter full_payload;

    /// h*w bits for M_c plus one M_MI bit per M_c cell.
    [[nodiscard]] std::size_t mask_bits() const;
    [[nodiscard]] std::size_t payload_bits() const { return base_payload.size() + full_payload.size(); }
    [[nodiscard]] std::size_t total_bits() const { return payload_bits() + mask_bits(); }
    [[nodiscard]] Mask full_cells() const { return conf_mask && redund_mask; }
};

struct EncodeOptions
{
    bool send_conf_mask = true;
    bool send_redund_mask = true;
    bool send_abstract = true;
};

/// Base payload: base codewords for every M_c cell. Full payload: base then
/// residual codeword for every M_c & M_MI cell. Raster order.
EncodedMessage encode(const IndexGrid& idx, const Mask& conf_mask, const Mask& redund_mask, const CodeTables& codes,
                      const EncodeOptions& opt = {});

struct DecodedMessage
{
    IndexGrid idx;  // -1 where absent
    Mask has_base;
    Mask has_full;
};

DecodedMessage decode(const EncodedMessage& msg, const CodeTables& codes);

std::vector<std::uint8_t> serialize(const EncodedMessage& msg);
EncodedMessage deserialize(const std::vector<std::uint8_t>& bytes);

} // namespace rdcomm

#endif // RDCOMM_ENTROPY_CODER_HPP_
