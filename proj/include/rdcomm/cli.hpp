#ifndef RDCOMM_CLI_HPP_
#define RDCOMM_CLI_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rdcomm/pipeline.hpp"

namespace rdcomm
{

inline constexpr std::string_view kVersion = "0.1.0";

/// Bad configuration or command line; the message names the offending key.
class UsageError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct VerifySettings
{
    std::filesystem::path fixtures = "fixtures";
    int random_tables = 50;
    std::size_t draws = 200000;
};

struct RunConfig
{
    TrainConfig train;  // train.world holds the world settings, train.seed the run seed
    SweepConfig sweep;  // seeds are offsets from the run seed
    std::vector<std::string> tau_mi_tokens{"inf"};
    VerifySettings verify;
    std::filesystem::path model;  // trained model to reuse; empty trains in process
    bool bitstreams = false;

    [[nodiscard]] const WorldConfig& world() const { return train.world; }
    [[nodiscard]] std::uint64_t seed() const { return train.seed; }
    void set_seed(std::uint64_t s);

    /// Every setting as `[section] key = value` lines in a fixed order.
    [[nodiscard]] std::string canonical() const;
};

/// Grammar: `[section]` headers, `key = value` lines, `#` comments. Lists are
/// comma separated; integer lists accept `a..b` ranges. Relative input paths
/// resolve against `base`.
RunConfig parse_config(std::istream& in, const std::filesystem::path& base = {});
RunConfig load_config(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);

struct ModelFiles
{
    static constexpr const char* codebook = "codebook.txt";
    static constexpr const char* discriminator = "discriminator.txt";
    static constexpr const char* meta = "model.json";
};

void save_model(const std::filesystem::path& dir, const Model& m);
Model load_model(const std::filesystem::path& dir);

/// Runs the command line; returns the process exit code (0 ok, 1 failed
/// check or runtime error, 2 usage).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace rdcomm

#endif // RDCOMM_CLI_HPP_
