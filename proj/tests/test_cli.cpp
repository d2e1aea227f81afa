#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "rdcomm/cli.hpp"

using namespace rdcomm;
namespace fs = std::filesystem;

namespace
{

const char* kSmall = R"(# small and quick
[world]
h = 16
w = 16
seed = 3

[train]
worlds = 2
tau_c_grid = 0.5

[codebook]
n_res = 8
iters = 5

[discriminator]
hidden = 8
steps = 20
max_pairs = 256

[sweep]
tau_c = 0.2, 0.5
tau_mi = inf, q0.5, q0
seeds = 0..2

[output]
bitstreams = true
)";

struct Tmp
{
    fs::path dir;

    explicit Tmp(const std::string& name) : dir(fs::temp_directory_path() / ("rdcomm_test_cli_" + name))
    {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Tmp() { fs::remove_all(dir); }

    fs::path write(const std::string& name, const std::string& text) const
    {
        std::ofstream(dir / name) << text;
        return dir / name;
    }
};

struct Run
{
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "rdcomm");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t lines(const fs::path& p)
{
    const auto s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

} // namespace

TEST_CASE("config parsing")
{
    std::istringstream in(kSmall);
    const auto cfg = parse_config(in);
    CHECK(cfg.world().h == 16);
    CHECK(cfg.seed() == 3);
    CHECK(cfg.sweep.seeds == std::vector<std::uint64_t>{0, 1, 2});
    CHECK(cfg.tau_mi_tokens == std::vector<std::string>{"inf", "q0.5", "q0"});
    CHECK(cfg.train.codebook.n_res == 8);
    CHECK(cfg.train.codebook.n_base == 4);
    CHECK(cfg.bitstreams);

    // The canonical form parses back to itself.
    std::istringstream again(cfg.canonical());
    CHECK(parse_config(again).canonical() == cfg.canonical());

    std::istringstream fov("[world]\nagents = 2\nfov = rect 0 0 16 10 ; sector 8 8 6 0 180\n");
    const auto f = parse_config(fov);
    REQUIRE(f.world().fovs.size() == 2);
    CHECK(f.world().fovs[1].kind == Fov::Kind::Sector);
}

TEST_CASE("config errors name the key")
{
    const auto error = [](const std::string& text) {
        std::istringstream in(text);
        try {
            (void)parse_config(in);
        } catch (const UsageError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(error("[world]\nbogus = 1\n").find("world.bogus") != std::string::npos);
    CHECK(error("[world]\nh = 1.5\n").find("world.h") != std::string::npos);
    CHECK(error("[world]\nnoise = 0.5\n").find("world.noise") != std::string::npos);
    CHECK(error("[sweep]\nseeds = 4..2\n").find("sweep.seeds") != std::string::npos);
    CHECK(error("[sweep]\ntau_mi = q2\n").find("sweep.tau_mi") != std::string::npos);
    CHECK(error("[sweep]\ncoder = zip\n").find("sweep.coder") != std::string::npos);
    CHECK(error("[sweep]\ntau_c = inf\n").find("sweep.tau_c") != std::string::npos);
    CHECK(error("[codebook]\nn_base = 8\nn_res = 4\n").find("codebook.n_res") != std::string::npos);
    CHECK(error("[world]\nh = 8\nh = 9\n").find("duplicate key world.h") != std::string::npos);
    CHECK(error("[space]\n").find("[space]") != std::string::npos);
    CHECK(error("h = 8\n").find("outside a section") != std::string::npos);
    CHECK(error("[verify]\nfixtures = /no/such/dir\n").find("verify.fixtures") != std::string::npos);
    CHECK(error("[world]\nfov = disc 1 2\n").find("world.fov") != std::string::npos);
}

TEST_CASE("exit codes")
{
    Tmp t("exit");
    const auto bad = t.write("bad.cfg", "[world]\nnope = 1\n");
    auto r = cli({"train", "--config", bad.string(), "--out", (t.dir / "o").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("world.nope") != std::string::npos);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    CHECK(cli({"train"}).code == 2);
    CHECK(cli({}).code == 2);
    CHECK(cli({"sweep", "--config", (t.dir / "missing.cfg").string(), "--out", t.dir.string()}).code == 2);
    CHECK(cli({"sweep", "--jobs", "0", "--out", t.dir.string()}).code == 2);
    CHECK(cli({"--help"}).code == 0);

    const auto broken = t.dir / "broken";
    fs::create_directories(broken);
    std::ofstream(broken / "one.jt") << "A:2 B:2\n0 0 0.5\n1 1 0.5\n";
    const auto cfg = t.write("v.cfg", "[verify]\nfixtures = broken\nrandom_tables = 0\n");
    r = cli({"verify-theory", "--config", cfg.string(), "--out", (t.dir / "v").string()});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("rdcomm: error: ", 0) == 0);
}

TEST_CASE("gen-world is reproducible and honours --seed")
{
    Tmp t("gen");
    const auto cfg = t.write("c.cfg", kSmall);
    REQUIRE(cli({"gen-world", "--config", cfg.string(), "--out", (t.dir / "a").string()}).code == 0);
    REQUIRE(cli({"gen-world", "--config", cfg.string(), "--out", (t.dir / "b").string()}).code == 0);
    REQUIRE(cli({"gen-world", "--config", cfg.string(), "--out", (t.dir / "c").string(), "--seed", "4"}).code == 0);
    for (const auto* f : {"truth.grid", "obs_0.grid", "obs_1.grid", "fov_1.grid", "manifest.json"})
        CHECK(slurp(t.dir / "a" / f) == slurp(t.dir / "b" / f));
    CHECK(slurp(t.dir / "a" / "truth.grid") != slurp(t.dir / "c" / "truth.grid"));

    std::ifstream in(t.dir / "a" / "truth.grid");
    CHECK(read_grid(in).rows() == 16);
    const auto m = nlohmann::json::parse(slurp(t.dir / "c" / "manifest.json"));
    CHECK(m["seed"] == 4);
    CHECK(m["command"] == "gen-world");
    CHECK(m["files"].contains("truth.grid"));
    CHECK(m["config_hash"] != nlohmann::json::parse(slurp(t.dir / "a" / "manifest.json"))["config_hash"]);
}

TEST_CASE("train, sweep with a saved model, export")
{
    Tmp t("flow");
    const auto cfg = t.write("c.cfg", kSmall);
    REQUIRE(cli({"train", "--config", cfg.string(), "--out", (t.dir / "model").string()}).code == 0);
    const auto m = load_model(t.dir / "model");
    CHECK(m.score_quantiles.size() == 11);
    CHECK(m.codebook.res.size() == 8);

    const auto reuse = t.write("r.cfg", std::string(kSmall) + "model = model\n");
    REQUIRE(cli({"sweep", "--config", reuse.string(), "--out", (t.dir / "s1").string(), "--jobs", "2"}).code == 0);
    REQUIRE(cli({"sweep", "--config", cfg.string(), "--out", (t.dir / "s2").string()}).code == 0);
    for (const auto* f : {"rounds.csv", "summary.csv", "bitstreams/round_0005_msg_1.rdcm"})
        CHECK(slurp(t.dir / "s1" / f) == slurp(t.dir / "s2" / f));
    CHECK(slurp(t.dir / "s2" / "model.json") == slurp(t.dir / "model" / "model.json"));

    CHECK(lines(t.dir / "s1" / "rounds.csv") == 1 + 2 * 3 * 3);
    CHECK(lines(t.dir / "s1" / "summary.csv") == 1 + 2 * 3);
    REQUIRE(cli({"export", "--in", (t.dir / "s1").string(), "--out", (t.dir / "e").string()}).code == 0);
    CHECK(lines(t.dir / "e" / "rate_accuracy_rounds.csv") == 1 + 2 * 3 * 3);
    CHECK(lines(t.dir / "e" / "rate_accuracy_curve.csv") == 1 + 2 * 3);
    CHECK(cli({"export", "--in", (t.dir / "nowhere").string(), "--out", (t.dir / "e2").string()}).code == 2);
}

TEST_CASE("verify-theory on the shipped fixtures")
{
    Tmp t("verify");
    const auto cfg = t.write("v.cfg", std::string("[verify]\nfixtures = ") + RDCOMM_FIXTURES + "\nrandom_tables = 5\ndraws = 20000\n");
    const auto r = cli({"verify-theory", "--config", cfg.string(), "--out", t.dir.string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("checks passed") != std::string::npos);
    CHECK(fs::exists(t.dir / "frontier_xor.csv"));
    CHECK(slurp(t.dir / "frontier_xor.csv").rfind("encoder_id,rate_bits,distortion_nats,h_z_given_y,mi_z_xr,bound_bits,pareto_flag\n", 0) == 0);
    const auto report = slurp(t.dir / "verify_report.csv");
    CHECK(report.find(",0\n") == std::string::npos);
}
