#include "rdcomm/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <tuple>

#include "CLI11.hpp"
#include "json.hpp"
#include "rdcomm/bayes_risk.hpp"
#include "rdcomm/infotheory.hpp"
#include "rdcomm/rd_oracle.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace rdcomm
{

namespace
{

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) parts.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) parts.emplace_back();
    return parts;
}

struct Entry
{
    std::string key;  // section.name
    std::string value;
    int line = 0;

    [[noreturn]] void bad(const std::string& why = "bad value") const
    {
        throw UsageError("config: " + why + " for " + key + " at line " + std::to_string(line) + ": '" + value + "'");
    }

    template <typename T>
    T integer(std::string_view text) const
    {
        T x{};
        const auto t = trim(text);
        const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
        if (t.empty() || ec != std::errc() || p != t.data() + t.size()) bad();
        return x;
    }

    template <typename T>
    T integer() const { return integer<T>(value); }

    double real(std::string_view text) const
    {
        const auto t = trim(text);
        std::size_t used = 0;
        double x = 0;
        try {
            x = std::stod(t, &used);
        } catch (const std::exception&) {
            bad();
        }
        if (used != t.size()) bad();
        return x;
    }

    double real() const { return real(value); }

    bool boolean() const
    {
        if (value == "true" || value == "1") return true;
        if (value == "false" || value == "0") return false;
        bad();
    }

    std::vector<double> reals() const
    {
        std::vector<double> xs;
        for (const auto& p : split(value, ',')) xs.push_back(real(p));
        if (xs.empty()) bad("empty list");
        return xs;
    }

    std::vector<std::uint64_t> seeds() const
    {
        std::vector<std::uint64_t> xs;
        for (const auto& p : split(value, ',')) {
            const auto dots = p.find("..");
            if (dots == std::string::npos) {
                xs.push_back(integer<std::uint64_t>(p));
                continue;
            }
            const auto a = integer<std::uint64_t>(p.substr(0, dots)), b = integer<std::uint64_t>(p.substr(dots + 2));
            if (b < a || b - a > 1000000) bad("bad range");
            for (auto s = a; s <= b; ++s) xs.push_back(s);
        }
        if (xs.empty()) bad("empty list");
        return xs;
    }

    std::vector<Fov> fovs() const
    {
        std::vector<Fov> out;
        for (const auto& item : split(value, ';')) {
            std::istringstream in(item);
            std::string kind;
            in >> kind;
            std::vector<double> v;
            for (std::string tok; in >> tok;) v.push_back(real(tok));
            if (kind == "rect" && v.size() == 4) {
                for (double x : v)
                    if (x != std::floor(x)) bad("rect corners must be integers");
                out.push_back(Fov::rect(static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]), static_cast<int>(v[3])));
            } else if (kind == "sector" && v.size() == 5) {
                out.push_back(Fov::sector(v[0], v[1], v[2], v[3], v[4]));
            } else {
                bad("expected 'rect u0 v0 u1 v1' or 'sector cu cv radius theta0 theta1'");
            }
        }
        return out;
    }
};

fs::path resolve_input(const Entry& e, const fs::path& base)
{
    fs::path p(e.value);
    if (p.is_relative() && !base.empty()) p = base / p;
    if (!fs::exists(p)) e.bad("path does not exist");
    return p;
}

void apply(RunConfig& cfg, const Entry& e, const fs::path& base)
{
    auto& w = cfg.train.world;
    auto& t = cfg.train;
    const auto& k = e.key;
    if (k == "world.h") w.h = e.integer<int>();
    else if (k == "world.w") w.w = e.integer<int>();
    else if (k == "world.classes") w.classes = e.integer<int>();
    else if (k == "world.agents") w.n_agents = e.integer<int>();
    else if (k == "world.noise") w.noise = e.reals();
    else if (k == "world.density") w.density = e.real();
    else if (k == "world.obj_min") w.obj_min = e.integer<int>();
    else if (k == "world.obj_max") w.obj_max = e.integer<int>();
    else if (k == "world.fov") w.fovs = e.fovs();
    else if (k == "world.seed") t.seed = e.integer<std::uint64_t>();
    else if (k == "train.worlds") t.n_worlds = e.integer<int>();
    else if (k == "train.tau_c_grid") t.tau_c_grid = e.reals();
    else if (k == "codebook.n_base") t.codebook.n_base = e.integer<int>();
    else if (k == "codebook.n_res") t.codebook.n_res = e.integer<int>();
    else if (k == "codebook.iters") t.codebook.iters = e.integer<int>();
    else if (k == "codebook.max_points") t.codebook.max_points = e.integer<int>();
    else if (k == "discriminator.hidden") t.discriminator.hidden = e.integer<int>();
    else if (k == "discriminator.steps") t.discriminator.steps = e.integer<int>();
    else if (k == "discriminator.lr") t.discriminator.lr = e.real();
    else if (k == "discriminator.max_pairs") t.discriminator.max_pairs = e.integer<int>();
    else if (k == "sweep.tau_c") cfg.sweep.tau_c = e.reals();
    else if (k == "sweep.tau_mi") {
        cfg.tau_mi_tokens = split(e.value, ',');
        for (const auto& tok : cfg.tau_mi_tokens) {
            if (tok == "inf" || tok == "+inf" || tok == "-inf") continue;
            const auto num = !tok.empty() && tok[0] == 'q' ? tok.substr(1) : tok;
            const double x = e.real(num);
            if (tok[0] == 'q' && (x < 0 || x > 1)) e.bad("quantile outside [0, 1]");
        }
    }
    else if (k == "sweep.seeds") cfg.sweep.seeds = e.seeds();
    else if (k == "sweep.coder") {
        try {
            cfg.sweep.coder = coder_variant_from_string(e.value);
        } catch (const InvalidArgument&) {
            e.bad();
        }
    }
    else if (k == "sweep.selector") {
        try {
            cfg.sweep.selector = selector_from_string(e.value);
        } catch (const InvalidArgument&) {
            e.bad();
        }
    }
    else if (k == "verify.fixtures") cfg.verify.fixtures = resolve_input(e, base);
    else if (k == "verify.random_tables") cfg.verify.random_tables = e.integer<int>();
    else if (k == "verify.draws") cfg.verify.draws = e.integer<std::size_t>();
    else if (k == "output.model") cfg.model = resolve_input(e, base);
    else if (k == "output.bitstreams") cfg.bitstreams = e.boolean();
    else throw UsageError("config: unknown key " + k + " at line " + std::to_string(e.line));
}

void validate(const RunConfig& cfg)
{
    const auto fail = [](const std::string& key, const std::string& why) { throw UsageError("config: " + key + ": " + why); };
    const auto& w = cfg.world();
    if (w.h < 1 || w.h > 0xffff) fail("world.h", "must lie in [1, 65535]");
    if (w.w < 1 || w.w > 0xffff) fail("world.w", "must lie in [1, 65535]");
    if (w.classes < 2) fail("world.classes", "must be at least 2");
    if (w.n_agents < 2 || w.n_agents > 5) fail("world.agents", "must lie in [2, 5]");
    if (w.noise.size() != 1 && static_cast<int>(w.noise.size()) != w.classes) fail("world.noise", "needs one value or one per class");
    for (double e : w.noise)
        if (!(e >= 0.0 && e < 0.5)) fail("world.noise", "flip probability must lie in [0, 0.5)");
    if (!(w.density >= 0.0 && w.density < 1.0)) fail("world.density", "must lie in [0, 1)");
    if (w.obj_min < 1) fail("world.obj_min", "must be at least 1");
    if (w.obj_max < w.obj_min) fail("world.obj_max", "must be at least obj_min");
    if (!w.fovs.empty() && static_cast<int>(w.fovs.size()) != w.n_agents) fail("world.fov", "needs one field of view per agent");
    try {
        w.validate();
    } catch (const InvalidArgument& ex) {
        fail("world.fov", ex.what());
    }
    const auto& t = cfg.train;
    if (t.n_worlds < 1) fail("train.worlds", "must be at least 1");
    for (double x : t.tau_c_grid)
        if (!std::isfinite(x)) fail("train.tau_c_grid", "must be finite");
    if (t.codebook.n_base < 1) fail("codebook.n_base", "must be at least 1");
    if (t.codebook.n_res < t.codebook.n_base) fail("codebook.n_res", "must be at least n_base");
    if (t.codebook.iters < 1) fail("codebook.iters", "must be at least 1");
    if (t.codebook.max_points < 0) fail("codebook.max_points", "must be nonnegative");
    if (t.discriminator.hidden < 1) fail("discriminator.hidden", "must be at least 1");
    if (t.discriminator.steps < 0) fail("discriminator.steps", "must be nonnegative");
    if (!(t.discriminator.lr > 0) || !std::isfinite(t.discriminator.lr)) fail("discriminator.lr", "must be positive");
    if (t.discriminator.max_pairs < 2) fail("discriminator.max_pairs", "must be at least 2");
    for (double x : cfg.sweep.tau_c)
        if (!std::isfinite(x)) fail("sweep.tau_c", "must be finite");
    if (cfg.verify.random_tables < 0) fail("verify.random_tables", "must be nonnegative");
    if (cfg.verify.draws < 2) fail("verify.draws", "must be at least 2");
}

std::string hex64(std::uint64_t x)
{
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << x;
    return s.str();
}

std::string join(const std::vector<double>& xs)
{
    std::ostringstream s;
    s << std::setprecision(17);
    for (std::size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
    return s.str();
}

} // namespace

void RunConfig::set_seed(std::uint64_t s) { train.seed = s; }

std::string RunConfig::canonical() const
{
    const auto& w = train.world;
    std::ostringstream s;
    s << std::setprecision(17);
    s << "[world]\nh = " << w.h << "\nw = " << w.w << "\nclasses = " << w.classes << "\nagents = " << w.n_agents
      << "\nnoise = " << join(w.noise) << "\ndensity = " << w.density << "\nobj_min = " << w.obj_min
      << "\nobj_max = " << w.obj_max << "\nseed = " << train.seed << "\nfov =";
    for (std::size_t i = 0; i < w.fovs.size(); ++i) {
        const auto& f = w.fovs[i];
        s << (i ? " ;" : "");
        if (f.kind == Fov::Kind::Rect)
            s << " rect " << f.u0 << ' ' << f.v0 << ' ' << f.u1 << ' ' << f.v1;
        else
            s << " sector " << f.cu << ' ' << f.cv << ' ' << f.radius << ' ' << f.theta0 << ' ' << f.theta1;
    }
    s << "\n[train]\nworlds = " << train.n_worlds << "\ntau_c_grid = " << join(train.tau_c_grid);
    s << "\n[codebook]\nn_base = " << train.codebook.n_base << "\nn_res = " << train.codebook.n_res
      << "\niters = " << train.codebook.iters << "\nmax_points = " << train.codebook.max_points;
    s << "\n[discriminator]\nhidden = " << train.discriminator.hidden << "\nsteps = " << train.discriminator.steps
      << "\nlr = " << train.discriminator.lr << "\nmax_pairs = " << train.discriminator.max_pairs;
    s << "\n[sweep]\ntau_c = " << join(sweep.tau_c) << "\ntau_mi = ";
    for (std::size_t i = 0; i < tau_mi_tokens.size(); ++i) s << (i ? "," : "") << tau_mi_tokens[i];
    s << "\nseeds = ";
    for (std::size_t i = 0; i < sweep.seeds.size(); ++i) s << (i ? "," : "") << sweep.seeds[i];
    s << "\ncoder = " << to_string(sweep.coder) << "\nselector = " << to_string(sweep.selector);
    // Input paths are not part of the canonical form.
    s << "\n[verify]\nrandom_tables = " << verify.random_tables << "\ndraws = " << verify.draws;
    s << "\n[output]\nbitstreams = " << (bitstreams ? "true" : "false") << "\n";
    return s.str();
}

RunConfig parse_config(std::istream& in, const fs::path& base)
{
    static const std::vector<std::string> sections{"world", "train", "codebook", "discriminator", "sweep", "verify", "output"};
    RunConfig cfg;
    std::string section, raw;
    std::map<std::string, int> seen;
    for (int line = 1; std::getline(in, raw); ++line) {
        const auto hash = raw.find('#');
        const auto text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (text.empty()) continue;
        if (text.front() == '[') {
            if (text.back() != ']') throw UsageError("config: malformed section header at line " + std::to_string(line));
            section = trim(text.substr(1, text.size() - 2));
            if (std::find(sections.begin(), sections.end(), section) == sections.end())
                throw UsageError("config: unknown section [" + section + "] at line " + std::to_string(line));
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw UsageError("config: expected 'key = value' at line " + std::to_string(line));
        if (section.empty()) throw UsageError("config: key outside a section at line " + std::to_string(line));
        Entry e{section + "." + trim(text.substr(0, eq)), trim(text.substr(eq + 1)), line};
        if (seen.count(e.key)) throw UsageError("config: duplicate key " + e.key + " at line " + std::to_string(line));
        seen[e.key] = line;
        apply(cfg, e, base);
    }
    validate(cfg);
    return cfg;
}

RunConfig load_config(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw UsageError("config: cannot open " + path.string());
    return parse_config(in, path.parent_path());
}

std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace
{

std::vector<std::pair<std::string, std::string>> model_files(const Model& m)
{
    std::ostringstream cb, d;
    write_codebook(cb, m.codebook);
    write_discriminator(d, m.discriminator);
    json meta;
    meta["format"] = 1;
    meta["tau_c_draws"] = m.tau_c_draws;
    meta["score_quantiles"] = m.score_quantiles;
    meta["loss_history"] = m.loss_history;
    return {{ModelFiles::codebook, cb.str()}, {ModelFiles::discriminator, d.str()}, {ModelFiles::meta, meta.dump(1) + "\n"}};
}

void write_bytes(const fs::path& p, std::string_view bytes)
{
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

std::string read_bytes(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) throw UsageError("cannot open " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

/// Output directory that remembers what it wrote, for the manifest.
class Outputs
{
public:
    explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    void put(const std::string& name, std::string_view bytes)
    {
        write_bytes(dir_ / name, bytes);
        files_[name] = hex64(fnv1a64(bytes));
    }

    void manifest(const std::string& command, std::uint64_t config_hash, std::optional<std::uint64_t> seed)
    {
        json m;
        m["artifact"] = "rdcomm";
        m["version"] = std::string(kVersion);
        m["command"] = command;
        m["config_hash"] = hex64(config_hash);
        m["seed"] = seed ? json(*seed) : json(nullptr);
        m["formats"] = {{"bitstream", 1}, {"codebook", 1}, {"discriminator", 1}, {"grid", 1}, {"joint_table", 1}};
        m["files"] = files_;
        write_bytes(dir_ / "manifest.json", m.dump(2) + "\n");
    }

    [[nodiscard]] const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    std::map<std::string, std::string> files_;
};

std::string grid_text(const LabelGrid& g)
{
    std::ostringstream s;
    write_grid(s, g);
    return s.str();
}

int cmd_gen_world(const RunConfig& cfg, Outputs& out, std::ostream& log)
{
    auto wc = cfg.world();
    wc.seed = cfg.seed();
    const auto world = generate(wc);
    out.put("truth.grid", grid_text(world.truth));
    for (std::size_t a = 0; a < world.obs.size(); ++a) {
        out.put("obs_" + std::to_string(a) + ".grid", grid_text(world.obs[a]));
        out.put("fov_" + std::to_string(a) + ".grid", grid_text(world.fov[a].cast<int>()));
    }
    log << "gen-world: " << wc.h << "x" << wc.w << ", " << wc.n_agents << " agents, seed " << wc.seed << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, Outputs& out, std::ostream& log)
{
    const auto m = train_all(cfg.train);
    for (const auto& [name, bytes] : model_files(m)) out.put(name, bytes);
    log << "train: " << m.codebook.base.size() << "+" << m.codebook.res.size() << " codewords, final loss "
        << (m.loss_history.empty() ? 0.0 : m.loss_history.back()) << "\n";
    return 0;
}

int cmd_sweep(const RunConfig& cfg, Outputs& out, int jobs, std::ostream& log)
{
    Model m;
    if (cfg.model.empty()) {
        m = train_all(cfg.train);
        for (const auto& [name, bytes] : model_files(m)) out.put(name, bytes);
    } else {
        m = load_model(cfg.model);
    }
    SweepConfig sc = cfg.sweep;
    for (auto& s : sc.seeds) s += cfg.seed();
    sc.tau_mi.clear();
    for (const auto& tok : cfg.tau_mi_tokens) sc.tau_mi.push_back(resolve_tau_mi(tok, m));
    sc.keep_bitstreams = cfg.bitstreams;
    const auto res = run_sweep(cfg.world(), m, sc, jobs);

    std::ostringstream rounds, summary;
    write_rounds_csv(rounds, res.rounds, cfg.world().classes);
    write_summary_csv(summary, res.points, sc.coder, sc.selector);
    out.put("rounds.csv", rounds.str());
    out.put("summary.csv", summary.str());
    for (std::size_t j = 0; j < res.rounds.size(); ++j)
        for (std::size_t k = 0; k < res.rounds[j].bitstreams.size(); ++k) {
            std::ostringstream name;
            name << "bitstreams/round_" << std::setw(4) << std::setfill('0') << j << "_msg_" << k << ".rdcm";
            const auto& b = res.rounds[j].bitstreams[k];
            out.put(name.str(), std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
        }
    log << "sweep: " << res.rounds.size() << " rounds, " << res.points.size() << " points\n";
    return 0;
}

std::string label(double x)
{
    std::ostringstream s;
    s << x;
    return s.str();
}

struct Check
{
    std::string name, subject;
    double value = 0, limit = 0;  // passes when value <= limit

    [[nodiscard]] bool pass() const { return std::isfinite(value) && value <= limit; }
};

void theory_checks(const JointTable& t, const std::string& subject, unsigned jobs, std::vector<Check>& checks,
                   std::vector<RDPoint>* frontier)
{
    const double lhs = conditional_mi(t, "Y", "X_s", {"X_r"}).value;
    const double rhs = entropy(t, "X_s").value - conditional_entropy(t, "X_s", {"Y"}).value -
                       interaction_information(t, "Y", "X_s", "X_r").value;
    checks.push_back({"decomposition_identity", subject, std::abs(lhs - rhs), 1e-10});

    const auto xs = t.axis_size("X_s");
    const auto z = std::min<std::size_t>(xs, 4);
    const auto pts = enumerate_frontier(t, z, jobs);
    double violation = -INFINITY;
    for (const auto& p : pts) violation = std::max(violation, p.bound_bits - p.rate_bits);
    checks.push_back({"bound_soundness", subject, violation, 1e-9});

    double markov = 0;
    for (std::uint64_t id = 0; id < pts.size(); ++id) {
        const auto r = markov_premise(compose(t, EncoderSpec::from_id(id, xs, z)));
        markov = std::max({markov, std::abs(r.mi_z_xr_given_xs), std::abs(r.mi_z_y_given_xs)});
    }
    checks.push_back({"markov_premise", subject, markov, 1e-10});

    double rise = 0;
    for (int i = 1; i <= 40; ++i)
        rise = std::max(rise, theoretical_bound(t, 0.05 * i) - theoretical_bound(t, 0.05 * (i - 1)));
    checks.push_back({"bound_monotone", subject, rise, 0.0});

    if (frontier) *frontier = pts;
}

int cmd_verify_theory(const RunConfig& cfg, Outputs& out, int jobs, std::ostream& log)
{
    const auto& dir = cfg.verify.fixtures;
    if (!fs::is_directory(dir)) throw UsageError("verify.fixtures: not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".jt") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw UsageError("verify.fixtures: no .jt files in " + dir.string());

    const auto uj = static_cast<unsigned>(jobs);
    std::vector<Check> checks;
    for (const auto& f : files) {
        std::ifstream in(f);
        const auto t = JointTable::read_text(in);
        const auto stem = f.stem().string();
        std::vector<RDPoint> pts;
        theory_checks(t, stem, uj, checks, &pts);
        std::ostringstream csv;
        write_frontier_csv(csv, pts);
        out.put("frontier_" + stem + ".csv", csv.str());
    }

    std::mt19937_64 sizes(cfg.seed());
    std::uniform_int_distribution<std::size_t> dim(2, 4);
    std::vector<Check> random_checks;
    for (int i = 0; i < cfg.verify.random_tables; ++i) {
        const auto t = JointTable::random({{"Y", dim(sizes)}, {"X_s", dim(sizes)}, {"X_r", dim(sizes)}}, cfg.seed() + 1000 + static_cast<std::uint64_t>(i));
        theory_checks(t, "random", uj, random_checks, nullptr);
    }
    for (const auto& name : {"decomposition_identity", "bound_soundness", "markov_premise", "bound_monotone"}) {
        Check worst{name, "random_" + std::to_string(cfg.verify.random_tables), -INFINITY, 0};
        for (const auto& c : random_checks)
            if (c.name == name) {
                worst.limit = c.limit;
                worst.value = std::max(worst.value, c.value);
            }
        if (cfg.verify.random_tables > 0) checks.push_back(worst);
    }

    for (const auto& [ny, nn, nr] : {std::tuple{2, 2, 2}, std::tuple{2, 2, 3}, std::tuple{3, 1, 2}}) {
        const auto src = constructed_source(ny, nn, nr, cfg.seed());
        const auto rep = check_conditions(src, y_component_encoder(ny, nn));
        const auto subject = "constructed_" + std::to_string(ny) + "x" + std::to_string(nn) + "x" + std::to_string(nr);
        checks.push_back({"tightness_gap", subject, std::abs(rep.gap_to_bound), 1e-9});
        checks.push_back({"tightness_h_z_given_y", subject, rep.h_z_given_y, 1e-9});
        checks.push_back({"tightness_mi_z_xr", subject, rep.mi_z_xr, 1e-9});
    }

    std::mt19937_64 rng(cfg.seed());
    const auto draws = cfg.verify.draws;
    for (const auto& f : files) {
        std::ifstream in(f);
        const auto t = JointTable::read_text(in);
        const auto mc = mc_cross_entropy(t, "Y", {"X_s", "X_r"}, draws, rng);
        const double exact = bayes_risk_ce(t, "Y", {"X_s", "X_r"});
        checks.push_back({"risk_ce_mc", f.stem().string(), std::abs(mc.mean - exact), 5 * mc.std_error + 1e-12});
    }
    for (double sigma : {0.5, 2.0}) {
        const auto mc = mc_l1_gaussian(sigma, draws, rng);
        checks.push_back({"risk_l1_gaussian_mc", "sigma=" + label(sigma), std::abs(mc.mean - bayes_risk_l1_gaussian(sigma)),
                          5 * mc.std_error});
    }
    for (double b : {0.5, 2.0}) {
        const auto mc = mc_l1_laplace(b, draws, rng);
        checks.push_back({"risk_l1_laplace_mc", "b=" + label(b), std::abs(mc.mean - bayes_risk_l1_laplace(b)), 5 * mc.std_error});
        checks.push_back({"risk_laplace_entropy_form", "b=" + label(b),
                          std::abs(laplace_entropy_form(1.0 + std::log(2.0 * b)) - b), 1e-12});
    }

    std::ostringstream report;
    report << std::setprecision(12) << "check,subject,value,limit,margin,pass\n";
    int failed = 0;
    for (const auto& c : checks) {
        report << c.name << ',' << c.subject << ',' << c.value << ',' << c.limit << ',' << c.limit - c.value << ','
               << (c.pass() ? 1 : 0) << '\n';
        failed += c.pass() ? 0 : 1;
        if (!c.pass()) log << "FAIL " << c.name << ' ' << c.subject << " value=" << c.value << " limit=" << c.limit << "\n";
    }
    out.put("verify_report.csv", report.str());
    log << "verify-theory: " << checks.size() - static_cast<std::size_t>(failed) << "/" << checks.size() << " checks passed\n";
    return failed ? 1 : 0;
}

struct Csv
{
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t col(const std::string& name) const
    {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw FormatError("csv: missing column " + name);
        return static_cast<std::size_t>(it - header.begin());
    }
};

Csv read_csv(const fs::path& p)
{
    std::istringstream in(read_bytes(p));
    Csv c;
    std::string line;
    if (!std::getline(in, line)) throw FormatError("csv: empty file " + p.string());
    c.header = split(line, ',');
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        c.rows.push_back(split(line, ','));
        if (c.rows.back().size() != c.header.size()) throw FormatError("csv: ragged row in " + p.string());
    }
    return c;
}

int cmd_export(const fs::path& in_dir, Outputs& out, std::ostream& log)
{
    const auto summary = read_csv(in_dir / "summary.csv");
    const auto rounds = read_csv(in_dir / "rounds.csv");

    std::vector<std::size_t> order(summary.rows.size());
    std::iota(order.begin(), order.end(), 0);
    const auto bpp = summary.col("bpp_mean");
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::stod(summary.rows[a][bpp]) < std::stod(summary.rows[b][bpp]); });
    const std::vector<std::string> curve_cols{"tau_c", "tau_mi", "coder", "selector", "bpp_mean", "bpp_std", "bpp_no_mask_mean",
                                              "mean_iou_mean", "mean_iou_std", "abstract_fraction_mean", "pareto_flag"};
    std::ostringstream curve;
    for (std::size_t i = 0; i < curve_cols.size(); ++i) curve << (i ? "," : "") << curve_cols[i];
    curve << '\n';
    for (auto r : order) {
        for (std::size_t i = 0; i < curve_cols.size(); ++i) curve << (i ? "," : "") << summary.rows[r][summary.col(curve_cols[i])];
        curve << '\n';
    }

    std::ostringstream per_round;
    per_round << std::setprecision(12) << "seed,tau_c,tau_mi,coder,selector,bpp,mean_iou,abstract_fraction\n";
    const auto total = rounds.col("total_bits"), abstract = rounds.col("abstract_bits");
    for (const auto& row : rounds.rows) {
        for (const auto* name : {"seed", "tau_c", "tau_mi", "coder", "selector", "bpp", "mean_iou"}) per_round << row[rounds.col(name)] << ',';
        const double tb = std::stod(row[total]);
        per_round << (tb > 0 ? std::stod(row[abstract]) / tb : 0.0) << '\n';
    }
    out.put("rate_accuracy_curve.csv", curve.str());
    out.put("rate_accuracy_rounds.csv", per_round.str());
    log << "export: " << summary.rows.size() << " points, " << rounds.rows.size() << " rounds\n";
    return 0;
}

std::string one_line(std::string s)
{
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

} // namespace

void save_model(const fs::path& dir, const Model& m)
{
    fs::create_directories(dir);
    for (const auto& [name, bytes] : model_files(m)) write_bytes(dir / name, bytes);
}

Model load_model(const fs::path& dir)
{
    Model m;
    {
        std::istringstream in(read_bytes(dir / ModelFiles::codebook));
        m.codebook = read_codebook(in);
    }
    {
        std::istringstream in(read_bytes(dir / ModelFiles::discriminator));
        m.discriminator = read_discriminator(in);
    }
    json meta;
    try {
        meta = json::parse(read_bytes(dir / ModelFiles::meta));
        if (meta.at("format").get<int>() != 1) throw FormatError("model.json: unsupported format");
        m.tau_c_draws = meta.at("tau_c_draws").get<std::vector<double>>();
        m.score_quantiles = meta.at("score_quantiles").get<std::vector<double>>();
        m.loss_history = meta.at("loss_history").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("model.json: ") + e.what());
    }
    return m;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Pragmatic rate-distortion collaboration toolkit", "rdcomm"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    std::string config_path, out_dir, in_dir;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    const auto common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("--config", config_path, "config file ([section] key = value)");
        if (needs_config) c->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_option("--seed", seed, "run seed, overrides [world] seed");
        sub->add_option("--jobs", jobs, "worker threads")->check(CLI::Range(1, 1024));
    };
    auto* gen = app.add_subcommand("gen-world", "generate a world and write grid snapshots");
    auto* train = app.add_subcommand("train", "train codebooks and the discriminator");
    auto* sweep = app.add_subcommand("sweep", "run a threshold sweep and write CSVs");
    auto* verify = app.add_subcommand("verify-theory", "check the rate-distortion bound and risk formulas");
    auto* exp = app.add_subcommand("export", "write plot-ready curves from sweep results");
    for (auto* s : {gen, train, sweep, verify}) common(s, true);
    exp->add_option("--in", in_dir, "sweep output directory")->required()->check(CLI::ExistingDirectory);
    exp->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "rdcomm: error: usage: " << one_line(e.what()) << "\n";
        return 2;
    }

    try {
        if (exp->parsed()) {
            Outputs o(out_dir);
            const int rc = cmd_export(in_dir, o, out);
            o.manifest("export", fnv1a64(read_bytes(fs::path(in_dir) / "summary.csv") + read_bytes(fs::path(in_dir) / "rounds.csv")),
                       std::nullopt);
            return rc;
        }
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
        if (seed) cfg.set_seed(*seed);
        Outputs o(out_dir);
        int rc = 0;
        std::string name;
        if (gen->parsed()) {
            name = "gen-world";
            rc = cmd_gen_world(cfg, o, out);
        } else if (train->parsed()) {
            name = "train";
            rc = cmd_train(cfg, o, out);
        } else if (sweep->parsed()) {
            name = "sweep";
            rc = cmd_sweep(cfg, o, jobs, out);
        } else {
            name = "verify-theory";
            rc = cmd_verify_theory(cfg, o, jobs, out);
        }
        o.manifest(name, fnv1a64(cfg.canonical()), cfg.seed());
        return rc;
    } catch (const UsageError& e) {
        err << "rdcomm: error: usage: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "rdcomm: error: " << one_line(e.what()) << "\n";
        return 1;
    }
}

} // namespace rdcomm
