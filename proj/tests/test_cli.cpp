#include <sys/wait.h>

#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "manidiff/cli.hpp"

using namespace manidiff;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string out, err;
};

struct CliSandbox {
    fs::path dir;

    CliSandbox() {
        dir = fs::temp_directory_path() / ("manidiff_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~CliSandbox() { std::error_code ec; fs::remove_all(dir, ec); }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    CmdResult run(const std::string& args, const std::string& env = "") const {
        const std::string err_path = path("stderr_capture.txt");
        std::string full = env + (env.empty() ? "" : " ") + MANIDIFF_CLI_BIN + " " + args +
                           " 2>" + err_path;
        FILE* p = popen(full.c_str(), "r");
        REQUIRE(p != nullptr);
        CmdResult r;
        char buf[4096];
        size_t n;
        while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
        int rc = pclose(p);
        r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
        std::ifstream f(err_path, std::ios::binary);
        std::ostringstream es;
        es << f.rdbuf();
        r.err = es.str();
        return r;
    }

    void write_config() const {
        std::ofstream f(path("cfg.json"));
        f << R"({
  "num_samples": 2, "hand_points": 8, "part_points": 16,
  "d_obj": 12, "d_text": 16,
  "joint_latent": 4, "joint_hidden": 16, "joint_blocks": 1,
  "mani_latent": 6, "mani_hidden": 24, "mani_blocks": 1,
  "d_model": 16, "state_dim": 4, "num_blocks": 1,
  "timesteps": 50, "vae_steps": 10, "diffusion_steps": 8,
  "frames": 16, "seed": 5
})";
    }
};

uint64_t hash_of(const std::string& p) { return io::file_hash(p); }

}  // namespace

TEST_CASE("run config parses, rejects unknowns, and round trips") {
    RunConfig def;
    REQUIRE(config_from_json(nlohmann::json::object()).seed == def.seed);
    REQUIRE(config_from_json(nlohmann::json::object()).backbone == def.backbone);

    nlohmann::json j = config_to_json(def);
    RunConfig back = config_from_json(j);
    REQUIRE(config_to_json(back) == j);

    REQUIRE(config_from_json({{"seed", 42}}).seed == 42);
    REQUIRE(config_from_json({{"backbone", "gru"}}).backbone == "gru");
    REQUIRE_THROWS_AS(config_from_json({{"spelling_mistake", 1}}), InvalidConfig);
    REQUIRE_THROWS_AS(config_from_json({{"seed", "not a number"}}), InvalidConfig);
    REQUIRE_THROWS_AS(config_from_json(nlohmann::json::array()), InvalidConfig);

    RunConfig bad = def;
    bad.family = "quadruped";
    REQUIRE_THROWS_AS(bad.validate(), InvalidConfig);
    bad = def;
    bad.backbone = "transformer";
    REQUIRE_THROWS_AS(bad.validate(), InvalidConfig);
    bad = def;
    bad.frames = kMaxFrames + 1;
    REQUIRE_THROWS_AS(bad.validate(), InvalidConfig);
    bad = def;
    bad.lr = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), InvalidConfig);
    bad = def;
    bad.w_mesh = -0.1;
    REQUIRE_THROWS_AS(bad.validate(), InvalidConfig);
}

TEST_CASE("environment variables override file values") {
    std::map<std::string, std::string> env = {{"MANIDIFF_SEED", "77"},
                                              {"MANIDIFF_BACKBONE", "tconv"},
                                              {"MANIDIFF_FRAMES", "12"}};
    auto getter = [&env](const char* k) -> const char* {
        auto it = env.find(k);
        return it == env.end() ? nullptr : it->second.c_str();
    };
    RunConfig cfg;
    apply_env_overrides(cfg, getter);
    REQUIRE(cfg.seed == 77);
    REQUIRE(cfg.backbone == "tconv");
    REQUIRE(cfg.frames == 12);
    REQUIRE(cfg.family == RunConfig{}.family);  // untouched keys keep defaults

    env["MANIDIFF_SEED"] = "12x";
    REQUIRE_THROWS_AS(apply_env_overrides(cfg, getter), InvalidConfig);
}

TEST_CASE("checkpoint metadata carries config and role") {
    RunConfig cfg;
    cfg.mani_latent = 9;
    cfg.backbone = "attention";
    auto [back, role] = parse_checkpoint_meta(checkpoint_meta(cfg, "diffusion"));
    REQUIRE(role == "diffusion");
    REQUIRE(back.mani_latent == 9);
    REQUIRE(back.backbone == "attention");
    REQUIRE_THROWS_AS(parse_checkpoint_meta("not json"), ParseError);
    REQUIRE_THROWS_AS(parse_checkpoint_meta(R"({"seed": 1})"), ParseError);
}

TEST_CASE("cli pipeline runs end to end") {
    CliSandbox sb;
    sb.write_config();
    const std::string cfg = " --config " + sb.path("cfg.json");

    CmdResult r = sb.run("generate" + cfg + " --out " + sb.path("ds.bin"));
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("2 samples") != std::string::npos);
    REQUIRE(fs::exists(sb.path("ds.bin")));

    r = sb.run("train-vae" + cfg + " --data " + sb.path("ds.bin") + " --out " +
               sb.path("vae"));
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("params") != std::string::npos);
    REQUIRE(fs::exists(sb.path("vae.joint")));
    REQUIRE(fs::exists(sb.path("vae.mani")));

    r = sb.run("train-diffusion" + cfg + " --data " + sb.path("ds.bin") + " --vae " +
               sb.path("vae") + " --out " + sb.path("diff.ckpt"));
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(sb.path("diff.ckpt")));

    r = sb.run("sample --model " + sb.path("diff.ckpt") + " --vae " + sb.path("vae") +
               " --data " + sb.path("ds.bin") + " --count 2 --frames 16 --seed 3 --out " +
               sb.path("seq.mdsq"));
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(sb.path("seq_000.mdsq")));
    REQUIRE(fs::exists(sb.path("seq_001.mdsq")));
    MotionSequence s0 = load_sequence(sb.path("seq_000.mdsq"));
    REQUIRE(s0.frames() == 16);

    r = sb.run("evaluate --data " + sb.path("ds.bin") + " --csv " + sb.path("m.csv") + " " +
               sb.path("seq_000.mdsq") + " " + sb.path("seq_001.mdsq"));
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    // the report keeps the table order
    size_t p_ivr = r.out.find("IV_right");
    size_t p_ivl = r.out.find("IV_left");
    size_t p_idr = r.out.find("ID_right");
    size_t p_idl = r.out.find("ID_left");
    size_t p_j = r.out.find("Jerk");
    size_t p_sd = r.out.find("SD");
    size_t p_od = r.out.find("OD");
    REQUIRE(p_ivr != std::string::npos);
    REQUIRE(p_ivr < p_ivl);
    REQUIRE(p_ivl < p_idr);
    REQUIRE(p_idr < p_idl);
    REQUIRE(p_idl < p_j);
    REQUIRE(p_j < p_sd);
    REQUIRE(p_sd < p_od);
    REQUIRE(fs::exists(sb.path("m.csv")));

    r = sb.run("plot --data " + sb.path("ds.bin") + " --seq " + sb.path("seq_000.mdsq") +
               " --out " + sb.path("plots"));
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    for (const char* f : {"gamma.svg", "traj_xy.svg", "traj_xz.svg", "distance.svg"}) {
        REQUIRE(fs::exists(sb.path("plots") + "/" + f));
        std::ifstream svg(sb.path("plots") + "/" + f);
        std::string first_line;
        std::getline(svg, first_line);
        REQUIRE(first_line.find("<svg") != std::string::npos);
    }
}

TEST_CASE("cli rejects bad invocations with typed errors") {
    CliSandbox sb;
    sb.write_config();

    CmdResult r = sb.run("train-vae --data " + sb.path("absent.bin") + " --out " +
                         sb.path("x"));
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.err.find("FileNotFound:") != std::string::npos);

    r = sb.run("generate --config " + sb.path("cfg.json") + " --out " + sb.path("ds.bin"));
    REQUIRE(r.exit_code == 0);

    r = sb.run("train-diffusion --data " + sb.path("ds.bin") + " --vae " +
               sb.path("missing_vae") + " --out " + sb.path("d.ckpt"));
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.err.find("DependencyError:") != std::string::npos);
    REQUIRE(r.err.find("train-vae") != std::string::npos);

    std::ofstream(sb.path("bad.json")) << R"({"no_such_key": 1})";
    r = sb.run("generate --config " + sb.path("bad.json") + " --out " + sb.path("y.bin"));
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.err.find("InvalidConfig: unknown config key: no_such_key") !=
            std::string::npos);

    std::ofstream(sb.path("broken.json")) << "{ not json";
    r = sb.run("generate --config " + sb.path("broken.json") + " --out " + sb.path("y.bin"));
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.err.find("ParseError:") != std::string::npos);

    r = sb.run("");  // no subcommand
    REQUIRE(r.exit_code != 0);

    // a sequence file is not a dataset
    r = sb.run("train-vae --data " + sb.path("cfg.json") + " --out " + sb.path("x"));
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.err.find("ParseError:") != std::string::npos);
}

TEST_CASE("cli sample length and count limits") {
    CliSandbox sb;
    sb.write_config();
    REQUIRE(sb.run("generate --config " + sb.path("cfg.json") + " --out " +
                   sb.path("ds.bin"))
                .exit_code == 0);
    REQUIRE(sb.run("train-vae --config " + sb.path("cfg.json") + " --data " +
                   sb.path("ds.bin") + " --out " + sb.path("vae"))
                .exit_code == 0);
    REQUIRE(sb.run("train-diffusion --config " + sb.path("cfg.json") + " --data " +
                   sb.path("ds.bin") + " --vae " + sb.path("vae") + " --out " +
                   sb.path("diff.ckpt"))
                .exit_code == 0);

    CmdResult r = sb.run("sample --model " + sb.path("diff.ckpt") + " --vae " +
                         sb.path("vae") + " --data " + sb.path("ds.bin") +
                         " --frames 151 --out " + sb.path("s.mdsq"));
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.err.find("InvalidLength:") != std::string::npos);

    r = sb.run("sample --model " + sb.path("diff.ckpt") + " --vae " + sb.path("vae") +
               " --data " + sb.path("ds.bin") + " --index 99 --frames 8 --out " +
               sb.path("s.mdsq"));
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.err.find("InvalidInput:") != std::string::npos);

    r = sb.run("sample --model " + sb.path("diff.ckpt") + " --vae " + sb.path("vae") +
               " --data " + sb.path("ds.bin") + " --frames 8 --out " + sb.path("one.mdsq"));
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(sb.path("one.mdsq")));  // count 1 keeps the exact name

    // a lone sequence cannot be scored
    r = sb.run("evaluate --data " + sb.path("ds.bin") + " " + sb.path("one.mdsq"));
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.err.find("InsufficientSamples:") != std::string::npos);
}

TEST_CASE("cli artifacts are reproducible and seed-driven") {
    CliSandbox sb;
    sb.write_config();
    const std::string cfg = " --config " + sb.path("cfg.json");

    REQUIRE(sb.run("generate" + cfg + " --out " + sb.path("a.bin")).exit_code == 0);
    REQUIRE(sb.run("generate" + cfg + " --out " + sb.path("b.bin")).exit_code == 0);
    REQUIRE(hash_of(sb.path("a.bin")) == hash_of(sb.path("b.bin")));

    REQUIRE(sb.run("generate" + cfg + " --seed 9 --out " + sb.path("c.bin")).exit_code == 0);
    REQUIRE(hash_of(sb.path("a.bin")) != hash_of(sb.path("c.bin")));

    // the environment override is equivalent to the flag
    REQUIRE(sb.run("generate" + cfg + " --out " + sb.path("d.bin"), "MANIDIFF_SEED=9")
                .exit_code == 0);
    REQUIRE(hash_of(sb.path("c.bin")) == hash_of(sb.path("d.bin")));

    REQUIRE(sb.run("train-vae" + cfg + " --data " + sb.path("a.bin") + " --out " +
                   sb.path("v1") + " --steps 6")
                .exit_code == 0);
    REQUIRE(sb.run("train-vae" + cfg + " --data " + sb.path("a.bin") + " --out " +
                   sb.path("v2") + " --steps 6")
                .exit_code == 0);
    REQUIRE(hash_of(sb.path("v1.joint")) == hash_of(sb.path("v2.joint")));
    REQUIRE(hash_of(sb.path("v1.mani")) == hash_of(sb.path("v2.mani")));
}
