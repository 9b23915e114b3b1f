// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "kvc/cache_io.hpp"
#include "kvc/cli.hpp"
#include "kvc/container.hpp"

namespace fs = std::filesystem;
using namespace kvc;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result kvc_run(std::vector<std::string> args) {
    args.insert(args.begin(), "kvc");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path tmp_dir() {
    const char* env = std::getenv("KVC_TEST_TMP");
    fs::path p = env ? fs::path(env) : fs::temp_directory_path() / "kvc_cli_test";
    fs::create_directories(p);
    return p;
}

std::string path(const std::string& name) { return (tmp_dir() / name).string(); }

std::string bytes_of(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

/// Tensor payloads only, so files that differ just in attributes can be compared.
bool same_tensors(const std::string& a, const std::string& b) {
    return read_container(a).tensors == read_container(b).tensors;
}

void make_synth(const std::string& out, const std::string& heldout, int seed = 7) {
    const auto r = kvc_run({"synth", "--seed", std::to_string(seed), "--layers", "2", "--heads", "2", "--length", "48",
                            "--dim", "16", "--n-queries", "64", "--n-heldout", "32", "--output", out,
                            "--heldout-output", heldout});
    REQUIRE(r.code == 0);
}

}  // namespace

TEST_CASE("exit codes") {
    make_synth(path("ex.kvc"), path("ex_held.kvc"));
    CHECK(kvc_run({"--help"}).code == cli::kExitOk);
    CHECK(kvc_run({}).code == cli::kExitValidation);
    CHECK(kvc_run({"frobnicate"}).code == cli::kExitValidation);
    CHECK(kvc_run({"compact", "--input", path("ex.kvc"), "--output", path("x.kvc"), "--ratio", "2"}).code ==
          cli::kExitValidation);
    CHECK(kvc_run({"compact", "--input", path("ex.kvc"), "--output", path("x.kvc"), "--method", "magic"}).code ==
          cli::kExitValidation);
    CHECK(kvc_run({"compact", "--input", path("missing.kvc"), "--output", path("x.kvc")}).code == cli::kExitIo);
    {
        std::ofstream junk(path("junk.kvc"), std::ios::binary);
        junk << "XXXXnot a container";
    }
    CHECK(kvc_run({"inspect", path("junk.kvc")}).code == cli::kExitIo);
    CHECK(kvc_run({"chunk-compact", "--input", path("ex.kvc"), "--spans", "0:20,30:48", "--queries", path("ex.kvc"),
                   "--output", path("x.kvc")})
              .code == cli::kExitValidation);
    CHECK(kvc_run({"sensitivity", "--input", path("ex.kvc"), "--heldout", path("ex_held.kvc"), "--head", "9,9",
                   "--output", path("x.json")})
              .code == cli::kExitValidation);
}

TEST_CASE("synth is bit-identical for a fixed seed") {
    make_synth(path("s1.kvc"), path("s1_held.kvc"), 7);
    make_synth(path("s2.kvc"), path("s2_held.kvc"), 7);
    make_synth(path("s3.kvc"), path("s3_held.kvc"), 8);
    CHECK(bytes_of(path("s1.kvc")) == bytes_of(path("s2.kvc")));
    CHECK(bytes_of(path("s1_held.kvc")) == bytes_of(path("s2_held.kvc")));
    CHECK(bytes_of(path("s1.kvc")) != bytes_of(path("s3.kvc")));
}

TEST_CASE("inspect reports the manifest and heads") {
    make_synth(path("in.kvc"), path("in_held.kvc"));
    const auto r = kvc_run({"inspect", path("in.kvc")});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["manifest"]["head_dim"] == 16);
    CHECK_FALSE(j["manifest"].contains("tensors"));
    CHECK(j["heads"].size() == 4);
    CHECK(j["heads"][0]["tensors"]["K"]["shape"] == nlohmann::json::array({48, 16}));
    CHECK(j["violations"].empty());
}

TEST_CASE("ratio 1.0 with highest attention is an identity") {
    make_synth(path("id.kvc"), path("id_held.kvc"));
    REQUIRE(kvc_run({"compact", "--input", path("id.kvc"), "--output", path("id_out.kvc"), "--ratio", "1.0",
                     "--method", "hak"})
                .code == 0);
    const auto r = kvc_run({"eval", "--original", path("id.kvc"), "--compact", path("id_out.kvc"), "--queries",
                            path("id_held.kvc")});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    REQUIRE(j["heads"].size() == 4);
    for (const auto& h : j["heads"]) {
        CHECK(h["output_err_mean"].get<double>() < 1e-5);
        CHECK(h["mass_relerr_mean"].get<double>() < 1e-5);
    }
    const auto c = read_container(path("id_out.kvc"));
    CHECK(c.manifest.attributes.at("compaction.method") == "hak");
    CHECK(c.manifest.logical_length == 48);
}

TEST_CASE("omp-fast is omp with k = 4 and tau = 2") {
    make_synth(path("of.kvc"), path("of_held.kvc"));
    REQUIRE(kvc_run({"compact", "--input", path("of.kvc"), "--output", path("of_a.kvc"), "--method", "omp-fast",
                     "--ratio", "0.25"})
                .code == 0);
    REQUIRE(kvc_run({"compact", "--input", path("of.kvc"), "--output", path("of_b.kvc"), "--method", "omp",
                     "--omp-k", "4", "--omp-refit", "2", "--ratio", "0.25"})
                .code == 0);
    REQUIRE(kvc_run({"compact", "--input", path("of.kvc"), "--output", path("of_c.kvc"), "--method", "omp",
                     "--ratio", "0.25"})
                .code == 0);
    CHECK(same_tensors(path("of_a.kvc"), path("of_b.kvc")));
    CHECK_FALSE(same_tensors(path("of_a.kvc"), path("of_c.kvc")));
}

TEST_CASE("every subcommand is bit-stable across runs and thread counts") {
    make_synth(path("det.kvc"), path("det_held.kvc"));
    const std::string in = path("det.kvc"), held = path("det_held.kvc");
    for (const char* method : {"omp", "omp-fast", "hak", "selection-only"}) {
        std::vector<std::string> outs;
        for (const char* threads : {"1", "1", "3"}) {
            const auto o = path(std::string("det_") + method + "_" + threads + "_" + std::to_string(outs.size()) + ".kvc");
            REQUIRE(kvc_run({"compact", "--input", in, "--output", o, "--method", method, "--ratio", "0.2",
                             "--threads", threads})
                        .code == 0);
            outs.push_back(bytes_of(o));
        }
        CHECK(outs[0] == outs[1]);
        CHECK(outs[0] == outs[2]);
    }

    std::vector<std::string> curves;
    for (const char* threads : {"1", "1", "4"}) {
        const auto o = path("det_curves_" + std::to_string(curves.size()) + ".json");
        REQUIRE(kvc_run({"sensitivity", "--input", in, "--heldout", held, "--grid", "0.05,0.1,0.5,1", "--baseline",
                         "0.1", "--output", o, "--threads", threads})
                    .code == 0);
        curves.push_back(bytes_of(o));
    }
    CHECK(curves[0] == curves[1]);
    CHECK(curves[0] == curves[2]);

    std::vector<std::string> schedules;
    for (int i = 0; i < 2; ++i) {
        const auto o = path("det_sched_" + std::to_string(i) + ".json");
        REQUIRE(kvc_run({"budget", "--curves", path("det_curves_0.json"), "--r0", "0.1", "--output", o}).code == 0);
        schedules.push_back(bytes_of(o));
    }
    CHECK(schedules[0] == schedules[1]);
    const auto sched = nlohmann::json::parse(schedules[0]);
    double sum = 0.0;
    for (const auto& s : sched["shares"]) sum += s["share"].get<double>();
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

    std::vector<std::string> scheduled;
    for (const char* threads : {"1", "4"}) {
        const auto o = path(std::string("det_sched_out_") + threads + ".kvc");
        REQUIRE(kvc_run({"compact", "--input", in, "--output", o, "--budget", path("det_sched_0.json"), "--ratio",
                         "0.1", "--threads", threads})
                    .code == 0);
        scheduled.push_back(bytes_of(o));
    }
    CHECK(scheduled[0] == scheduled[1]);

    std::vector<std::string> evals;
    for (const char* threads : {"1", "4"}) {
        const auto r = kvc_run({"eval", "--original", in, "--compact", path("det_sched_out_1.kvc"), "--queries", held,
                                "--threads", threads});
        REQUIRE(r.code == 0);
        evals.push_back(r.out);
    }
    CHECK(evals[0] == evals[1]);
    REQUIRE(kvc_run({"eval", "--original", in, "--compact", path("det_sched_out_1.kvc"), "--output",
                     path("det_eval.csv")})
                .code == 0);
    CHECK(bytes_of(path("det_eval.csv")).rfind("layer,head,", 0) == 0);

    std::vector<std::string> chunks;
    for (const char* threads : {"1", "1", "4"}) {
        const auto o = path("det_chunk_" + std::to_string(chunks.size()) + ".kvc");
        REQUIRE(kvc_run({"chunk-compact", "--input", in, "--spans", "2:20,20:44", "--prefix", "2", "--suffix", "4",
                         "--queries", in, "--output", o, "--ratio", "0.25", "--threads", threads})
                    .code == 0);
        chunks.push_back(bytes_of(o));
    }
    CHECK(chunks[0] == chunks[1]);
    CHECK(chunks[0] == chunks[2]);
    const auto merged = read_container(path("det_chunk_0.kvc"));
    REQUIRE(merged.manifest.chunk_spans);
    CHECK(merged.manifest.chunk_spans->size() == 2);
    CHECK(merged.manifest.logical_length == 48);
}

TEST_CASE("single-span chunk-compact matches compact") {
    make_synth(path("one.kvc"), path("one_held.kvc"));
    REQUIRE(kvc_run({"compact", "--input", path("one.kvc"), "--output", path("one_a.kvc"), "--ratio", "0.25"}).code == 0);
    REQUIRE(kvc_run({"chunk-compact", "--input", path("one.kvc"), "--spans", "0:48", "--queries", path("one.kvc"),
                     "--output", path("one_b.kvc"), "--ratio", "0.25"})
                .code == 0);
    CHECK(same_tensors(path("one_a.kvc"), path("one_b.kvc")));
    // text mode with chunks already at their global positions rotates by zero
    REQUIRE(kvc_run({"chunk-compact", "--input", path("one.kvc"), "--spans", "0:48", "--queries", path("one.kvc"),
                     "--mode", "text", "--local", path("one.kvc"), "--output", path("one_c.kvc"), "--ratio", "0.25"})
                .code == 0);
    CHECK(same_tensors(path("one_a.kvc"), path("one_c.kvc")));
}

TEST_CASE("compacted output can be compacted again") {
    make_synth(path("re.kvc"), path("re_held.kvc"));
    REQUIRE(kvc_run({"compact", "--input", path("re.kvc"), "--output", path("re_1.kvc"), "--ratio", "0.5"}).code == 0);
    REQUIRE(kvc_run({"compact", "--input", path("re_1.kvc"), "--queries", path("re.kvc"), "--output", path("re_2.kvc"),
                     "--ratio", "0.5"})
                .code == 0);
    const auto c = compact_from_container(read_container(path("re_2.kvc")));
    for (const auto& [id, h] : c) {
        CHECK(h.size() == 12);
        CHECK(h.logical_length == 48);
    }
}
