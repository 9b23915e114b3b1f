// Copyright (C) 2026 The kvcompact Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvc/cli.hpp"

#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kvc/budget.hpp"
#include "kvc/cache_io.hpp"
#include "kvc/error.hpp"
#include "kvc/metrics.hpp"
#include "kvc/parallel.hpp"
#include "kvc/synth.hpp"

namespace kvc::cli {

namespace {

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) parts.push_back(cur);
    return parts;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        require(used == s.size(), "");
        return v;
    } catch (const std::exception&) {
        throw ValidationError("bad number '" + s + "' in " + what);
    }
}

std::int64_t parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        require(used == s.size(), "");
        return v;
    } catch (const std::exception&) {
        throw ValidationError("bad integer '" + s + "' in " + what);
    }
}

std::vector<double> parse_grid(const std::string& csv) {
    std::vector<double> out;
    for (const auto& p : split(csv, ',')) out.push_back(parse_double(p, "--grid"));
    return out;
}

HeadId parse_head(const std::string& s) {
    const auto parts = split(s, ',');
    require(parts.size() == 2, "--head expects L,H");
    return {static_cast<int>(parse_int(parts[0], "--head")), static_cast<int>(parse_int(parts[1], "--head"))};
}

std::vector<Span> parse_spans(const std::string& csv) {
    std::vector<Span> out;
    for (const auto& p : split(csv, ',')) {
        const auto ends = split(p, ':');
        require(ends.size() == 2, "--spans expects start:end pairs separated by commas");
        out.emplace_back(parse_int(ends[0], "--spans"), parse_int(ends[1], "--spans"));
    }
    return out;
}

const std::map<std::string, Method> kMethods = {
    {"omp", Method::omp},
    {"omp-fast", Method::omp_fast},
    {"hak", Method::highest_attention},
    {"hak-fast", Method::highest_attention},
    {"selection-only", Method::selection_only},
};

struct CompactFlags {
    std::string method = "omp";
    double ratio = 0.1;
    std::string budget = "uniform";
    std::optional<int> omp_k;
    std::optional<int> omp_tau;
    std::string agg = "rms";
    std::string dtype = "f32";

    CompactionConfig config(const Manifest& m) const {
        auto cfg = CompactionConfig::preset(kMethods.at(method));
        cfg.ratio = ratio;
        if (omp_k) cfg.omp_k = *omp_k;
        if (omp_tau) cfg.omp_tau = *omp_tau;
        cfg.agg = aggregation_from(agg);
        cfg.dtype_out = dtype == "bf16" ? DType::bf16 : DType::f32;
        cfg.scale = m.logit_scale;
        cfg.validate();
        return cfg;
    }

    std::optional<BudgetSchedule> schedule() const {
        if (budget == "uniform") return std::nullopt;
        return schedule_from_json(read_text(budget));
    }

    void annotate(Manifest& m) const {
        m.attributes["compaction.method"] = method;
        m.attributes["compaction.ratio"] = nlohmann::json(ratio).dump();
        m.attributes["compaction.budget"] = budget == "uniform" ? "uniform" : "schedule";
        m.attributes["compaction.agg"] = agg;
    }
};

void add_method_flags(CLI::App* sc, CompactFlags& f) {
    sc->add_option("--method", f.method, "omp | omp-fast | hak | hak-fast | selection-only")
        ->check(CLI::IsMember({"omp", "omp-fast", "hak", "hak-fast", "selection-only"}));
    sc->add_option("--omp-k", f.omp_k, "Keys added per OMP step")->check(CLI::PositiveNumber);
    sc->add_option("--omp-refit", f.omp_tau, "Refit interval tau")->check(CLI::PositiveNumber);
    sc->add_option("--agg", f.agg, "Score aggregation for top-k methods")->check(CLI::IsMember({"mean", "rms", "max"}));
}

void add_compact_flags(CLI::App* sc, CompactFlags& f) {
    add_method_flags(sc, f);
    sc->add_option("--ratio", f.ratio, "Fraction of tokens to keep, in (0, 1]")->check(CLI::Range(0.0, 1.0));
    sc->add_option("--budget", f.budget, "uniform, or a schedule JSON file");
    sc->add_option("--dtype", f.dtype, "Storage dtype of the output")->check(CLI::IsMember({"f32", "bf16"}));
}

void add_threads(CLI::App* sc, int& threads) {
    sc->add_option("--threads", threads, "Worker threads (default: $KVC_THREADS, else 1)")->check(CLI::NonNegativeNumber);
}

QueryMap load_queries(const std::optional<std::string>& path, const Container& fallback) {
    QueryMap q = path ? queries_from_container(read_container(*path)) : queries_from_container(fallback);
    require(!q.empty(), "no query tensors found");
    return q;
}

std::string inspect_json(const Container& c) {
    nlohmann::json heads = nlohmann::json::array();
    std::set<HeadId> seen;
    for (const auto& e : c.manifest.tensors) {
        int layer = -1, head = -1;
        if (std::sscanf(e.name.c_str(), "layer%d.head%d.", &layer, &head) == 2) seen.insert({layer, head});
    }
    for (const auto& id : seen) {
        nlohmann::json tensors = nlohmann::json::object();
        for (const auto& e : c.manifest.tensors)
            if (e.name.rfind(id.prefix() + ".", 0) == 0)
                tensors[e.name.substr(id.prefix().size() + 1)] = {{"dtype", dtype_name(e.dtype)}, {"shape", e.shape}};
        heads.push_back({{"layer", id.layer}, {"head", id.head}, {"tensors", tensors}});
    }
    auto manifest = nlohmann::json::parse(to_canonical_json(c.manifest));
    manifest.erase("tensors");
    return nlohmann::json{{"manifest", manifest}, {"heads", heads}, {"violations", validate_manifest(c.manifest)}}.dump(2);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"KV-cache compaction by attention matching", "kvc"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    int threads = 0;

    // compact
    std::string c_input, c_output;
    std::optional<std::string> c_queries;
    CompactFlags c_flags;
    auto* compact = app.add_subcommand("compact", "Compact every head of a cache container");
    compact->add_option("--input", c_input, "Cache container (K/V or Ck/Cv/beta)")->required();
    compact->add_option("--queries", c_queries, "Reference query container (default: Q tensors of --input)");
    compact->add_option("--output", c_output, "Compacted container")->required();
    add_compact_flags(compact, c_flags);
    add_threads(compact, threads);

    // budget
    std::string b_curves, b_output;
    double b_r0 = 0.05;
    std::optional<double> b_eta;
    auto* budget = app.add_subcommand("budget", "Allocate per-head budgets from sensitivity curves");
    budget->add_option("--curves", b_curves, "Curves JSON")->required();
    budget->add_option("--r0", b_r0, "Reference ratio the shares are expressed at")->check(CLI::Range(0.0, 1.0));
    budget->add_option("--eta", b_eta, "Share moved per swap (default 0.0125 / (H * r0))")->check(CLI::PositiveNumber);
    budget->add_option("--output", b_output, "Schedule JSON")->required();
    add_threads(budget, threads);

    // sensitivity
    std::string s_input, s_heldout, s_output;
    std::optional<std::string> s_queries;
    std::vector<std::string> s_heads;
    std::string s_grid = "0.01,0.02,0.05,0.1,0.2,0.5,1";
    double s_baseline = 0.05;
    CompactFlags s_flags;
    auto* sens = app.add_subcommand("sensitivity", "Measure per-head loss curves over compaction ratios");
    sens->add_option("--input", s_input, "Cache container")->required();
    sens->add_option("--queries", s_queries, "Reference query container (default: Q tensors of --input)");
    sens->add_option("--heldout", s_heldout, "Held-out query container")->required();
    sens->add_option("--head", s_heads, "Head as L,H; repeatable (default: every head)");
    sens->add_option("--grid", s_grid, "Comma-separated ratios");
    sens->add_option("--baseline", s_baseline, "Ratio used for every other head")->check(CLI::Range(0.0, 1.0));
    sens->add_option("--output", s_output, "Curves JSON")->required();
    add_method_flags(sens, s_flags);
    add_threads(sens, threads);

    // eval
    std::string e_original, e_compact;
    std::optional<std::string> e_queries, e_output;
    auto* eval = app.add_subcommand("eval", "Report reconstruction errors of a compacted container");
    eval->add_option("--original", e_original, "Uncompacted cache container")->required();
    eval->add_option("--compact", e_compact, "Compacted container")->required();
    eval->add_option("--queries", e_queries, "Test query container (default: Q tensors of --original)");
    eval->add_option("--output", e_output, "Report file (.csv for CSV, otherwise JSON); stdout when omitted");
    add_threads(eval, threads);

    // inspect
    std::string i_path;
    auto* inspect = app.add_subcommand("inspect", "Print a container's manifest summary and any violations");
    inspect->add_option("file", i_path, "Container")->required();

    // synth
    SynthOptions so;
    std::string y_output;
    std::optional<std::string> y_heldout;
    auto* synth_cmd = app.add_subcommand("synth", "Write a deterministic synthetic cache with queries");
    synth_cmd->add_option("--seed", so.seed, "Seed");
    synth_cmd->add_option("--layers", so.layers, "Layers")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--heads", so.heads, "KV heads per layer")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--length", so.length, "Tokens per head (T)")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--dim", so.dim, "Head dimension (d)")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--n-queries", so.n_queries, "Reference queries per head")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--n-heldout", so.n_heldout, "Held-out queries per head")->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--clusters", so.clusters, "Distinct key rows (0 for i.i.d. keys)")
        ->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--output", y_output, "Cache + reference query container")->required();
    synth_cmd->add_option("--heldout-output", y_heldout, "Held-out query container");

    // chunk-compact
    std::string k_input, k_output, k_spans, k_mode = "kv";
    std::string k_queries;
    std::optional<std::string> k_local;
    std::int64_t k_prefix = 0, k_suffix = 0;
    CompactFlags k_flags;
    auto* chunk = app.add_subcommand("chunk-compact", "Compact a cache chunk by chunk and merge the results");
    chunk->add_option("--input", k_input, "Full cache container (global positions)")->required();
    chunk->add_option("--spans", k_spans, "Row spans start:end, comma-separated")->required();
    chunk->add_option("--queries", k_queries, "One query container, or one per chunk comma-separated")->required();
    chunk->add_option("--mode", k_mode, "kv | text")->check(CLI::IsMember({"kv", "text"}));
    chunk->add_option("--local", k_local, "text mode: per-chunk containers prefilled in isolation, comma-separated");
    chunk->add_option("--prefix", k_prefix, "Rows kept verbatim at the start")->check(CLI::NonNegativeNumber);
    chunk->add_option("--suffix", k_suffix, "Rows kept verbatim at the end")->check(CLI::NonNegativeNumber);
    chunk->add_option("--output", k_output, "Compacted container")->required();
    add_compact_flags(chunk, k_flags);
    add_threads(chunk, threads);

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        const int workers = resolve_threads(threads);

        if (*compact) {
            const auto input = read_container(c_input);
            const auto cfg = c_flags.config(input.manifest);
            const auto schedule = c_flags.schedule();
            const auto cache = cache_from_container(input);
            const auto queries = load_queries(c_queries, input);
            const auto result = compact_cache(cache, queries, schedule, cfg, workers);
            auto container = compact_to_container(CacheMeta::from(input.manifest), result);
            c_flags.annotate(container.manifest);
            save(container, c_output);
        } else if (*budget) {
            const auto curves = curves_from_json(read_text(b_curves));
            require(!curves.empty(), "curves file holds no curves");
            const double eta = b_eta ? *b_eta : default_eta(curves.size(), b_r0);
            require(b_r0 > 0.0, "--r0 must be positive");
            AllocationTrace trace;
            const auto schedule = allocate_budgets(curves, eta, b_r0, &trace);
            write_text(b_output, schedule_to_json(schedule));
            err << "budget: " << trace.swaps << " swaps, loss " << trace.initial_loss << " -> " << trace.final_loss
                << '\n';
        } else if (*sens) {
            const auto input = read_container(s_input);
            CompactionConfig cfg = s_flags.config(input.manifest);
            const auto grid = parse_grid(s_grid);
            require(s_baseline > 0.0, "--baseline must be positive");
            const auto cache = cache_from_container(input);
            const auto queries = load_queries(s_queries, input);
            const auto heldout = load_queries(s_heldout, input);
            std::vector<HeadId> heads;
            for (const auto& h : s_heads) heads.push_back(parse_head(h));
            if (heads.empty())
                for (const auto& [id, h] : cache) heads.push_back(id);
            for (const auto& id : heads) require(cache.count(id) > 0, "unknown head " + id.prefix());
            std::vector<SensitivityCurve> curves;
            for (const auto& id : heads)
                curves.push_back(measure_sensitivity(cache, queries, heldout, id, grid, s_baseline, cfg, workers));
            write_text(s_output, curves_to_json(curves));
        } else if (*eval) {
            const auto original = read_container(e_original);
            const auto compacted = read_container(e_compact);
            const auto cache = cache_from_container(original);
            const auto comp = compact_from_container(compacted);
            const auto queries = load_queries(e_queries, original);
            const double scale =
                original.manifest.logit_scale > 0.0 ? original.manifest.logit_scale : default_scale(original.manifest.head_dim);
            std::vector<HeadId> ids;
            for (const auto& [id, h] : cache) {
                require(comp.count(id) > 0, "compacted container is missing head " + id.prefix());
                require(queries.count(id) > 0, "no test queries for head " + id.prefix());
                ids.push_back(id);
            }
            std::vector<ReconReport> rows(ids.size());
            parallel_for(ids.size(), workers, [&](std::size_t i) {
                rows[i] = evaluate_head(cache.at(ids[i]), comp.at(ids[i]), queries.at(ids[i]).queries, scale);
            });
            std::map<HeadId, ReconReport> reports;
            for (std::size_t i = 0; i < ids.size(); ++i) reports[ids[i]] = rows[i];
            const bool csv = e_output && e_output->size() >= 4 && e_output->substr(e_output->size() - 4) == ".csv";
            const auto text = csv ? reports_to_csv(reports) : reports_to_json(reports) + "\n";
            if (e_output)
                write_text(*e_output, text);
            else
                out << text;
        } else if (*inspect) {
            const auto c = read_container(i_path);
            out << inspect_json(c) << '\n';
            if (!validate_manifest(c.manifest).empty()) return kExitValidation;
        } else if (*synth_cmd) {
            if (so.n_heldout > 0) require(y_heldout.has_value(), "--n-heldout needs --heldout-output");
            if (y_heldout) require(so.n_heldout > 0, "--heldout-output needs --n-heldout > 0");
            const auto data = synth(so);
            auto c = cache_to_container(data.meta, data.cache, &data.queries);
            if (so.clusters > 0) c.manifest.attributes["synth.clusters"] = std::to_string(so.clusters);
            c.manifest.attributes["synth.seed"] = std::to_string(so.seed);
            save(c, y_output);
            if (y_heldout) save(queries_to_container(data.meta, data.heldout), *y_heldout);
        } else if (*chunk) {
            const auto input = read_container(k_input);
            const auto cfg = k_flags.config(input.manifest);
            const auto schedule = k_flags.schedule();
            ChunkPlan plan;
            plan.spans = parse_spans(k_spans);
            plan.fixed_prefix_len = k_prefix;
            plan.fixed_suffix_len = k_suffix;
            const auto query_files = split(k_queries, ',');
            require(query_files.size() == 1 || query_files.size() == plan.spans.size(),
                    "--queries needs one file or one per span");
            if (k_mode == "text")
                require(k_local.has_value(), "--mode text needs --local");
            else
                require(!k_local.has_value(), "--local only applies to --mode text");
            std::vector<std::string> local_files;
            if (k_local) {
                local_files = split(*k_local, ',');
                require(local_files.size() == plan.spans.size(), "--local needs one file per span");
            }

            const auto cache = cache_from_container(input);
            std::vector<QueryMap> chunk_queries;
            for (std::size_t c = 0; c < plan.spans.size(); ++c)
                chunk_queries.push_back(
                    queries_from_container(read_container(query_files[query_files.size() == 1 ? 0 : c])));
            CompactMap result;
            if (k_mode == "kv") {
                result = compact_chunked(cache, plan, chunk_queries, schedule, cfg, workers);
            } else {
                std::vector<CacheMap> locals;
                for (const auto& f : local_files) locals.push_back(cache_from_container(read_container(f)));
                result = compact_chunked_text(cache, plan, locals, chunk_queries, schedule, cfg, workers);
            }
            auto container = compact_to_container(CacheMeta::from(input.manifest), result);
            k_flags.annotate(container.manifest);
            container.manifest.attributes["compaction.chunk_mode"] = k_mode;
            container.manifest.chunk_spans = plan.spans;
            save(container, k_output);
        }
        return kExitOk;
    } catch (const IoError& e) {
        err << "kvc: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        err << "kvc: " << e.what() << '\n';
        return kExitValidation;
    }
}

}  // namespace kvc::cli
