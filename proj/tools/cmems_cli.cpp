#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmems/checkpoint.hpp"
#include "cmems/config.hpp"
#include "cmems/datamodel.hpp"
#include "cmems/evalmetrics.hpp"
#include "cmems/npy.hpp"
#include "cmems/plot.hpp"
#include "cmems/synthesis.hpp"
#include "cmems/toybench.hpp"
#include "cmems/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cmems;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string checkpoint;
    std::string network;
    std::optional<std::int64_t> max_iter;
    std::string data;
};

// Run document: TrainConfig keys plus optional "data" and "out_dir".
struct RunDocument {
    TrainConfig cfg;
    std::string data;
    std::string out_dir;
};

RunDocument read_run_document(const std::string& path) {
    RunDocument doc;
    if (path.empty()) return doc;
    std::ifstream is(path);
    if (!is) throw IngestionError("missing or unreadable config: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    const fs::path base = fs::path(path).parent_path();
    if (j.contains("data")) {
        doc.data = (base / j["data"].get<std::string>()).string();
        j.erase("data");
    }
    if (j.contains("out_dir")) {
        doc.out_dir = j["out_dir"].get<std::string>();
        j.erase("out_dir");
    }
    try {
        doc.cfg = j.get<TrainConfig>();
    } catch (const json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    return doc;
}

std::string resolve_out_dir(const Common& c, const std::string& from_config) {
    if (!c.out_dir.empty()) return c.out_dir;
    if (!from_config.empty()) return from_config;
    if (const char* env = std::getenv("CMEMS_OUT_DIR"); env && *env) return env;
    return "cmems_out";
}

TrainConfig resolve_config(const Common& c, RunDocument& doc) {
    TrainConfig cfg = doc.cfg;
    if (c.seed) cfg.seed = *c.seed;
    if (c.max_iter) cfg.max_iter = *c.max_iter;
    if (!c.network.empty()) cfg.eval_network = parse_network_selector(c.network);
    cfg.validate();
    return cfg;
}

void write_snapshot(const fs::path& dir, const TrainConfig& cfg, const std::string& data) {
    fs::create_directories(dir);
    json j = cfg;
    if (!data.empty()) j["data"] = fs::absolute(data).string();
    std::ofstream(dir / "resolved_config.json") << j.dump(2) << "\n";
}

std::string require_data(const Common& c, const RunDocument& doc) {
    const std::string d = !c.data.empty() ? c.data : doc.data;
    if (d.empty()) throw ValidationError("no dataset manifest given (use --data or a \"data\" key in the config)");
    return d;
}

int cmd_toygen(const Common& c) {
    ToySpec spec;
    if (!c.config.empty()) {
        std::ifstream is(c.config);
        if (!is) throw IngestionError("missing or unreadable config: " + c.config);
        spec = json::parse(is).get<ToySpec>();
    }
    if (c.seed) spec.seed = *c.seed;
    const fs::path out = resolve_out_dir(c, "");
    generate_toy(spec, out);
    std::cout << (out / "manifest.json").string() << "\n";
    return 0;
}

int cmd_synthesize(const Common& c) {
    RunDocument doc = read_run_document(c.config);
    const TrainConfig cfg = resolve_config(c, doc);
    SynthesisConfig sc = cfg.synthesis;
    if (c.seed) sc.seed = *c.seed;
    const LoadedData data = load_dataset(require_data(c, doc));
    std::vector<std::string> warnings;
    const SyntheticDataset syn = build_synthetic_dataset(data.exemplar, data.unlabeled, sc, &warnings);
    const fs::path out = resolve_out_dir(c, doc.out_dir);
    fs::create_directories(out);
    json items = json::array();
    for (std::size_t i = 0; i < syn.size(); ++i) {
        char img[32], lab[32];
        std::snprintf(img, sizeof img, "syn_%05zu.npy", i);
        std::snprintf(lab, sizeof lab, "syn_%05zu_label.npy", i);
        save_image(out / img, syn.images[i]);
        save_mask(out / lab, syn.masks[i]);
        items.push_back({{"image", img}, {"label", lab}});
    }
    std::ofstream(out / "synthetic.json") << json{{"items", items}, {"synthesis", sc}, {"warnings", warnings}}.dump(2)
                                          << "\n";
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    std::cout << syn.size() << " synthetic images written to " << out.string() << "\n";
    return 0;
}

int cmd_train(const Common& c) {
    RunDocument doc = read_run_document(c.config);
    const TrainConfig cfg = resolve_config(c, doc);
    const std::string data_path = require_data(c, doc);
    const fs::path out = resolve_out_dir(c, doc.out_dir);
    write_snapshot(out, cfg, data_path);
    const LoadedData data = load_dataset(data_path);
    const TrainData td = make_train_data(data, cfg);
    TrainState state;
    if (!c.checkpoint.empty()) {
        Checkpoint ck = load_checkpoint(c.checkpoint);
        if (ck.config_hash != config_hash(cfg))
            throw ValidationError("checkpoint " + c.checkpoint + " was written with a different config");
        state = std::move(ck.state);
    } else {
        state = init_state(cfg, td.num_classes);
    }
    FitOptions opts;
    opts.out_dir = out;
    opts.on_eval = [](std::int64_t it, double d) { std::cerr << "iter " << it << " val_dsc " << d << "\n"; };
    const std::int64_t every = std::max<std::int64_t>(1, cfg.max_iter / 20);
    opts.on_step = [every](const IterationLog& l) {
        if (l.iter % every == 0) std::cerr << to_json(l).dump() << "\n";
    };
    const FitResult r = fit(td, cfg, std::move(state), opts);
    json summary{{"iterations", r.state.iteration},
                 {"checkpoint", (out / "checkpoint_final.bin").string()},
                 {"metrics_log", (out / "metrics.jsonl").string()}};
    if (r.best_val_dsc) summary["best_val_dsc"] = *r.best_val_dsc, summary["best_iter"] = r.best_iter;
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_evaluate(const Common& c, const std::string& split) {
    if (c.checkpoint.empty()) throw ValidationError("evaluate needs --checkpoint");
    RunDocument doc = read_run_document(c.config);
    const LoadedData data = load_dataset(require_data(c, doc));
    const Checkpoint ck = load_checkpoint(c.checkpoint);
    const NetworkSelector which = c.network.empty() ? doc.cfg.eval_network : parse_network_selector(c.network);
    const auto& vols = split == "val" ? data.val_volumes : data.test_volumes;
    if (vols.empty()) throw ValidationError("manifest has no " + split + " volumes");
    const Report rep = report(evaluate_all(ck.state.nets, vols, which), data.class_names);
    const json j = to_json(rep);
    std::cout << j.dump(2) << "\n";
    std::cerr << format_table(rep);
    if (!c.out_dir.empty()) {
        fs::create_directories(c.out_dir);
        std::ofstream(fs::path(c.out_dir) / "report.json") << j.dump(2) << "\n";
        std::ofstream(fs::path(c.out_dir) / "report.txt") << format_table(rep);
    }
    return 0;
}

std::vector<AblationVariant> variants_for(const std::string& grid) {
    std::vector<AblationVariant> out;
    auto add = [&](const std::vector<AblationVariant>& vs) {
        for (const auto& v : vs) {
            bool seen = false;
            for (const auto& o : out) seen = seen || o.name == v.name;
            if (!seen) out.push_back(v);
        }
    };
    if (grid == "components" || grid == "all") add(component_variants());
    if (grid == "weak-views" || grid == "all") add(weak_view_variants());
    if (grid == "fp-pairing" || grid == "all") add(fp_pairing_variants());
    if (out.empty()) throw ValidationError("--grid must be components, weak-views, fp-pairing or all");
    return out;
}

int cmd_ablate(const Common& c, const std::string& grid, const std::vector<std::uint64_t>& seeds) {
    RunDocument doc = read_run_document(c.config);
    TrainConfig cfg = resolve_config(c, doc);
    const std::string data_path = !c.data.empty() ? c.data : doc.data;
    const LoadedData data = data_path.empty() ? generate_toy_data(ToySpec{}) : load_dataset(data_path);
    if (data.test_volumes.empty()) throw ValidationError("ablation needs test volumes");
    const fs::path out = resolve_out_dir(c, doc.out_dir);
    write_snapshot(out, cfg, data_path);
    const AblationResult r = run_ablation(variants_for(grid), data, cfg, seeds, [](const AblationProgress& p) {
        std::cerr << p.variant << " seed " << p.seed << " dsc " << p.dsc << "\n";
    });
    write_ablation_csv(out / "ablation.csv", r);
    std::ofstream(out / "ablation.json") << to_json(r).dump(2) << "\n";
    std::cout << to_json(r).dump(2) << "\n";
    return 0;
}

int cmd_plot(const Common& c, const std::string& metrics, const std::string& report_path) {
    if (metrics.empty() && report_path.empty()) throw ValidationError("plot needs --metrics and/or --report");
    const fs::path out = resolve_out_dir(c, "");
    fs::create_directories(out);
    if (!metrics.empty()) {
        std::ofstream(out / "loss_curves.svg")
            << render_lines_svg(read_loss_curves(metrics), "Training losses", "iteration", "loss");
    }
    if (!report_path.empty()) {
        std::ifstream is(report_path);
        if (!is) throw IngestionError("missing or unreadable report: " + report_path);
        std::ofstream(out / "dsc_bars.svg") << render_bars_svg(dsc_bars(json::parse(is)), "Test DSC", "DSC");
    }
    std::cout << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-model mutual learning with one exemplar: toy data, synthesis, training, evaluation"};
    app.require_subcommand(1);
    Common c;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", c.config, "JSON config file");
        sub->add_option("--seed", c.seed, "Random seed (overrides config)");
        sub->add_option("--out-dir", c.out_dir, "Output directory (default: $CMEMS_OUT_DIR)");
        sub->add_option("--data", c.data, "Dataset manifest");
    };
    auto* toygen = app.add_subcommand("toygen", "Generate the procedural toy dataset");
    add_common(toygen);
    auto* synth = app.add_subcommand("synthesize", "Build and write the synthetic dataset");
    add_common(synth);
    auto* train = app.add_subcommand("train", "Train both networks");
    add_common(train);
    train->add_option("--checkpoint", c.checkpoint, "Resume from this checkpoint");
    train->add_option("--max-iter", c.max_iter, "Iteration budget (overrides config)");
    train->add_option("--network", c.network, "Network used for validation")->check(CLI::IsMember({"1", "2", "avg"}));
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on test volumes");
    add_common(evaluate);
    std::string split = "test";
    evaluate->add_option("--checkpoint", c.checkpoint, "Checkpoint file")->required();
    evaluate->add_option("--network", c.network, "1, 2 or avg")->check(CLI::IsMember({"1", "2", "avg"}));
    evaluate->add_option("--split", split, "test or val")->check(CLI::IsMember({"test", "val"}));
    auto* ablate = app.add_subcommand("ablate", "Run the component ablation grid");
    add_common(ablate);
    std::string grid = "all";
    std::vector<std::uint64_t> seeds{0, 1, 2};
    ablate->add_option("--max-iter", c.max_iter, "Iteration budget per run");
    ablate->add_option("--grid", grid, "components, weak-views, fp-pairing or all");
    ablate->add_option("--seeds", seeds, "Training seeds")->delimiter(',');
    ablate->add_option("--network", c.network, "1, 2 or avg")->check(CLI::IsMember({"1", "2", "avg"}));
    auto* plot = app.add_subcommand("plot", "Render loss curves and DSC bars as SVG");
    std::string metrics, report_path;
    plot->add_option("--metrics", metrics, "metrics.jsonl from a training run");
    plot->add_option("--report", report_path, "Report JSON from evaluate");
    plot->add_option("--out-dir", c.out_dir, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        if (*toygen) return cmd_toygen(c);
        if (*synth) return cmd_synthesize(c);
        if (*train) return cmd_train(c);
        if (*evaluate) return cmd_evaluate(c, split);
        if (*ablate) return cmd_ablate(c, grid, seeds);
        if (*plot) return cmd_plot(c, metrics, report_path);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IngestionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
