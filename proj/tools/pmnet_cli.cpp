// Command-line front end: generate / train / eval / stream / ribbon.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pmnet/checkpoint.hpp"
#include "pmnet/config.hpp"
#include "pmnet/engine.hpp"
#include "pmnet/errors.hpp"
#include "pmnet/metrics.hpp"
#include "pmnet/ribbon.hpp"
#include "pmnet/synthgen.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_generate(const pmnet::GeneratorParams& gp, const fs::path& out) {
    gp.validate();
    std::vector<pmnet::SyntheticProcedure> procs;
    procs.reserve(gp.n_procedures);
    for (int i = 0; i < gp.n_procedures; ++i)
        procs.push_back(pmnet::generate_procedure(gp, i));
    const auto entries = pmnet::write_dataset(procs, out);
    int n_train = 0, n_val = 0, n_test = 0;
    for (const auto& e : entries)
        (e.split == "train" ? n_train : e.split == "val" ? n_val : n_test) += 1;
    std::printf("wrote %zu procedures to %s (train %d / val %d / test %d)\n", procs.size(),
                out.string().c_str(), n_train, n_val, n_test);
    return 0;
}

int cmd_train(const fs::path& data, const std::string& config_path, const fs::path& out) {
    pmnet::RunConfig cfg =
        config_path.empty() ? pmnet::RunConfig{} : pmnet::load_config(config_path);
    cfg.validate();
    auto train_procs = pmnet::load_split(data, "train");
    auto val_procs = pmnet::load_split(data, "val");
    std::printf("loaded %zu train / %zu val procedures from %s\n", train_procs.size(),
                val_procs.size(), data.string().c_str());
    pmnet::Model<float> model(cfg);
    auto result = pmnet::train_model(model, train_procs, val_procs, out, &std::cout);
    std::printf("best val macro-jaccard %.2f at epoch %d; checkpoint: %s\n",
                result.best_val_jaccard, result.best_epoch, out.string().c_str());
    return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, const std::string& split,
             const std::string& records_path) {
    const auto ck = pmnet::load_checkpoint(ckpt);
    auto model = pmnet::model_from_checkpoint<float>(ck);
    auto procs = pmnet::load_split(data, split);
    if (procs.empty()) throw pmnet::DataFormatError("eval: no procedures in split " + split);
    const auto report = pmnet::evaluate_model(model, procs);
    pmnet::print_metric_table(report, std::cout);
    if (!records_path.empty()) {
        std::ofstream rf(records_path);
        pmnet::write_metric_records(report, rf);
        if (!rf) throw pmnet::DataFormatError("write failed: " + records_path);
    }
    return 0;
}

int cmd_stream(const fs::path& ckpt, const fs::path& data, const std::string& proc_id,
               int truncate, const std::string& trace_path) {
    const auto ck = pmnet::load_checkpoint(ckpt);
    auto model = pmnet::model_from_checkpoint<float>(ck);
    const auto entries = pmnet::read_manifest(data);
    bool found = false;
    for (const auto& e : entries) found = found || e.id == proc_id;
    if (!found) throw pmnet::DataFormatError("stream: procedure not in manifest: " + proc_id);
    const auto proc = pmnet::cache_procedure(pmnet::read_procedure(data, proc_id));
    const auto st = pmnet::stream_procedure(model, proc, truncate);
    std::printf("procedure %s: %zu frames in %.3f s (%.1f fps; encode %.3f s, model %.3f s)\n",
                proc_id.c_str(), st.trace.labels.size(), st.total_seconds, st.fps,
                st.encode_seconds, st.model_seconds);
    if (!trace_path.empty()) {
        pmnet::write_trace_csv(trace_path, st.trace.labels, st.trace.preds);
        std::printf("trace written to %s\n", trace_path.c_str());
    }
    return 0;
}

int cmd_ribbon(const fs::path& trace, const fs::path& out) {
    std::vector<int> labels, preds;
    pmnet::read_trace_csv(trace, labels, preds);
    pmnet::export_ribbon_png(out, labels, preds);
    std::printf("ribbon (%zu frames) written to %s\n", labels.size(), out.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pmnet: streaming temporal phase recognition on synthetic procedures"};
    app.require_subcommand(1);

    // generate
    pmnet::GeneratorParams gp;
    fs::path gen_out;
    auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--n", gp.n_procedures, "number of procedures");
    gen->add_option("--seed", gp.seed, "generator seed");
    gen->add_option("--frames-min", gp.frames_min, "minimum frames per procedure");
    gen->add_option("--frames-mean", gp.frames_mean, "target mean frames");
    gen->add_option("--frames-max", gp.frames_max, "maximum frames per procedure");
    gen->add_option("--image-size", gp.image_size, "square frame size in pixels");
    gen->add_option("--ineffective-fraction", gp.ineffective_fraction,
                    "fraction of procedures with ineffective blocking");
    gen->add_option("--occlusion-fraction", gp.occlusion_fraction,
                    "fraction of frames covered by distractor occlusion bursts");
    gen->add_option("--high-fps", gp.high_rate_fps, "sampling rate in Knotting/Releasing");
    gen->add_option("--low-fps", gp.low_rate_fps, "sampling rate elsewhere");

    // train
    fs::path tr_data, tr_out;
    std::string tr_config;
    auto* tr = app.add_subcommand("train", "train a model and write checkpoints");
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--config", tr_config, "config file (key value per line)");
    tr->add_option("--out", tr_out, "checkpoint output path")->required();

    // eval
    fs::path ev_ckpt, ev_data;
    std::string ev_split = "test", ev_records;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--split", ev_split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--records", ev_records, "write line-delimited metric records here");

    // stream
    fs::path st_ckpt, st_data;
    std::string st_proc, st_trace;
    int st_trunc = -1;
    auto* st = app.add_subcommand("stream", "causal frame-by-frame inference");
    st->add_option("--ckpt", st_ckpt, "checkpoint path")->required();
    st->add_option("--data", st_data, "dataset directory")->required();
    st->add_option("--proc", st_proc, "procedure id")->required();
    st->add_option("--truncate", st_trunc, "stop after this many frames");
    st->add_option("--trace", st_trace, "write per-frame trace CSV here");

    // ribbon
    fs::path rb_trace, rb_out;
    auto* rb = app.add_subcommand("ribbon", "render a trace CSV as a PNG ribbon");
    rb->add_option("--trace", rb_trace, "trace CSV from the stream subcommand")->required();
    rb->add_option("--out", rb_out, "output PNG path")->required();

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_generate(gp, gen_out);
        if (tr->parsed()) return cmd_train(tr_data, tr_config, tr_out);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_split, ev_records);
        if (st->parsed()) return cmd_stream(st_ckpt, st_data, st_proc, st_trunc, st_trace);
        if (rb->parsed()) return cmd_ribbon(rb_trace, rb_out);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad flags are configuration errors
    } catch (const pmnet::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const pmnet::DataFormatError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
